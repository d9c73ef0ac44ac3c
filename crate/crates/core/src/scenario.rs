//! Scenario files: initial data, solver settings and sweep axes in TOML.
//!
//! ```toml
//! name = "decay-k1"
//! t_end = 2.0
//! output = "out/decay-k1"          # optional
//!
//! [solver]                          # any SolverConfig field; defaults otherwise
//! epsilon = 0.0
//! dt = 1e-3
//!
//! [initial.interface]
//! kind = "modes"                    # modes | random | file
//! mean = 0.0
//! modes = [{ k = 1, sin = 1e-3 }]
//!
//! [initial.temperature]
//! kind = "compatible"               # compatible | zero | bump | file
//!
//! [sweep]                           # optional
//! epsilon = [1e-2, 1e-4, 0.0]
//! max_jobs = 16
//! ```
//!
//! Unknown keys anywhere are errors.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StefanError};
use crate::fields::{BulkField, Grid, InterfaceField};
use crate::io;
use crate::solver::{Solver, SolverConfig, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub initial: InitialCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub interface: InterfaceInit,
    #[serde(default)]
    pub temperature: TemperatureInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub k: u32,
    #[serde(default)]
    pub sin: f64,
    #[serde(default)]
    pub cos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InterfaceInit {
    Modes {
        #[serde(default)]
        mean: f64,
        modes: Vec<Mode>,
    },
    /// Seeded band-limited data; the `--seed` flag overrides `seed`.
    Random {
        amplitude: f64,
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        seed: u64,
    },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TemperatureInit {
    /// Steady solution with `u = κ(ρ₀)` on `z = 0`.
    Compatible {},
    Zero {},
    /// Compatible plus `amplitude · sin²(πz/2)(1 + cos(x)/2)`, which leaves
    /// the interface value and the wall flux unchanged.
    Bump { amplitude: f64 },
    File { path: PathBuf },
}

impl Default for TemperatureInit {
    fn default() -> Self {
        Self::Compatible {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_x: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_z: Option<Vec<usize>>,
    #[serde(default = "default_max_jobs")]
    pub max_jobs: usize,
}

fn default_max_jobs() -> usize {
    64
}

const BUILTIN: [(&str, &str); 3] = [
    ("flat", include_str!("../scenarios/flat.toml")),
    ("decay-k1", include_str!("../scenarios/decay-k1.toml")),
    ("generic", include_str!("../scenarios/generic.toml")),
];

impl Scenario {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| StefanError::Parse {
            context: context.to_string(),
            message: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut sc = Self::parse(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            sc.resolve_paths(dir);
        }
        Ok(sc)
    }

    /// One of the scenarios shipped with the crate.
    pub fn builtin(name: &str) -> Result<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Self::parse(text, n))
            .unwrap_or_else(|| {
                Err(StefanError::Config(format!(
                    "no built-in scenario {name:?}; available: {}",
                    Self::builtin_names().join(", ")
                )))
            })
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let InterfaceInit::File { path } = &mut self.initial.interface {
            fix(path);
        }
        if let TemperatureInit::File { path } = &mut self.initial.temperature {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StefanError::Config(m));
        if self.name.trim().is_empty() {
            return bad("scenario name is empty".into());
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be finite and >= 0, got {}", self.t_end));
        }
        self.solver.validate()?;
        if let InterfaceInit::Modes { modes, mean } = &self.initial.interface {
            let k_max = self.solver.n_x / 2;
            if !mean.is_finite() {
                return bad("interface mean must be finite".into());
            }
            for m in modes {
                if m.k == 0 || m.k as usize >= k_max {
                    return bad(format!("mode k = {} outside 1..{k_max}", m.k));
                }
            }
        }
        if let Some(sw) = &self.sweep {
            let axes = [
                ("epsilon", sw.epsilon.as_ref().map(Vec::len)),
                ("dt", sw.dt.as_ref().map(Vec::len)),
                ("n_x", sw.n_x.as_ref().map(Vec::len)),
                ("n_z", sw.n_z.as_ref().map(Vec::len)),
            ];
            for (name, len) in axes {
                if len == Some(0) {
                    return bad(format!("sweep axis {name} is empty"));
                }
            }
            let jobs = self.sweep_configs().len();
            if jobs > sw.max_jobs {
                return bad(format!("sweep has {jobs} jobs, above max_jobs = {}", sw.max_jobs));
            }
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, each a complete config.
    pub fn sweep_configs(&self) -> Vec<SolverConfig> {
        let base = &self.solver;
        let Some(sw) = &self.sweep else {
            return vec![base.clone()];
        };
        let eps = sw.epsilon.clone().unwrap_or_else(|| vec![base.epsilon]);
        let dts = sw.dt.clone().unwrap_or_else(|| vec![base.dt]);
        let nxs = sw.n_x.clone().unwrap_or_else(|| vec![base.n_x]);
        let nzs = sw.n_z.clone().unwrap_or_else(|| vec![base.n_z]);
        let mut out = Vec::new();
        for &epsilon in &eps {
            for &dt in &dts {
                for &n_x in &nxs {
                    for &n_z in &nzs {
                        out.push(SolverConfig {
                            epsilon,
                            dt,
                            n_x,
                            n_z,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    /// Replaces the seed of a random interface.
    pub fn with_seed(mut self, new_seed: u64) -> Self {
        if let InterfaceInit::Random { seed, .. } = &mut self.initial.interface {
            *seed = new_seed;
        }
        self
    }

    pub fn initial_interface(&self, grid: &Grid) -> Result<InterfaceField> {
        match &self.initial.interface {
            InterfaceInit::Modes { mean, modes } => Ok(InterfaceField::from_fn(grid, |x| {
                mean + modes
                    .iter()
                    .map(|m| {
                        let k = f64::from(m.k);
                        m.sin * (k * x).sin() + m.cos * (k * x).cos()
                    })
                    .sum::<f64>()
            })),
            InterfaceInit::Random {
                amplitude,
                mean,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(band_limited(grid, *amplitude, &mut rng).map(|v| v + mean))
            }
            InterfaceInit::File { path } => io::read_interface_csv(path, grid),
        }
    }

    /// Solver and initial state for one configuration of this scenario.
    pub fn prepare(&self, cfg: &SolverConfig) -> Result<(Solver, State)> {
        let solver = Solver::new(cfg.clone())?;
        let grid = solver.grid().clone();
        let rho0 = self.initial_interface(&grid)?;
        let u0 = match &self.initial.temperature {
            TemperatureInit::Compatible {} => solver.compatible_temperature(&rho0)?,
            TemperatureInit::Zero {} => BulkField::zeros(&grid),
            TemperatureInit::Bump { amplitude } => solver
                .compatible_temperature(&rho0)?
                .add(&BulkField::from_fn(&grid, |x, z| {
                    amplitude * (0.5 * PI * z).sin().powi(2) * (1.0 + 0.5 * x.cos())
                })),
            TemperatureInit::File { path } => io::read_bulk_csv(path, &grid)?,
        };
        let state = solver.initial_state(u0, rho0)?;
        Ok((solver, state))
    }
}

/// Random interface with modes `1 ≤ k ≤ n_x/3` (the top third of the
/// spectrum zero), coefficients decaying like `1/k²`, scaled to
/// `max|ρ| = amplitude` and mean zero.
pub fn band_limited(grid: &Grid, amplitude: f64, rng: &mut impl Rng) -> InterfaceField {
    let k_max = (grid.n_x() / 3).max(1);
    let coeffs: Vec<(f64, f64, f64)> = (1..=k_max)
        .map(|k| {
            let k = k as f64;
            let s = 1.0 / (k * k);
            (k, s * rng.gen_range(-1.0..1.0), s * rng.gen_range(-1.0..1.0))
        })
        .collect();
    let raw = InterfaceField::from_fn(grid, |x| {
        coeffs.iter().map(|&(k, a, b)| a * (k * x).sin() + b * (k * x).cos()).sum()
    });
    let peak = raw.max_abs();
    if peak == 0.0 {
        return raw;
    }
    raw.scale(amplitude / peak)
}

/// Random smooth temperature: band-limited in x times low cosine modes in z.
pub fn random_bulk(grid: &Grid, amplitude: f64, rng: &mut impl Rng) -> BulkField {
    let mut rows: Vec<(f64, InterfaceField)> = Vec::with_capacity(3);
    for m in 0..3 {
        let shift = rng.gen_range(-0.5..0.5);
        rows.push((f64::from(m), band_limited(grid, 1.0, rng).map(|v| v + shift)));
    }
    let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let zs = grid.normal.nodes();
    let mut values = Vec::with_capacity(grid.n_x() * grid.n_z());
    for z in zs {
        for i in 0..grid.n_x() {
            let v: f64 = rows
                .iter()
                .zip(&weights)
                .map(|((m, f), w)| w * f.values()[i] * (m * PI * z).cos())
                .sum();
            values.push(amplitude * v);
        }
    }
    BulkField::new(grid.n_x(), grid.n_z(), values).expect("shape matches the grid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_parse() {
        for name in Scenario::builtin_names() {
            let sc = Scenario::builtin(name).unwrap();
            assert_eq!(sc.name, name);
        }
        assert!(Scenario::builtin("nope").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let base = include_str!("../scenarios/decay-k1.toml");
        for (from, to) in [
            ("t_end", "t_ned"),
            ("epsilon", "epsilo"),
            ("sin = 1e-3", "sine = 1e-3"),
            ("kind = \"compatible\"", "kind = \"compatible\"\nextra = 1"),
        ] {
            let text = base.replacen(from, to, 1);
            assert!(Scenario::parse(&text, "test").is_err(), "{to}");
        }
    }

    #[test]
    fn sweep_product_and_job_cap() {
        let mut sc = Scenario::builtin("decay-k1").unwrap();
        sc.sweep = Some(SweepAxes {
            epsilon: Some(vec![1e-2, 1e-4, 0.0]),
            dt: Some(vec![1e-3, 5e-4]),
            n_x: None,
            n_z: None,
            max_jobs: 6,
        });
        assert_eq!(sc.sweep_configs().len(), 6);
        sc.validate().unwrap();
        sc.sweep.as_mut().unwrap().max_jobs = 5;
        assert!(sc.validate().is_err());
        sc.sweep.as_mut().unwrap().dt = Some(vec![]);
        assert!(sc.validate().is_err());
    }

    #[test]
    fn band_limited_data_is_seeded_and_bounded() {
        let g = Grid::new(48, 5).unwrap();
        let draw = |seed| band_limited(&g, 0.1, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
        let f = draw(3);
        assert!((f.max_abs() - 0.1).abs() < 1e-15);
        let spec = g.fourier().forward(f.values());
        for (i, c) in spec.iter().enumerate() {
            if g.fourier().wavenumber(i).abs() > 16.0 {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn decay_scenario_builds_a_compatible_state() {
        let sc = Scenario::builtin("decay-k1").unwrap();
        let (solver, st) = sc.prepare(&sc.solver).unwrap();
        let kappa = crate::hanzawa::curvature(&st.rho, solver.grid()).unwrap();
        assert_eq!(st.u.row(solver.grid().center()), kappa.values());
        assert!((st.rho.max_abs() - 1e-3).abs() < 1e-12);
    }
}
