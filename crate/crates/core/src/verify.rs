//! Two-level refinement studies behind `stefan verify`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{
    conservation_residual, energy_eps, identity_residual_k0, sobolev_norms, DerivativeStack,
    Snapshot,
};
use crate::error::{Result, StefanError};
use crate::fields::{Grid, InterfaceField};
use crate::hanzawa::{Cutoff, CutoffProfile};
use crate::oracle::{DecayingPair, ManufacturedForcing};
use crate::scenario::{band_limited, random_bulk, Scenario};
use crate::solver::{NoObserver, Solver, SolverConfig, State, TimeScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identity,
    Mms,
    Conservation,
    Norms,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Identity, Suite::Mms, Suite::Conservation, Suite::Norms];
}

impl FromStr for Suite {
    type Err = StefanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Suite::Identity),
            "mms" => Ok(Suite::Mms),
            "conservation" => Ok(Suite::Conservation),
            "norms" => Ok(Suite::Norms),
            other => Err(StefanError::Config(format!(
                "unknown suite {other:?} (expected identity, mms, conservation or norms)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Identity => "identity",
            Suite::Mms => "mms",
            Suite::Conservation => "conservation",
            Suite::Norms => "norms",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtLeast(f64),
    AtMost(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    pub fn at_least(label: impl Into<String>, value: f64, min: f64) -> Self {
        Self { label: label.into(), value, bound: Bound::AtLeast(min) }
    }

    pub fn at_most(label: impl Into<String>, value: f64, max: f64) -> Self {
        Self { label: label.into(), value, bound: Bound::AtMost(max) }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::AtLeast(min) => self.value >= min,
            Bound::AtMost(max) => self.value <= max,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (op, b) = match self.bound {
            Bound::AtLeast(b) => (">=", b),
            Bound::AtMost(b) => ("<=", b),
        };
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {:.4e} {op} {:.4e}", self.label, self.value, b)
    }
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub suite: Suite,
    /// Human-readable table rows.
    pub table: Vec<String>,
    pub checks: Vec<Check>,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, label: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.label == label)
    }
}

impl fmt::Display for StudyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {}", self.suite)?;
        for row in &self.table {
            writeln!(f, "  {row}")?;
        }
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<StudyReport> {
    match suite {
        Suite::Identity => identity_study(),
        Suite::Mms => mms_study(),
        Suite::Conservation => conservation_study(),
        Suite::Norms => norms_study(seed, 50),
    }
}

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

fn with_grid(base: &SolverConfig, dt: f64, n_x: usize, n_z: usize) -> SolverConfig {
    SolverConfig { dt, n_x, n_z, ..base.clone() }
}

/// Steps `state` to `t_end`, calling `visit` on each new state.
fn march(
    solver: &Solver,
    mut state: State,
    t_end: f64,
    mut visit: impl FnMut(&State, &State) -> Result<()>,
) -> Result<State> {
    let n = ((t_end - state.t) / solver.config().dt).round() as usize;
    for _ in 0..n {
        let next = solver.advance(&state)?;
        visit(&state, &next)?;
        state = next;
    }
    Ok(state)
}

/// Window over which the identity residual is compared across levels.
pub const IDENTITY_WINDOW: (f64, f64) = (0.5, 0.75);

/// Largest identity residual inside [`IDENTITY_WINDOW`] on decay-k1, and
/// the largest cross term seen there.
pub fn identity_window_residual(cfg: &SolverConfig) -> Result<(f64, f64)> {
    let (solver, state) = Scenario::builtin("decay-k1")?.prepare(cfg)?;
    let mut worst = 0.0_f64;
    let mut cross = 0.0_f64;
    let mut window: Vec<Snapshot> = Vec::with_capacity(3);
    let (lo, hi) = IDENTITY_WINDOW;
    let start = (lo - 2.5 * cfg.dt).max(0.0);
    let mut keep = |s: &State| -> Result<()> {
        if s.t < start {
            return Ok(());
        }
        if window.len() == 3 {
            window.remove(0);
        }
        window.push(s.snapshot());
        if window.len() == 3 {
            let mid = window[1].t;
            if mid >= lo - 1e-12 && mid <= hi + 1e-12 {
                let r = identity_residual_k0(&window, cfg.epsilon, solver.cutoff(), solver.grid())?;
                worst = worst.max(r.residual());
                cross = cross.max(r.cross_terms.abs());
            }
        }
        Ok(())
    };
    keep(&state)?;
    march(&solver, state, hi + cfg.dt, |_, s| keep(s))?;
    Ok((worst, cross))
}

pub fn identity_study() -> Result<StudyReport> {
    let base = SolverConfig { epsilon: 1e-4, ..SolverConfig::default() };
    let levels = [with_grid(&base, 1e-3, 64, 65), with_grid(&base, 5e-4, 128, 129)];
    let mut table = vec![format!(
        "decay-k1, eps = {:e}, max residual for t in [{}, {}]",
        base.epsilon, IDENTITY_WINDOW.0, IDENTITY_WINDOW.1
    )];
    let mut res = Vec::new();
    let mut cross = 0.0_f64;
    for cfg in &levels {
        let (r, c) = identity_window_residual(cfg)?;
        cross = cross.max(c);
        table.push(format!("dt = {:.1e}  n_x = {:4}  n_z = {:4}  residual = {r:.4e}", cfg.dt, cfg.n_x, cfg.n_z));
        res.push(r);
    }
    let ratio = res[0] / res[1];
    table.push(format!("ratio = {ratio:.3}  observed order = {:.3}", order(res[0], res[1])));

    let flat = Scenario::builtin("flat")?;
    let cfg = SolverConfig { epsilon: 1e-4, ..flat.solver.clone() };
    let (solver, state) = flat.prepare(&cfg)?;
    let out = solver.run(state, 10.0 * cfg.dt, &mut NoObserver)?;
    let steady = out
        .reports
        .iter()
        .filter_map(|r| r.identity_residual)
        .fold(0.0, f64::max);
    table.push(format!("flat steady state: residual = {steady:.3e}"));
    Ok(StudyReport {
        suite: Suite::Identity,
        table,
        checks: vec![
            Check::at_least("identity refinement ratio", ratio, 1.8),
            Check::at_most("steady-state identity residual", steady, 1e-12),
            Check::at_most("cross terms", cross, 0.0),
        ],
    })
}

/// Sup over time of `max(‖u − u*‖∞, ‖ρ − ρ*‖∞)`, and the `ρ` part alone.
pub fn mms_error(cfg: &SolverConfig, t_end: f64) -> Result<(f64, f64)> {
    let plain = Solver::new(cfg.clone())?;
    let forcing = Arc::new(ManufacturedForcing::new(DecayingPair::default(), cfg.epsilon, *plain.cutoff()));
    let solver = plain.with_forcing(forcing.clone());
    let grid = solver.grid().clone();
    let state = solver.initial_state_at(0.0, forcing.exact_bulk(0.0, &grid), forcing.exact_interface(0.0, &grid))?;
    let mut err = 0.0_f64;
    let mut err_rho = 0.0_f64;
    march(&solver, state, t_end, |_, s| {
        let eu = s.u.sub(&forcing.exact_bulk(s.t, &grid)).max_abs();
        let er = s.rho.sub(&forcing.exact_interface(s.t, &grid)).max_abs();
        err = err.max(eu.max(er));
        err_rho = err_rho.max(er);
        Ok(())
    })?;
    Ok((err, err_rho))
}

pub const MMS_EPSILON: f64 = 1e-2;

pub fn mms_study() -> Result<StudyReport> {
    let base = SolverConfig { epsilon: MMS_EPSILON, ..SolverConfig::default() };
    let mut table = vec![format!("u* = e^-t cos(pi z)(1 + 0.1 cos x), rho* = 0.05 e^-t sin x, eps = {MMS_EPSILON:e}")];
    let mut study = |label: &str, levels: [SolverConfig; 2], t_end: f64| -> Result<(f64, f64)> {
        let mut e = Vec::new();
        for cfg in &levels {
            let (all, rho) = mms_error(cfg, t_end)?;
            table.push(format!(
                "{label}: dt = {:.2e}  n_x = {:3}  n_z = {:3}  error = {all:.4e}  rho error = {rho:.4e}",
                cfg.dt, cfg.n_x, cfg.n_z
            ));
            e.push((all, rho));
        }
        let p = order(e[0].0, e[1].0);
        let p_rho = order(e[0].1, e[1].1);
        table.push(format!("{label}: observed order = {p:.3}  (rho alone {p_rho:.3})"));
        Ok((p, p_rho))
    };
    let cn = SolverConfig { scheme: TimeScheme::CrankNicolson, ..base.clone() };
    let (p_z, _) = study("space", [with_grid(&cn, 1e-3, 32, 33), with_grid(&cn, 1e-3, 32, 65)], 0.2)?;
    let (p_t, _) = study("time", [with_grid(&cn, 0.1, 32, 1025), with_grid(&cn, 0.05, 32, 1025)], 0.4)?;
    let (p_be, _) = study(
        "time, backward Euler",
        [with_grid(&base, 0.01, 32, 1025), with_grid(&base, 0.005, 32, 1025)],
        0.4,
    )?;
    Ok(StudyReport {
        suite: Suite::Mms,
        table,
        checks: vec![
            Check::at_least("temporal order", p_t, 1.0),
            Check::at_least("normal order", p_z, 1.8),
            Check::at_least("backward Euler temporal order", p_be, 0.95),
        ],
    })
}

/// Largest per-step conservation residual from `rho0` with compatible data.
pub fn max_conservation_residual(cfg: &SolverConfig, rho0: impl Fn(f64) -> f64, t_end: f64) -> Result<f64> {
    let solver = Solver::new(cfg.clone())?;
    let rho = InterfaceField::from_fn(solver.grid(), rho0);
    let state = solver.initial_state(solver.compatible_temperature(&rho)?, rho)?;
    let mut worst = 0.0_f64;
    march(&solver, state, t_end, |old, new| {
        let r = conservation_residual(&old.snapshot(), &new.snapshot(), solver.cutoff(), solver.grid());
        worst = worst.max(r);
        Ok(())
    })?;
    Ok(worst)
}

/// Initial interface of the refinement part of the conservation study.
/// `decay-k1` itself conserves exactly by symmetry.
pub fn asymmetric_k1(x: f64) -> f64 {
    1e-3 * (x.sin() + 0.5 * (2.0 * x).cos())
}

pub fn conservation_study() -> Result<StudyReport> {
    let scenario = Scenario::builtin("decay-k1")?;
    let reference = with_grid(&scenario.solver, 1e-3, 64, 65);
    let (solver, state) = scenario.prepare(&reference)?;
    let mut bound = 0.0_f64;
    march(&solver, state, scenario.t_end, |old, new| {
        bound = bound.max(conservation_residual(&old.snapshot(), &new.snapshot(), solver.cutoff(), solver.grid()));
        Ok(())
    })?;
    let mut table = vec![format!(
        "decay-k1, dt = 1e-3, dz = 1/32, t_end = {}: max residual = {bound:.4e}",
        scenario.t_end
    )];
    let t_end = 0.5;
    let coarse = max_conservation_residual(&reference, asymmetric_k1, t_end)?;
    let fine = max_conservation_residual(&with_grid(&reference, 5e-4, 64, 129), asymmetric_k1, t_end)?;
    table.push("rho0 = 1e-3 (sin x + 0.5 cos 2x), t_end = 0.5".into());
    table.push(format!("dt = 1.0e-3  n_z =  65  max residual = {coarse:.4e}"));
    table.push(format!("dt = 5.0e-4  n_z = 129  max residual = {fine:.4e}"));
    let ratio = coarse / fine;
    table.push(format!("ratio = {ratio:.3}  observed order = {:.3}", order(coarse, fine)));
    Ok(StudyReport {
        suite: Suite::Conservation,
        table,
        checks: vec![
            Check::at_most("decay-k1 max conservation residual", bound, 1e-6),
            Check::at_least("conservation refinement ratio", ratio, 1.8),
            Check::at_least("conservation observed order", order(coarse, fine), 1.0),
        ],
    })
}

/// Equivalence constant for weights frozen at `psi`.
pub fn equivalence_constant(psi: &InterfaceField, cutoff: &Cutoff, grid: &Grid) -> f64 {
    let m = cutoff.max_slope();
    let p = psi.max_abs();
    let g = psi.dx(grid, 1).max_abs();
    let a_min = 1.0 / (1.0 + m * p).powi(2);
    let a_max = (1.0 + g * g) / (1.0 - m * p).powi(2);
    let b = (1.0 + g * g).sqrt();
    let lower = a_min.powi(2).min(1.0 / b.powi(3)).min(1.0);
    (1.0 / lower).max(a_max.powi(2)).max(2.0)
}

/// Ratios `E_ε/‖·‖_E` and `D_ε/‖·‖_D` of one random three-state history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSample {
    pub epsilon: f64,
    pub energy_ratio: f64,
    pub dissipation_ratio: f64,
    pub constant: f64,
}

pub fn norm_samples(seed: u64, count: usize) -> Result<Vec<NormSample>> {
    let grid = Grid::new(32, 33)?;
    let cutoff = Cutoff::new(0.25, CutoffProfile::Quintic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1e-2;
    (0..count)
        .map(|n| {
            let epsilon = [0.0, 1e-4, 1e-2][n % 3];
            let psi_amp = rng.gen_range(0.01..0.2);
            let rho = band_limited(&grid, psi_amp, &mut rng);
            let u = random_bulk(&grid, rng.gen_range(0.01..0.2), &mut rng);
            let drho = band_limited(&grid, rng.gen_range(0.001..0.05), &mut rng);
            let du = random_bulk(&grid, rng.gen_range(0.001..0.05), &mut rng);
            let ddrho = band_limited(&grid, 0.01, &mut rng);
            let history: Vec<Snapshot> = (0..3)
                .map(|j| {
                    let s = j as f64 - 2.0;
                    Snapshot {
                        t: s * dt,
                        u: u.add(&du.scale(s * dt)),
                        rho: rho.add(&drho.scale(s * dt)).add(&ddrho.scale(s * s * dt * dt)),
                    }
                })
                .collect();
            let stack = DerivativeStack::from_history(&history, 1, &cutoff, &grid)?;
            let (se, sd) = sobolev_norms(&stack, epsilon);
            let e = energy_eps(&stack, epsilon).complete();
            let d = crate::energy::dissipation_eps(&stack, epsilon).complete();
            match (e, d, se.complete(), sd.complete()) {
                (Some(e), Some(d), Some(se), Some(sd)) => Ok(NormSample {
                    epsilon,
                    energy_ratio: e / se,
                    dissipation_ratio: d / sd,
                    constant: equivalence_constant(stack.psi(), &cutoff, &grid),
                }),
                _ => Err(StefanError::Unavailable("incomplete norm stack".into())),
            }
        })
        .collect()
}

pub fn norms_study(seed: u64, count: usize) -> Result<StudyReport> {
    let samples = norm_samples(seed, count)?;
    // Worst margin: smallest of ratio·C and C/ratio over both ratios; >= 1 iff inside [1/C, C].
    let margin = samples
        .iter()
        .flat_map(|s| {
            [s.energy_ratio, s.dissipation_ratio].map(|r| (r * s.constant).min(s.constant / r))
        })
        .fold(f64::INFINITY, f64::min);
    let lo = |f: fn(&NormSample) -> f64| samples.iter().map(f).fold(f64::INFINITY, f64::min);
    let hi = |f: fn(&NormSample) -> f64| samples.iter().map(f).fold(0.0, f64::max);
    let table = vec![
        format!("{count} seeded samples (seed {seed}), k_diag = 1"),
        format!("E_eps / sobolev_E in [{:.4}, {:.4}]", lo(|s| s.energy_ratio), hi(|s| s.energy_ratio)),
        format!("D_eps / sobolev_D in [{:.4}, {:.4}]", lo(|s| s.dissipation_ratio), hi(|s| s.dissipation_ratio)),
        format!("C in [{:.4}, {:.4}]", lo(|s| s.constant), hi(|s| s.constant)),
    ];
    Ok(StudyReport {
        suite: Suite::Norms,
        table,
        checks: vec![Check::at_least("norm equivalence margin", margin, 1.0)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("energy".parse::<Suite>().is_err());
    }

    #[test]
    fn checks_compare_against_their_bound() {
        assert!(Check::at_least("a", 2.0, 1.8).passed());
        assert!(!Check::at_least("a", 1.7, 1.8).passed());
        assert!(Check::at_most("b", 1e-7, 1e-6).passed());
        assert!(!Check::at_most("b", f64::NAN, 1e-6).passed());
        assert!(Check::at_most("b", 1e-7, 1e-6).to_string().starts_with("PASS"));
    }

    #[test]
    fn flat_interface_has_the_trivial_constant() {
        let g = Grid::new(16, 17).unwrap();
        let c = Cutoff::new(0.25, CutoffProfile::Quintic).unwrap();
        assert_eq!(equivalence_constant(&InterfaceField::zeros(&g), &c, &g), 2.0);
    }

    #[test]
    fn crank_nicolson_converges_at_second_order_in_time() {
        let cfg = |dt| SolverConfig {
            epsilon: MMS_EPSILON,
            scheme: TimeScheme::CrankNicolson,
            ..with_grid(&SolverConfig::default(), dt, 16, 1025)
        };
        let coarse = mms_error(&cfg(0.2), 0.4).unwrap().0;
        let fine = mms_error(&cfg(0.1), 0.4).unwrap().0;
        assert!(order(coarse, fine) > 1.8, "{coarse:e} {fine:e}");
    }

    #[test]
    fn norm_samples_are_seeded() {
        let a = norm_samples(7, 3).unwrap();
        assert_eq!(a, norm_samples(7, 3).unwrap());
        assert_ne!(a, norm_samples(8, 3).unwrap());
        for s in &a {
            assert!(s.energy_ratio > 0.0 && s.dissipation_ratio > 0.0);
        }
    }
}
