//! Geometry of the flattening change of variables `x_n ↦ x_n + φ(x_n) ρ(x′, t)`.
//!
//! Everything here is pointwise algebra on top of the spectral derivatives of
//! the interface height `ρ`: the cutoff `φ`, the transformed-Laplacian
//! coefficients `a_ρ`, `B_ρ`, `c_ρ = d_ρ + e_ρ`, the area element `⟨ρ⟩`, the
//! mean curvature of the graph and the normal-derivative jump across `z = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Result, StefanError};
use crate::fields::{normal_jump, spectral_tail_fraction, BulkField, Grid, InterfaceField};

/// Spectral-tail threshold above which a field counts as under-resolved.
pub const RESOLUTION_TAIL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffProfile {
    /// `1 − S((|z| − α)/(1 − 2α))` with the quintic smoothstep `S`; C² globally.
    #[default]
    Quintic,
    /// Logistic blend of `e^{-1/s}` bumps; C^∞.
    Mollified,
}

/// Even cutoff equal to 1 on `|z| ≤ α` and 0 on `|z| ≥ 1 − α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    alpha: f64,
    profile: CutoffProfile,
}

impl Cutoff {
    pub fn new(alpha: f64, profile: CutoffProfile) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0 / 3.0) {
            return Err(StefanError::Config(format!(
                "cutoff parameter alpha must lie in (0, 1/3), got {alpha}"
            )));
        }
        Ok(Self { alpha, profile })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn profile(&self) -> CutoffProfile {
        self.profile
    }

    /// `(φ(z), φ′(z), φ″(z))`.
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        let width = 1.0 - 2.0 * self.alpha;
        let s = (z.abs() - self.alpha) / width;
        if s <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        if s >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let (step, d1, d2) = match self.profile {
            CutoffProfile::Quintic => quintic_step(s),
            CutoffProfile::Mollified => mollified_step(s),
        };
        let sign = z.signum();
        (1.0 - step, -sign * d1 / width, -d2 / (width * width))
    }

    /// `sup |φ′|`, sampled densely on the transition layer.
    pub fn max_slope(&self) -> f64 {
        let n = 4000;
        (0..=n)
            .map(|i| self.eval(i as f64 / n as f64).1.abs())
            .fold(0.0, f64::max)
    }

    /// Cutoff values `(φ, φ′, φ″)` on the normal nodes of `grid`.
    pub fn on_grid(&self, grid: &Grid) -> CutoffSamples {
        let mut out = CutoffSamples {
            phi: Vec::with_capacity(grid.n_z()),
            dphi: Vec::with_capacity(grid.n_z()),
            ddphi: Vec::with_capacity(grid.n_z()),
        };
        for z in grid.normal.nodes() {
            let (p, d1, d2) = self.eval(z);
            out.phi.push(p);
            out.dphi.push(d1);
            out.ddphi.push(d2);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CutoffSamples {
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub ddphi: Vec<f64>,
}

fn quintic_step(s: f64) -> (f64, f64, f64) {
    let s2 = s * s;
    let value = s2 * s * (10.0 - 15.0 * s + 6.0 * s2);
    let d1 = 30.0 * s2 * (1.0 - s) * (1.0 - s);
    let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    (value, d1, d2)
}

fn mollified_step(s: f64) -> (f64, f64, f64) {
    // S = σ(g), g = 1/(1 − s) − 1/s.
    let g = 1.0 / (1.0 - s) - 1.0 / s;
    let g1 = 1.0 / (s * s) + 1.0 / ((1.0 - s) * (1.0 - s));
    let g2 = -2.0 / (s * s * s) + 2.0 / ((1.0 - s) * (1.0 - s) * (1.0 - s));
    let e = (-g.abs()).exp();
    let sigma = if g >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    let sig_prime = e / ((1.0 + e) * (1.0 + e));
    let d1 = sig_prime * g1;
    let d2 = sig_prime * ((1.0 - 2.0 * sigma) * g1 * g1 + g2);
    (sigma, d1, d2)
}

/// Coefficient fields of the transformed heat operator
/// `u_t − Δ_{x′}u − a u_nn + B·∇_{x′}u_n + c u_n`.
#[derive(Debug, Clone)]
pub struct TransformCoefficients {
    pub a: BulkField,
    /// One component per tangential dimension.
    pub b: Vec<BulkField>,
    pub c: BulkField,
    /// `⟨ρ⟩ = sqrt(1 + |∇ρ|²)`.
    pub bracket: InterfaceField,
}

/// `min (1 + φ′ρ)` over the grid, with the node where it is attained.
fn transform_floor(rho: &InterfaceField, samples: &CutoffSamples) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for (iz, &dphi) in samples.dphi.iter().enumerate() {
        for (ix, &r) in rho.values().iter().enumerate() {
            let v = 1.0 + dphi * r;
            if v < best.0 {
                best = (v, ix, iz);
            }
        }
    }
    best
}

pub(crate) fn check_nondegenerate(rho: &InterfaceField, samples: &CutoffSamples) -> Result<()> {
    let (value, ix, iz) = transform_floor(rho, samples);
    if value <= 0.0 || !value.is_finite() {
        return Err(StefanError::DegenerateTransform { ix, iz, value });
    }
    Ok(())
}

/// `⟨ρ⟩ = sqrt(1 + ρ_x²)`.
pub fn bracket(rho: &InterfaceField, grid: &Grid) -> InterfaceField {
    rho.dx(grid, 1).map(|g| (1.0 + g * g).sqrt())
}

/// Pointwise `a_ρ`, `B_ρ`, `c_ρ = d_ρ + e_ρ` on the bulk grid.
pub fn coefficients(
    rho: &InterfaceField,
    rho_t: &InterfaceField,
    cutoff: &Cutoff,
    grid: &Grid,
) -> Result<TransformCoefficients> {
    check_finite("interface height", rho.values())?;
    check_finite("interface velocity", rho_t.values())?;
    let samples = cutoff.on_grid(grid);
    check_nondegenerate(rho, &samples)?;
    Ok(coefficients_unchecked(rho, rho_t, &samples, grid))
}

pub(crate) fn coefficients_unchecked(
    rho: &InterfaceField,
    rho_t: &InterfaceField,
    samples: &CutoffSamples,
    grid: &Grid,
) -> TransformCoefficients {
    let (n_x, n_z) = (grid.n_x(), grid.n_z());
    let rx = rho.dx(grid, 1);
    let rxx = rho.dx(grid, 2);
    let mut a = Vec::with_capacity(n_x * n_z);
    let mut b = Vec::with_capacity(n_x * n_z);
    let mut c = Vec::with_capacity(n_x * n_z);
    for j in 0..n_z {
        let (p, dp, ddp) = (samples.phi[j], samples.dphi[j], samples.ddphi[j]);
        for i in 0..n_x {
            let r = rho.values()[i];
            let g = rx.values()[i];
            let den = 1.0 + dp * r;
            let num = 1.0 + p * p * g * g;
            a.push(num / (den * den));
            b.push(2.0 * p * g / den);
            let d = p * rxx.values()[i] / den - 2.0 * p * dp * g * g / (den * den)
                + ddp * r * num / (den * den * den);
            let e = -p * rho_t.values()[i] / den;
            c.push(d + e);
        }
    }
    TransformCoefficients {
        a: BulkField::from_vec(n_x, n_z, a),
        b: vec![BulkField::from_vec(n_x, n_z, b)],
        c: BulkField::from_vec(n_x, n_z, c),
        bracket: rx.map(|g| (1.0 + g * g).sqrt()),
    }
}

/// `a_ψ = (1 + |φ∇ψ|²)/(1 + φ′ψ)²` alone, for the energy weights.
pub(crate) fn a_coefficient(psi: &InterfaceField, samples: &CutoffSamples, grid: &Grid) -> BulkField {
    let (n_x, n_z) = (grid.n_x(), grid.n_z());
    let gx = psi.dx(grid, 1);
    let mut a = Vec::with_capacity(n_x * n_z);
    for j in 0..n_z {
        let (p, dp) = (samples.phi[j], samples.dphi[j]);
        for i in 0..n_x {
            let g = gx.values()[i];
            let den = 1.0 + dp * psi.values()[i];
            a.push((1.0 + p * p * g * g) / (den * den));
        }
    }
    BulkField::from_vec(n_x, n_z, a)
}

/// Exact first derivatives of `a_ρ` in z, x and t.
#[derive(Debug, Clone)]
pub struct CoefficientGradients {
    pub a_n: BulkField,
    pub a_x: BulkField,
    pub a_t: BulkField,
}

pub fn coefficient_gradients(
    rho: &InterfaceField,
    rho_t: &InterfaceField,
    cutoff: &Cutoff,
    grid: &Grid,
) -> Result<CoefficientGradients> {
    let samples = cutoff.on_grid(grid);
    check_nondegenerate(rho, &samples)?;
    let (n_x, n_z) = (grid.n_x(), grid.n_z());
    let rx = rho.dx(grid, 1);
    let rxx = rho.dx(grid, 2);
    let rxt = rho_t.dx(grid, 1);
    let mut a_n = Vec::with_capacity(n_x * n_z);
    let mut a_x = Vec::with_capacity(n_x * n_z);
    let mut a_t = Vec::with_capacity(n_x * n_z);
    for j in 0..n_z {
        let (p, dp, ddp) = (samples.phi[j], samples.dphi[j], samples.ddphi[j]);
        for i in 0..n_x {
            let r = rho.values()[i];
            let g = rx.values()[i];
            let den = 1.0 + dp * r;
            let den2 = den * den;
            let den3 = den2 * den;
            let num = 1.0 + p * p * g * g;
            a_n.push(2.0 * p * dp * g * g / den2 - 2.0 * num * ddp * r / den3);
            a_x.push(2.0 * p * p * g * rxx.values()[i] / den2 - 2.0 * num * dp * g / den3);
            a_t.push(
                2.0 * p * p * g * rxt.values()[i] / den2
                    - 2.0 * num * dp * rho_t.values()[i] / den3,
            );
        }
    }
    Ok(CoefficientGradients {
        a_n: BulkField::from_vec(n_x, n_z, a_n),
        a_x: BulkField::from_vec(n_x, n_z, a_x),
        a_t: BulkField::from_vec(n_x, n_z, a_t),
    })
}

/// Mean curvature `κ = ∇·(∇ρ/⟨ρ⟩)` in divergence form.
///
/// Logs a warning when `ρ` is under-resolved (top third of the spectrum
/// carrying more than [`RESOLUTION_TAIL`] of its energy).
pub fn curvature(rho: &InterfaceField, grid: &Grid) -> Result<InterfaceField> {
    check_finite("interface height", rho.values())?;
    let tail = spectral_tail_fraction(grid, rho.values());
    if tail > RESOLUTION_TAIL {
        log::warn!("curvature of an under-resolved interface (spectral tail fraction {tail:.2e})");
    }
    Ok(curvature_unchecked(rho, grid))
}

pub(crate) fn curvature_unchecked(rho: &InterfaceField, grid: &Grid) -> InterfaceField {
    let rx = rho.dx(grid, 1);
    let flux = rx.map(|g| g / (1.0 + g * g).sqrt());
    flux.dx(grid, 1)
}

/// `Δρ⟨ρ⟩^{-1} − ρ_iρ_jρ_{ij}⟨ρ⟩^{-3}`, the expanded form of the curvature.
pub fn curvature_expanded(rho: &InterfaceField, grid: &Grid) -> InterfaceField {
    let rx = rho.dx(grid, 1);
    let rxx = rho.dx(grid, 2);
    rx.zip_map(&rxx, |g, h| {
        let br = (1.0 + g * g).sqrt();
        h / br - g * g * h / (br * br * br)
    })
}

/// `[u_n]⁻₊ = ∂_n u(0⁻) − ∂_n u(0⁺)` from one-sided second-order stencils.
pub fn jump_un(u: &BulkField, grid: &Grid) -> Result<InterfaceField> {
    if u.n_x() != grid.n_x() || u.n_z() != grid.n_z() {
        return Err(StefanError::GridMismatch("jump_un input".into()));
    }
    check_finite("temperature", u.values())?;
    Ok(InterfaceField::from_vec(normal_jump(grid, u)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cut() -> Cutoff {
        Cutoff::new(0.25, CutoffProfile::Quintic).unwrap()
    }

    #[test]
    fn cutoff_plateaus() {
        let c = cut();
        assert_eq!(c.eval(0.0).0, 1.0);
        assert_eq!(c.eval(0.9).0, 0.0);
        assert_eq!(c.eval(-0.1), (1.0, 0.0, 0.0));
        assert_eq!(c.eval(-0.9), (0.0, 0.0, 0.0));
        assert!(Cutoff::new(0.0, CutoffProfile::Quintic).is_err());
        assert!(Cutoff::new(0.34, CutoffProfile::Quintic).is_err());
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        for profile in [CutoffProfile::Quintic, CutoffProfile::Mollified] {
            let c = Cutoff::new(0.2, profile).unwrap();
            let h = 1e-7;
            for k in 1..60 {
                let z = -1.0 + k as f64 / 30.0;
                let (p, d1, d2) = c.eval(z);
                assert!((0.0..=1.0).contains(&p));
                // Stepping toward the center never decreases φ.
                assert!(c.eval(z - z.signum() * 1e-3).0 - p >= -1e-15);
                let fd1 = (c.eval(z + h).0 - c.eval(z - h).0) / (2.0 * h);
                let fd2 = (c.eval(z + h).1 - c.eval(z - h).1) / (2.0 * h);
                assert_abs_diff_eq!(d1, fd1, epsilon = 1e-6);
                assert_abs_diff_eq!(d2, fd2, epsilon = 1e-4);
                assert_abs_diff_eq!(c.eval(-z).0, p, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn quintic_slope_bound() {
        // max S' = 30/16 at s = 1/2, divided by the layer width 1 - 2α.
        assert_abs_diff_eq!(cut().max_slope(), 1.875 / 0.5, epsilon = 1e-6);
    }

    #[test]
    fn flat_interface_gives_identity_coefficients() {
        let g = Grid::new(16, 17).unwrap();
        let zero = InterfaceField::zeros(&g);
        let k = coefficients(&zero, &zero, &cut(), &g).unwrap();
        assert!(k.a.values().iter().all(|&v| v == 1.0));
        assert!(k.b[0].values().iter().all(|&v| v == 0.0));
        assert!(k.c.values().iter().all(|&v| v == 0.0));
        assert!(k.bracket.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn coefficients_on_plateaus_and_interface() {
        let g = Grid::new(32, 33).unwrap();
        let delta = 0.1;
        let rho = InterfaceField::from_fn(&g, |x| delta * x.sin());
        let rho_t = InterfaceField::zeros(&g);
        let k = coefficients(&rho, &rho_t, &cut(), &g).unwrap();
        for (j, z) in g.normal.nodes().into_iter().enumerate() {
            if z.abs() > 0.75 {
                for i in 0..32 {
                    assert_eq!(k.a.get(i, j), 1.0);
                    assert_eq!(k.b[0].get(i, j), 0.0);
                }
            }
        }
        let c = g.center();
        for (i, x) in g.tangential.nodes().into_iter().enumerate() {
            let expected = 1.0 + delta * delta * x.cos().powi(2);
            assert_abs_diff_eq!(k.a.get(i, c), expected, epsilon = 1e-14);
            assert!(k.bracket.values()[i] >= 1.0);
        }
    }

    #[test]
    fn degenerate_transform_is_reported() {
        let g = Grid::new(16, 33).unwrap();
        let rho = InterfaceField::from_fn(&g, |x| 0.5 * x.cos());
        let zero = InterfaceField::zeros(&g);
        let err = coefficients(&rho, &zero, &cut(), &g).unwrap_err();
        assert!(matches!(err, StefanError::DegenerateTransform { .. }));
    }

    #[test]
    fn a_respects_cutoff_symmetry() {
        let g = Grid::new(16, 33).unwrap();
        let rho = InterfaceField::from_fn(&g, |x| 0.05 * x.sin() + 0.03);
        let zero = InterfaceField::zeros(&g);
        let plus = coefficients(&rho, &zero, &cut(), &g).unwrap();
        let minus = coefficients(&rho.scale(-1.0), &zero, &cut(), &g).unwrap();
        let n = g.n_z() - 1;
        for j in 0..g.n_z() {
            for i in 0..16 {
                assert_abs_diff_eq!(plus.a.get(i, j), minus.a.get(i, n - j), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Grid::new(64, 1601).unwrap();
        let c = cut();
        let rho = InterfaceField::from_fn(&g, |x| 0.1 * x.sin() + 0.05 * (2.0 * x).cos());
        let rho_t = InterfaceField::from_fn(&g, |x| 0.2 * x.cos());
        let grads = coefficient_gradients(&rho, &rho_t, &c, &g).unwrap();
        let k = coefficients(&rho, &rho_t, &c, &g).unwrap();
        let a_z = crate::fields::slab_dz(&k.a, g.dz());
        let a_x = k.a.dx(&g, 1);
        let alpha = c.alpha();
        for j in 1..g.n_z() - 1 {
            // Centered differences are only first order across the C² kinks
            // at the plateau edges.
            let z = g.normal.node(j).abs();
            if (z - alpha).abs() < 1.5 * g.dz() || (z - 1.0 + alpha).abs() < 1.5 * g.dz() {
                continue;
            }
            for i in 0..32 {
                assert_abs_diff_eq!(grads.a_n.get(i, j), a_z.get(i, j), epsilon = 2e-3);
                assert_abs_diff_eq!(grads.a_x.get(i, j), a_x.get(i, j), epsilon = 1e-8);
            }
        }
        let h = 1e-6;
        let later = coefficients(&rho.add(&rho_t.scale(h)), &rho_t, &c, &g).unwrap();
        let earlier = coefficients(&rho.sub(&rho_t.scale(h)), &rho_t, &c, &g).unwrap();
        for j in 0..g.n_z() {
            for i in 0..32 {
                let fd = (later.a.get(i, j) - earlier.a.get(i, j)) / (2.0 * h);
                assert_abs_diff_eq!(grads.a_t.get(i, j), fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn curvature_of_constants_and_shifts() {
        let g = Grid::new(32, 9).unwrap();
        let k = curvature(&InterfaceField::constant(&g, 0.3), &g).unwrap();
        assert!(k.max_abs() < 1e-14);
        let rho = InterfaceField::from_fn(&g, |x| 0.2 * x.sin() + 0.1 * (3.0 * x).cos());
        let k1 = curvature(&rho, &g).unwrap();
        let k2 = curvature(&rho.map(|v| v + 0.7), &g).unwrap();
        assert!(k1.sub(&k2).max_abs() < 1e-13);
        assert!(crate::fields::integrate_torus(&g, k1.values()).abs() < 1e-13);
    }

    #[test]
    fn curvature_forms_agree_and_converge() {
        let rho_fn = |x: f64| 0.3 * (x.sin() + 0.4 * (2.0 * x).cos());
        let mut last = f64::INFINITY;
        for n in [16, 32, 64] {
            let g = Grid::new(n, 9).unwrap();
            let rho = InterfaceField::from_fn(&g, rho_fn);
            let diff = curvature(&rho, &g)
                .unwrap()
                .sub(&curvature_expanded(&rho, &g))
                .max_abs();
            assert!(diff <= last);
            last = diff;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn curvature_of_small_sine_is_nearly_linear() {
        let g = Grid::new(64, 9).unwrap();
        let mut errors = Vec::new();
        for delta in [1e-1, 1e-2] {
            let rho = InterfaceField::from_fn(&g, |x| delta * x.sin());
            let lap = rho.dx(&g, 2);
            errors.push(curvature(&rho, &g).unwrap().sub(&lap).max_abs());
        }
        // O(δ³): a factor 10 in δ gives a factor ~1000.
        let ratio = errors[0] / errors[1];
        assert!((800.0..1200.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn jump_examples() {
        let g = Grid::new(16, 65).unwrap();
        let sq = BulkField::from_fn(&g, |_, z| z * z);
        assert!(jump_un(&sq, &g).unwrap().max_abs() < 1e-13);
        let abs = BulkField::from_fn(&g, |_, z| z.abs());
        for v in jump_un(&abs, &g).unwrap().values() {
            assert_abs_diff_eq!(*v, -2.0, epsilon = 1e-12);
        }
        let cos = BulkField::from_fn(&g, |_, z| (PI * z).cos());
        // The one-sided stencils are exact to O(Δz³) here since f'''(0) = 0.
        assert!(jump_un(&cos, &g).unwrap().max_abs() < 4.0 * g.dz().powi(2));
    }
}
