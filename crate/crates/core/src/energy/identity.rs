//! Residual of the order-0 energy identity on a converged trajectory.
//!
//! With `U = u`, `ω = χ = ψ = ρ`, `G = h = 0` and the sources
//! `f = −B u_xn − c u_n`, `g = ρ_x (⟨ρ⟩^{-1})_x`, the identity reads
//!
//! `d/dt Ē_ε + D_ε = ∫_Ω (P + R) − ∫_T (Q + S + T)`
//!
//! where `Ē_ε = ½∫U² + ∫(U_x² + aU_n²) + ½∫ω_x²⟨ψ⟩^{-1}
//! + ½ε∫(Δω_x)²⟨ψ⟩^{-1} + I_ψ(ω) + εI_ψ(Δω)`.
//!
//! Time derivatives are centered over a three-state window.

use serde::Serialize;

use super::{bulk_dissipation, halves, i_psi, Snapshot};
use crate::error::{Result, StefanError};
use crate::fields::{integrate_slab, integrate_torus, slab_dz, slab_dzz, BulkField, Grid, InterfaceField};
use crate::hanzawa::{curvature_unchecked, jump_un};
use crate::hanzawa::{a_coefficient, coefficient_gradients, coefficients, Cutoff};

/// The pieces of the identity at the center of a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityTerms {
    pub t: f64,
    pub d_energy_dt: f64,
    pub dissipation: f64,
    /// `∫_Ω (P + R)`.
    pub bulk: f64,
    /// `∫_T (Q + S + T)`, including the ε-weighted `B` part.
    pub boundary: f64,
    /// `∫_T (εA(Δω, Δχ) + B-remainder)`, already contained in `boundary`.
    pub b_terms: f64,
    /// Largest cross term carrying a factor `χ − ω`; identically zero.
    pub cross_terms: f64,
    pub floor: f64,
}

impl IdentityTerms {
    fn scale(&self) -> f64 {
        self.d_energy_dt.abs() + self.dissipation.abs() + self.bulk.abs() + self.boundary.abs()
            + self.floor
    }

    /// `|LHS − RHS|` relative to the sum of the magnitudes of the four pieces.
    pub fn residual(&self) -> f64 {
        let lhs = self.d_energy_dt + self.dissipation;
        let rhs = self.bulk - self.boundary;
        (lhs - rhs).abs() / self.scale()
    }

    /// The residual with the ε-weighted `B` part left out.
    pub fn residual_without_b(&self) -> f64 {
        let lhs = self.d_energy_dt + self.dissipation;
        let rhs = self.bulk - (self.boundary - self.b_terms);
        (lhs - rhs).abs() / self.scale()
    }
}

type V = Vec<f64>;

fn mul(a: &[f64], b: &[f64]) -> V {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn lin(terms: &[(f64, &[f64])]) -> V {
    let n = terms[0].1.len();
    (0..n).map(|i| terms.iter().map(|(c, v)| c * v[i]).sum()).collect()
}

struct Boundary<'g> {
    grid: &'g Grid,
}

impl Boundary<'_> {
    fn d(&self, v: &[f64], k: u32) -> V {
        self.grid.fourier().derivative(v, k)
    }
}

fn inv_bracket_powers(grid: &Grid, rho: &[f64]) -> (V, V, V) {
    let g = grid.fourier().derivative(rho, 1);
    let ib: V = g.iter().map(|g| 1.0 / (1.0 + g * g).sqrt()).collect();
    let ib3 = ib.iter().map(|b| b * b * b).collect();
    (g, ib, ib3)
}

/// `Ē_ε` at one state.
fn identity_energy(s: &Snapshot, epsilon: f64, cutoff: &Cutoff, grid: &Grid) -> f64 {
    let a = a_coefficient(&s.rho, &cutoff.on_grid(grid), grid);
    let mut bulk = 0.0;
    for (u, a) in halves(grid, &s.u).iter().zip(&halves(grid, &a)) {
        let ux = u.dx(grid, 1);
        let uz = slab_dz(u, grid.dz());
        let n = u.values().len();
        let dens: V = (0..n)
            .map(|k| {
                0.5 * u.values()[k].powi(2)
                    + ux.values()[k].powi(2)
                    + a.values()[k] * uz.values()[k].powi(2)
            })
            .collect();
        bulk += integrate_slab(grid, &BulkField::from_vec(u.n_x(), u.n_z(), dens), grid.dz());
    }
    let (_, ib, _) = inv_bracket_powers(grid, s.rho.values());
    let w = s.rho.values();
    let f = grid.fourier();
    let wx = f.derivative(w, 1);
    let wxxx = f.derivative(w, 3);
    let mut boundary = 0.5 * integrate_torus(grid, &mul(&mul(&wx, &wx), &ib));
    boundary += i_psi(&s.rho, &s.rho, grid);
    if epsilon != 0.0 {
        boundary += 0.5 * epsilon * integrate_torus(grid, &mul(&mul(&wxxx, &wxxx), &ib));
        boundary += epsilon * i_psi(&s.rho.dx(grid, 2), &s.rho, grid);
    }
    bulk + boundary
}

/// `A(w, c)` with `c = w`, given `w` and `w_t`; the cross terms are returned
/// separately.
#[allow(clippy::too_many_arguments)]
fn a_form(
    b: &Boundary,
    w: &[f64],
    c: &[f64],
    w_t: &[f64],
    psi_x: &[f64],
    psi_xt: &[f64],
    ib: &[f64],
    ib3: &[f64],
    ib_t: &[f64],
    ib3_t: &[f64],
) -> (V, V) {
    let n = w.len();
    let w_xx = b.d(w, 2);
    let w_xt = b.d(w_t, 1);
    let w_xxt = b.d(w_t, 2);
    let w_xxx = b.d(w, 3);
    let lw = w_xx.clone();
    let lc = b.d(c, 2);
    let lwt = w_xxt.clone();
    let ib_x = b.d(ib, 1);
    let p2: V = psi_x.iter().map(|p| p * p).collect();
    let ww_t: V = (0..n).map(|i| p2[i] * w_xt[i] * ib3[i]).collect();
    let ww_xx: V = (0..n).map(|i| p2[i] * w_xx[i] * ib3[i]).collect();
    let ww_t_x = b.d(&ww_t, 1);
    let ww_xx_x = b.d(&ww_xx, 1);
    let mut main = Vec::with_capacity(n);
    let mut cross = Vec::with_capacity(n);
    for i in 0..n {
        cross.push(
            2.0 * lwt[i] * (lc[i] - lw[i]) * ib[i]
                - 2.0 * lwt[i] * p2[i] * (lc[i] - w_xx[i]) * ib3[i],
        );
        main.push(
            -w_xx[i] * w_xx[i] * ib_t[i] + 2.0 * w_xt[i] * w_xx[i] * ib_x[i]
                - 2.0 * w_xt[i] * ib_x[i] * lw[i]
                + 2.0 * w_xx[i] * w_xx[i] * psi_x[i] * psi_xt[i] * ib3[i]
                + (w_xx[i] * psi_x[i]).powi(2) * ib3_t[i]
                - 2.0 * w_xx[i] * (ww_t_x[i] - p2[i] * w_xxt[i] * ib3[i])
                + 2.0 * w_xt[i] * (ww_xx_x[i] - p2[i] * w_xxx[i] * ib3[i]),
        );
    }
    (main, cross)
}

/// Evaluates the identity at the middle state of `window` (three
/// consecutive accepted states, oldest first).
pub fn identity_residual_k0(
    window: &[Snapshot],
    epsilon: f64,
    cutoff: &Cutoff,
    grid: &Grid,
) -> Result<IdentityTerms> {
    evaluate(window, epsilon, cutoff, grid, false)
}

/// With `residual_sources`, `f`, `G` and `h` are the actual residuals of the
/// equations rather than their values on a solution, so the identity holds
/// for arbitrary smooth fields.
fn evaluate(
    window: &[Snapshot],
    epsilon: f64,
    cutoff: &Cutoff,
    grid: &Grid,
    residual_sources: bool,
) -> Result<IdentityTerms> {
    if window.len() != 3 {
        return Err(StefanError::Unavailable(format!(
            "identity window needs 3 states, got {}",
            window.len()
        )));
    }
    let (prev, mid, next) = (&window[0], &window[1], &window[2]);
    let span = next.t - prev.t;
    if span <= 0.0 {
        return Err(StefanError::Config("identity window times not increasing".into()));
    }
    let h = grid.dz();
    let centered = |a: &[f64], b: &[f64]| -> V { a.iter().zip(b).map(|(a, b)| (b - a) / span).collect() };

    let d_energy_dt = (identity_energy(next, epsilon, cutoff, grid)
        - identity_energy(prev, epsilon, cutoff, grid))
        / span;

    // Bulk.
    let rho = &mid.rho;
    let rho_t = InterfaceField::from_vec(centered(prev.rho.values(), next.rho.values()));
    let coeffs = coefficients(rho, &rho_t, cutoff, grid)?;
    let grads = coefficient_gradients(rho, &rho_t, cutoff, grid)?;
    let u_t = BulkField::from_vec(grid.n_x(), grid.n_z(), centered(prev.u.values(), next.u.values()));
    let mut dissipation = bulk_dissipation(grid, &mid.u, &u_t, &coeffs.a, true);
    let mut bulk = 0.0;
    let parts = [
        halves(grid, &mid.u),
        halves(grid, &u_t),
        halves(grid, &coeffs.b[0]),
        halves(grid, &coeffs.c),
        halves(grid, &grads.a_n),
        halves(grid, &grads.a_x),
        halves(grid, &grads.a_t),
    ];
    for k in 0..2 {
        let (u, ut, bb, cc, an, ax, at) = (
            &parts[0][k],
            &parts[1][k],
            &parts[2][k],
            &parts[3][k],
            &parts[4][k],
            &parts[5][k],
            &parts[6][k],
        );
        let ux = u.dx(grid, 1);
        let uxx = u.dx(grid, 2);
        let uz = slab_dz(u, h);
        let uzz = slab_dzz(u, h);
        let uxz = slab_dz(&ux, h);
        let aa = &halves(grid, &coeffs.a)[k];
        let n = u.values().len();
        let dens: V = (0..n)
            .map(|i| {
                let (uv, utv, uzv, uxzv, uxxv) = (
                    u.values()[i],
                    ut.values()[i],
                    uz.values()[i],
                    uxz.values()[i],
                    uxx.values()[i],
                );
                let f = if residual_sources {
                    utv - uxxv - aa.values()[i] * uzz.values()[i]
                } else {
                    -bb.values()[i] * uxzv - cc.values()[i] * uzv
                };
                let p = f * uv - an.values()[i] * uzv * uv;
                let r = f * f + uzv * uzv * at.values()[i]
                    - 2.0 * utv * uzv * an.values()[i]
                    - 2.0 * uxzv * ax.values()[i] * uzv
                    + 2.0 * uxxv * uzv * an.values()[i];
                p + r
            })
            .collect();
        bulk += integrate_slab(grid, &BulkField::from_vec(u.n_x(), u.n_z(), dens), h);
    }

    // Boundary.
    let b = Boundary { grid };
    let w = rho.values().to_vec();
    let chi = w.clone();
    let w_t = rho_t.values().to_vec();
    let (psi_x, ib, ib3) = inv_bracket_powers(grid, &w);
    let (_, ib_p, ib3_p) = inv_bracket_powers(grid, prev.rho.values());
    let (_, ib_n, ib3_n) = inv_bracket_powers(grid, next.rho.values());
    let ib_t = centered(&ib_p, &ib_n);
    let ib3_t = centered(&ib3_p, &ib3_n);
    let ib_x = b.d(&ib, 1);
    let psi_xt = b.d(&w_t, 1);
    let n = w.len();
    let zero = vec![0.0; n];
    let big_g = |s: &Snapshot| -> V {
        if residual_sources {
            let k = curvature_unchecked(&s.rho, grid);
            s.u.trace(grid).sub(&k).values().to_vec()
        } else {
            vec![0.0; n]
        }
    };
    let g_of = |s: &Snapshot| -> V {
        let r = s.rho.values();
        let (px, _, i3) = inv_bracket_powers(grid, r);
        let rxx = b.d(r, 2);
        let gg = big_g(s);
        (0..r.len()).map(|i| -px[i] * px[i] * rxx[i] * i3[i] + gg[i]).collect()
    };
    let g = g_of(mid);
    let g_t = centered(&g_of(prev), &g_of(next));
    let big_g_mid = big_g(mid);
    let l_big_g = b.d(&big_g_mid, 2);
    let u0 = mid.u.trace(grid).values().to_vec();
    let u0_t = centered(prev.u.trace(grid).values(), next.u.trace(grid).values());
    let l_u0 = b.d(&u0, 2);
    let br2: V = psi_x.iter().map(|p| 1.0 + p * p).collect();
    let hh: V = if residual_sources {
        let jump = jump_un(&mid.u, grid)?;
        let l2 = b.d(&w_t, 4);
        (0..n)
            .map(|i| jump.values()[i] - (w_t[i] + epsilon * l2[i]) / br2[i])
            .collect()
    } else {
        zero.clone()
    };

    let w_x = b.d(&w, 1);
    let w_xt = b.d(&w_t, 1);
    let lw = b.d(&w, 2);
    let lw_x = b.d(&w, 3);
    let lw_xt = b.d(&w_t, 3);
    let l2w_t = b.d(&w_t, 4);
    let chi_x = b.d(&chi, 1);
    let chi_xt = w_xt.clone();
    let lchi = b.d(&chi, 2);
    let lchi_x = b.d(&chi, 3);
    let lchi_t = b.d(&w_t, 2);
    let lchi_xt = lw_xt.clone();

    let mut cross = vec![0.0; n];
    let mut qst = vec![0.0; n];
    for i in 0..n {
        let drive = w_t[i] + epsilon * l2w_t[i];
        let q = -0.5 * (w_x[i] * w_x[i] + epsilon * lw_x[i] * lw_x[i]) * ib_t[i]
            + w_t[i] * chi_x[i] * ib_x[i]
            + epsilon * lw_xt[i] * ib_x[i] * lchi[i]
            - drive * g[i]
            - br2[i] * hh[i] * u0[i];
        let s = 2.0 * chi_xt[i] * ib_x[i] * w_t[i]
            + 2.0 * epsilon * lw_xt[i] * ib_x[i] * lchi_t[i]
            - 2.0 * drive * (lchi[i] * ib_t[i] + g_t[i])
            - 2.0 * hh[i] * br2[i] * u0_t[i];
        let t_sources = 2.0 * l_big_g[i] * drive + 2.0 * l_u0[i] * hh[i] * br2[i];
        qst[i] = q + s + t_sources;
        cross[i] = w_xt[i] * (chi_x[i] - w_x[i]) * ib[i]
            + epsilon * lw_xt[i] * (lchi_x[i] - lw_x[i]) * ib[i]
            + 2.0 * w_xt[i] * (chi_xt[i] - w_xt[i]) * ib[i]
            + 2.0 * epsilon * lw_xt[i] * (lchi_xt[i] - lw_xt[i]) * ib[i];
    }
    let (a0, c0) = a_form(&b, &w, &chi, &w_t, &psi_x, &psi_xt, &ib, &ib3, &ib_t, &ib3_t);
    let lw_t = b.d(&w_t, 2);
    let (a1, c1) = a_form(&b, &lw, &lchi, &lw_t, &psi_x, &psi_xt, &ib, &ib3, &ib_t, &ib3_t);
    // 2ε{Δ(Δχ⟨ψ⟩^{-1} − ψ_x²χ_xx⟨ψ⟩^{-3}) − (Δ²χ⟨ψ⟩^{-1} − ψ_x²Δχ_xx⟨ψ⟩^{-3})}Δ²ω_t
    let inner: V = (0..n)
        .map(|i| lchi[i] * ib[i] - psi_x[i] * psi_x[i] * lchi[i] * ib3[i])
        .collect();
    let l_inner = b.d(&inner, 2);
    let l2chi = b.d(&chi, 4);
    let b_rem: V = (0..n)
        .map(|i| {
            2.0 * epsilon
                * (l_inner[i] - (l2chi[i] * ib[i] - psi_x[i] * psi_x[i] * l2chi[i] * ib3[i]))
                * l2w_t[i]
        })
        .collect();
    let b_part = lin(&[(epsilon, &a1), (1.0, &b_rem)]);
    let total = lin(&[(1.0, &qst), (1.0, &a0), (1.0, &b_part)]);
    let cross_all = lin(&[(1.0, &cross), (1.0, &c0), (epsilon, &c1)]);
    let cross_terms = cross_all.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(cross_terms == 0.0, "cross terms must vanish when chi = omega");

    let boundary = integrate_torus(grid, &total);
    let b_terms = integrate_torus(grid, &b_part);
    dissipation += 2.0 * integrate_torus(grid, &mul(&mul(&w_xt, &w_xt), &ib));
    if epsilon != 0.0 {
        dissipation += 2.0 * epsilon * integrate_torus(grid, &mul(&mul(&lw_xt, &lw_xt), &ib));
    }
    Ok(IdentityTerms {
        t: mid.t,
        d_energy_dt,
        dissipation,
        bulk,
        boundary,
        b_terms,
        cross_terms,
        floor: 1e-14 * grid.point_count() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::InterfaceField;
    use crate::hanzawa::CutoffProfile;

    #[test]
    fn steady_window_has_zero_residual() {
        let g = Grid::new(16, 17).unwrap();
        let c = Cutoff::new(0.25, CutoffProfile::Quintic).unwrap();
        let s = |t| Snapshot {
            t,
            u: BulkField::zeros(&g),
            rho: InterfaceField::constant(&g, 0.1),
        };
        let terms = identity_residual_k0(&[s(0.0), s(0.1), s(0.2)], 1e-2, &c, &g).unwrap();
        assert_eq!(terms.residual(), 0.0);
        assert_eq!(terms.cross_terms, 0.0);
        assert!(identity_residual_k0(&[s(0.0), s(0.1)], 0.0, &c, &g).is_err());
    }

    #[test]
    fn identity_closes_for_arbitrary_smooth_fields() {
        let g = Grid::new(64, 401).unwrap();
        let c = Cutoff::new(0.25, CutoffProfile::Quintic).unwrap();
        let s = |t: f64| Snapshot {
            t,
            u: BulkField::from_fn(&g, |x, z| {
                (1.0 + 0.3 * x.sin() * (-t).exp()) * (std::f64::consts::PI * z).cos()
                    + 0.2 * (x + t).cos() * (1.0 - z.abs()).powi(2)
            }),
            rho: InterfaceField::from_fn(&g, |x| 0.1 * (x + t).sin() + 0.05 * (2.0 * x).cos()),
        };
        let dt = 1e-4;
        for eps in [0.0, 0.3] {
            let w = [s(0.4 - dt), s(0.4), s(0.4 + dt)];
            let terms = evaluate(&w, eps, &c, &g, true).unwrap();
            assert!(terms.residual() < 1e-4, "eps {eps}: {terms:?}");
        }
    }

    #[test]
    fn b_terms_vanish_without_regularization() {
        let g = Grid::new(16, 17).unwrap();
        let c = Cutoff::new(0.25, CutoffProfile::Quintic).unwrap();
        let s = |t: f64| Snapshot {
            t,
            u: BulkField::from_fn(&g, |x, z| 1e-3 * (-t).exp() * x.cos() * (1.0 - z * z)),
            rho: InterfaceField::from_fn(&g, |x| 1e-2 * (-t).exp() * x.sin()),
        };
        let terms = identity_residual_k0(&[s(0.0), s(0.01), s(0.02)], 0.0, &c, &g).unwrap();
        assert_eq!(terms.b_terms, 0.0);
        assert_eq!(terms.residual(), terms.residual_without_b());
    }
}
