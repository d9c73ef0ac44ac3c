//! Energy and dissipation functionals, the parabolic Sobolev norms they are
//! equivalent to, and the conservation-law bookkeeping.
//!
//! Every functional is a sum over the tangential/time derivative pairs
//! `(μ, s)` with `μ + 2s ≤ 2k` of quadratic integrals weighted by `a_ψ` and
//! powers of `⟨ψ⟩^{-1}`. Time derivatives come from backward divided
//! differences over a short history of accepted states; a pair whose time
//! derivative needs more history than is available is reported as missing.

mod fit;
mod identity;
mod report;

pub use fit::{decay_fit, DecayFit};
pub use identity::{identity_residual_k0, IdentityTerms};
pub use report::{Diagnostics, EnergyReport, CSV_HEADER};

use serde::Serialize;

use crate::error::{Result, StefanError};
use crate::fields::{
    integrate_bulk, integrate_slab, integrate_torus, slab_dz, slab_dzz, BulkField, Grid, Half,
    InterfaceField,
};
use crate::hanzawa::{a_coefficient, Cutoff};

/// Largest supported diagnostic order.
pub const MAX_K_DIAG: u32 = 3;

/// A time-stamped pair `(u, ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: BulkField,
    pub rho: InterfaceField,
}

/// `∂^μ_s` applied to the history, plus one more time derivative for the
/// dissipation. `None` marks a derivative that needs more history.
#[derive(Debug, Clone)]
pub struct StackTerm {
    pub mu: u32,
    pub s: u32,
    pub u: Option<BulkField>,
    pub omega: Option<InterfaceField>,
    pub u_t: Option<BulkField>,
    pub omega_t: Option<InterfaceField>,
}

/// Derivative pairs `(μ, s)` with `μ + 2s ≤ 2k` and the weights of `ψ`.
#[derive(Debug, Clone)]
pub struct DerivativeStack {
    k_diag: u32,
    terms: Vec<StackTerm>,
    psi: InterfaceField,
    weights: Weights,
    grid: Grid,
}

#[derive(Debug, Clone)]
struct Weights {
    a: BulkField,
    psi_x: Vec<f64>,
    inv_br: Vec<f64>,
    inv_br3: Vec<f64>,
}

impl Weights {
    fn new(psi: &InterfaceField, cutoff: &Cutoff, grid: &Grid) -> Self {
        let psi_x = psi.dx(grid, 1).values().to_vec();
        let inv_br: Vec<f64> = psi_x.iter().map(|g| 1.0 / (1.0 + g * g).sqrt()).collect();
        let inv_br3 = inv_br.iter().map(|b| b * b * b).collect();
        Self {
            a: a_coefficient(psi, &cutoff.on_grid(grid), grid),
            psi_x,
            inv_br,
            inv_br3,
        }
    }
}

/// Weights of `s!·f[t_0, …, t_s]` on the samples `f(t_i)`.
pub(crate) fn divided_difference_weights(times: &[f64]) -> Vec<f64> {
    let s = times.len() - 1;
    let factorial: f64 = (1..=s).map(|k| k as f64).product();
    (0..times.len())
        .map(|i| {
            let den: f64 = (0..times.len())
                .filter(|&j| j != i)
                .map(|j| times[i] - times[j])
                .product();
            factorial / den
        })
        .collect()
}

fn combine_bulk(fields: &[&BulkField], w: &[f64]) -> BulkField {
    let mut out = fields[0].scale(w[0]);
    for (f, &wi) in fields.iter().zip(w).skip(1) {
        out = out.zip_map(f, |a, b| a + wi * b);
    }
    out
}

fn combine_interface(fields: &[&InterfaceField], w: &[f64]) -> InterfaceField {
    let mut out = fields[0].scale(w[0]);
    for (f, &wi) in fields.iter().zip(w).skip(1) {
        out = out.zip_map(f, |a, b| a + wi * b);
    }
    out
}

/// `s`-th backward time derivative at the newest entry, if available.
fn time_derivative(history: &[Snapshot], s: u32) -> Option<(BulkField, InterfaceField)> {
    let s = s as usize;
    if history.len() < s + 1 {
        return None;
    }
    let window = &history[history.len() - s - 1..];
    if s == 0 {
        let last = &window[0];
        return Some((last.u.clone(), last.rho.clone()));
    }
    let times: Vec<f64> = window.iter().map(|h| h.t).collect();
    let w = divided_difference_weights(&times);
    let us: Vec<&BulkField> = window.iter().map(|h| &h.u).collect();
    let rs: Vec<&InterfaceField> = window.iter().map(|h| &h.rho).collect();
    Some((combine_bulk(&us, &w), combine_interface(&rs, &w)))
}

impl DerivativeStack {
    /// Stack for `E(u, ρ; ψ)` with `(u, ρ)` taken from `history` (oldest
    /// first) and the weights frozen at `psi`.
    pub fn new(
        history: &[Snapshot],
        psi: &InterfaceField,
        k_diag: u32,
        cutoff: &Cutoff,
        grid: &Grid,
    ) -> Result<Self> {
        if history.is_empty() {
            return Err(StefanError::Unavailable("empty history".into()));
        }
        if k_diag > MAX_K_DIAG {
            return Err(StefanError::Config(format!(
                "k_diag must be at most {MAX_K_DIAG}, got {k_diag}"
            )));
        }
        for h in history {
            if h.u.n_x() != grid.n_x() || h.u.n_z() != grid.n_z() || h.rho.len() != grid.n_x() {
                return Err(StefanError::GridMismatch("history snapshot".into()));
            }
        }
        let mut terms = Vec::new();
        for s in 0..=k_diag {
            let base = time_derivative(history, s);
            let next = time_derivative(history, s + 1);
            for mu in 0..=2 * (k_diag - s) {
                let (u, omega) = match &base {
                    Some((u, r)) => (Some(u.dx(grid, mu)), Some(r.dx(grid, mu))),
                    None => (None, None),
                };
                let (u_t, omega_t) = match &next {
                    Some((u, r)) => (Some(u.dx(grid, mu)), Some(r.dx(grid, mu))),
                    None => (None, None),
                };
                terms.push(StackTerm {
                    mu,
                    s,
                    u,
                    omega,
                    u_t,
                    omega_t,
                });
            }
        }
        Ok(Self {
            k_diag,
            terms,
            psi: psi.clone(),
            weights: Weights::new(psi, cutoff, grid),
            grid: grid.clone(),
        })
    }

    /// The usual `E(u, ρ) = E(u, ρ; ρ)` stack, weights at the newest `ρ`.
    pub fn from_history(
        history: &[Snapshot],
        k_diag: u32,
        cutoff: &Cutoff,
        grid: &Grid,
    ) -> Result<Self> {
        let psi = history
            .last()
            .ok_or_else(|| StefanError::Unavailable("empty history".into()))?
            .rho
            .clone();
        Self::new(history, &psi, k_diag, cutoff, grid)
    }

    /// Order-0 stack of a single pair, no time derivatives.
    pub fn single(
        u: &BulkField,
        omega: &InterfaceField,
        psi: &InterfaceField,
        cutoff: &Cutoff,
        grid: &Grid,
    ) -> Result<Self> {
        let snap = Snapshot {
            t: 0.0,
            u: u.clone(),
            rho: omega.clone(),
        };
        Self::new(std::slice::from_ref(&snap), psi, 0, cutoff, grid)
    }

    pub fn k_diag(&self) -> u32 {
        self.k_diag
    }

    pub fn terms(&self) -> &[StackTerm] {
        &self.terms
    }

    pub fn psi(&self) -> &InterfaceField {
        &self.psi
    }
}

/// A functional value together with the `(μ, s)` pairs left out of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Functional {
    pub value: f64,
    pub missing: Vec<(u32, u32)>,
}

impl Functional {
    /// The value, only if no term was missing.
    pub fn complete(&self) -> Option<f64> {
        self.missing.is_empty().then_some(self.value)
    }
}

fn halves(grid: &Grid, f: &BulkField) -> [BulkField; 2] {
    Half::BOTH.map(|h| f.rows(grid.half_rows(h)))
}

fn bulk_energy(grid: &Grid, u: &BulkField, a: &BulkField, weighted: bool) -> f64 {
    let (us, as_) = (halves(grid, u), halves(grid, a));
    us.iter()
        .zip(&as_)
        .map(|(u, a)| {
            let ux = u.dx(grid, 1);
            let uz = slab_dz(u, grid.dz());
            let mut density = u.zip_map(&ux, |v, x| v * v + x * x);
            let wz = if weighted {
                uz.zip_map(a, |z, a| a * z * z)
            } else {
                uz.map(|z| z * z)
            };
            density = density.add(&wz);
            integrate_slab(grid, &density, grid.dz())
        })
        .sum()
}

fn bulk_dissipation(
    grid: &Grid,
    u: &BulkField,
    u_t: &BulkField,
    a: &BulkField,
    weighted: bool,
) -> f64 {
    let (us, uts, as_) = (halves(grid, u), halves(grid, u_t), halves(grid, a));
    let h = grid.dz();
    let mut total = 0.0;
    for ((u, ut), a) in us.iter().zip(&uts).zip(&as_) {
        let ux = u.dx(grid, 1);
        let uxx = u.dx(grid, 2);
        let uz = slab_dz(u, h);
        let uxz = slab_dz(&ux, h);
        let uzz = slab_dzz(u, h);
        let n = u.values().len();
        let mut density = Vec::with_capacity(n);
        for k in 0..n {
            let w = if weighted { a.values()[k] } else { 1.0 };
            density.push(
                ut.values()[k].powi(2)
                    + ux.values()[k].powi(2)
                    + w * uz.values()[k].powi(2)
                    + uxx.values()[k].powi(2)
                    + 2.0 * w * uxz.values()[k].powi(2)
                    + (w * uzz.values()[k]).powi(2),
            );
        }
        let density = BulkField::from_vec(u.n_x(), u.n_z(), density);
        total += integrate_slab(grid, &density, h);
    }
    total
}

fn weighted_square(grid: &Grid, f: &[f64], w: &[f64]) -> f64 {
    let v: Vec<f64> = f.iter().zip(w).map(|(f, w)| f * f * w).collect();
    integrate_torus(grid, &v)
}

fn i_psi_weighted(grid: &Grid, omega: &InterfaceField, w: &Weights) -> f64 {
    let wxx = omega.dx(grid, 2);
    let v: Vec<f64> = wxx
        .values()
        .iter()
        .enumerate()
        .map(|(i, &h)| h * h * w.inv_br[i] - (h * w.psi_x[i]).powi(2) * w.inv_br3[i])
        .collect();
    integrate_torus(grid, &v)
}

/// `∫|∇ω|²⟨ψ⟩^{-1} + I_ψ(∇²ω, ∇²ω)`.
fn boundary_energy(grid: &Grid, omega: &InterfaceField, w: &Weights) -> f64 {
    weighted_square(grid, omega.dx(grid, 1).values(), &w.inv_br) + i_psi_weighted(grid, omega, w)
}

/// `2∫|∇ω_t|²⟨ψ⟩^{-1}`.
fn boundary_dissipation(grid: &Grid, omega_t: &InterfaceField, w: &Weights) -> f64 {
    2.0 * weighted_square(grid, omega_t.dx(grid, 1).values(), &w.inv_br)
}

/// The integrated form `I_ψ(∇²ω, ∇²ω) = ∫ |∇²ω|²⟨ψ⟩^{-1} − Σ_k (∇ω_k·∇ψ)²⟨ψ⟩^{-3}`.
pub fn i_psi(omega: &InterfaceField, psi: &InterfaceField, grid: &Grid) -> f64 {
    let psi_x = psi.dx(grid, 1);
    let wxx = omega.dx(grid, 2);
    let v: Vec<f64> = wxx
        .values()
        .iter()
        .zip(psi_x.values())
        .map(|(&h, &g)| {
            let br2 = 1.0 + g * g;
            let br = br2.sqrt();
            h * h / br - (h * g).powi(2) / (br2 * br)
        })
        .collect();
    integrate_torus(grid, &v)
}

/// The lower bound `∫ |∇²ω|²⟨ψ⟩^{-3}` of [`i_psi`].
pub fn i_psi_lower_bound(omega: &InterfaceField, psi: &InterfaceField, grid: &Grid) -> f64 {
    let psi_x = psi.dx(grid, 1);
    let wxx = omega.dx(grid, 2);
    let v: Vec<f64> = wxx
        .values()
        .iter()
        .zip(psi_x.values())
        .map(|(&h, &g)| h * h * (1.0 + g * g).powf(-1.5))
        .collect();
    integrate_torus(grid, &v)
}

fn accumulate(
    stack: &DerivativeStack,
    needs_t: bool,
    mut f: impl FnMut(&StackTerm) -> f64,
) -> Functional {
    let mut value = 0.0;
    let mut missing = Vec::new();
    for term in &stack.terms {
        let available = if needs_t {
            term.u_t.is_some()
        } else {
            term.u.is_some()
        };
        if available {
            value += f(term);
        } else {
            missing.push((term.mu, term.s));
        }
    }
    Functional { value, missing }
}

/// `E(u, ω; ψ)`.
#[allow(non_snake_case)]
pub fn energy_E(stack: &DerivativeStack) -> Functional {
    let g = &stack.grid;
    let w = &stack.weights;
    accumulate(stack, false, |t| {
        bulk_energy(g, t.u.as_ref().unwrap(), &w.a, true)
            + boundary_energy(g, t.omega.as_ref().unwrap(), w)
    })
}

/// `D(u, ω; ψ)`.
#[allow(non_snake_case)]
pub fn dissipation_D(stack: &DerivativeStack) -> Functional {
    let g = &stack.grid;
    let w = &stack.weights;
    accumulate(stack, true, |t| {
        bulk_dissipation(g, t.u.as_ref().unwrap(), t.u_t.as_ref().unwrap(), &w.a, true)
            + boundary_dissipation(g, t.omega_t.as_ref().unwrap(), w)
    })
}

fn eps_energy_part(stack: &DerivativeStack) -> Functional {
    let g = &stack.grid;
    let w = &stack.weights;
    accumulate(stack, false, |t| {
        boundary_energy(g, &t.omega.as_ref().unwrap().dx(g, 2), w)
    })
}

fn eps_dissipation_part(stack: &DerivativeStack) -> Functional {
    let g = &stack.grid;
    let w = &stack.weights;
    accumulate(stack, true, |t| {
        boundary_dissipation(g, &t.omega_t.as_ref().unwrap().dx(g, 2), w)
    })
}

fn with_eps(base: Functional, extra: Functional, epsilon: f64) -> Functional {
    if epsilon == 0.0 {
        return base;
    }
    Functional {
        value: base.value + epsilon * extra.value,
        missing: base.missing,
    }
}

/// `E_ε = E + ε Σ {∫|∂^μ_sΔ∇ω|²⟨ψ⟩^{-1} + I_ψ(∇²∂^μ_sΔω, ·)}`.
pub fn energy_eps(stack: &DerivativeStack, epsilon: f64) -> Functional {
    with_eps(energy_E(stack), eps_energy_part(stack), epsilon)
}

/// `D_ε = D + 2ε Σ ∫|∂^μ_sΔ∇ω_t|²⟨ψ⟩^{-1}`.
pub fn dissipation_eps(stack: &DerivativeStack, epsilon: f64) -> Functional {
    with_eps(dissipation_D(stack), eps_dissipation_part(stack), epsilon)
}

/// Unweighted parabolic Sobolev norms `(‖·‖_{E_ε}, ‖·‖_{D_ε})`.
pub fn sobolev_norms(stack: &DerivativeStack, epsilon: f64) -> (Functional, Functional) {
    let g = &stack.grid;
    let a = &stack.weights.a;
    let square = |f: &InterfaceField| {
        let v: Vec<f64> = f.values().iter().map(|v| v * v).collect();
        integrate_torus(g, &v)
    };
    let e = accumulate(stack, false, |t| {
        let om = t.omega.as_ref().unwrap();
        let mut v = bulk_energy(g, t.u.as_ref().unwrap(), a, false)
            + square(&om.dx(g, 1))
            + square(&om.dx(g, 2));
        if epsilon != 0.0 {
            v += epsilon * (square(&om.dx(g, 3)) + square(&om.dx(g, 4)));
        }
        v
    });
    let d = accumulate(stack, true, |t| {
        let om_t = t.omega_t.as_ref().unwrap();
        let mut v = bulk_dissipation(g, t.u.as_ref().unwrap(), t.u_t.as_ref().unwrap(), a, false)
            + square(&om_t.dx(g, 1));
        if epsilon != 0.0 {
            v += epsilon * square(&om_t.dx(g, 3));
        }
        v
    });
    (e, d)
}

/// `min over stack terms of I_ψ − ∫|∇²ω|²⟨ψ⟩^{-3}`.
pub fn i_psi_min_gap(stack: &DerivativeStack) -> f64 {
    let g = &stack.grid;
    stack
        .terms
        .iter()
        .filter_map(|t| t.omega.as_ref())
        .map(|om| i_psi(om, &stack.psi, g) - i_psi_lower_bound(om, &stack.psi, g))
        .fold(f64::INFINITY, f64::min)
}

/// `∫_Ω u (1 + φ′ρ)`.
pub fn heat_content(u: &BulkField, rho: &InterfaceField, cutoff: &Cutoff, grid: &Grid) -> f64 {
    let samples = cutoff.on_grid(grid);
    let mut f = u.clone();
    for j in 0..grid.n_z() {
        let dp = samples.dphi[j];
        for (v, r) in f.row_mut(j).iter_mut().zip(rho.values()) {
            *v *= 1.0 + dp * r;
        }
    }
    integrate_bulk(grid, &f)
}

/// `|Δ∫_Ω u(1+φ′ρ) − Δ∫_T ρ|` between two states.
pub fn conservation_residual(
    old: &Snapshot,
    new: &Snapshot,
    cutoff: &Cutoff,
    grid: &Grid,
) -> f64 {
    let heat = heat_content(&new.u, &new.rho, cutoff, grid)
        - heat_content(&old.u, &old.rho, cutoff, grid);
    let mass = integrate_torus(grid, new.rho.values()) - integrate_torus(grid, old.rho.values());
    (heat - mass).abs()
}

/// The limit mean `ρ̄ = [∫ρ₀ − ∫_Ω u₀(1+φ′ρ₀)] / |T|`.
pub fn steady_mean(u0: &BulkField, rho0: &InterfaceField, cutoff: &Cutoff, grid: &Grid) -> f64 {
    (integrate_torus(grid, rho0.values()) - heat_content(u0, rho0, cutoff, grid))
        / crate::fields::PERIOD
}

/// `‖ρ − ρ̄‖₂` with the rectangle rule.
pub fn rho_deviation_l2(rho: &InterfaceField, rho_bar: f64, grid: &Grid) -> f64 {
    let v: Vec<f64> = rho.values().iter().map(|r| (r - rho_bar).powi(2)).collect();
    integrate_torus(grid, &v).sqrt()
}

/// `sqrt(E)` at order 0 of `a − b`, weights at `b.rho`.
pub fn energy_distance(a: &Snapshot, b: &Snapshot, cutoff: &Cutoff, grid: &Grid) -> Result<f64> {
    difference_norm(&a.u.sub(&b.u), &a.rho.sub(&b.rho), &b.rho, 0.0, cutoff, grid)
}

/// Sup-over-time [`energy_distance`] between two trajectories sampled at the
/// same times, absolute and relative to the sup of `sqrt(E)` of `reference`.
pub fn trajectory_distance(
    trajectory: &[Snapshot],
    reference: &[Snapshot],
    cutoff: &Cutoff,
    grid: &Grid,
) -> Result<(f64, f64)> {
    if trajectory.len() != reference.len()
        || trajectory.iter().zip(reference).any(|(a, b)| (a.t - b.t).abs() > 1e-9 * (1.0 + b.t.abs()))
    {
        return Err(StefanError::GridMismatch("trajectories sampled at different times".into()));
    }
    let mut dist = 0.0_f64;
    let mut size = 0.0_f64;
    for (a, b) in trajectory.iter().zip(reference) {
        dist = dist.max(energy_distance(a, b, cutoff, grid)?);
        size = size.max(difference_norm(&b.u, &b.rho, &b.rho, 0.0, cutoff, grid)?);
    }
    let rel = if size > 0.0 { dist / size } else { dist };
    Ok((dist, rel))
}

/// Fixed-point difference norm: `sqrt(E_ε)` at order 0 of `(Δu, Δρ)` with
/// weights at `psi`.
pub(crate) fn difference_norm(
    du: &BulkField,
    drho: &InterfaceField,
    psi: &InterfaceField,
    epsilon: f64,
    cutoff: &Cutoff,
    grid: &Grid,
) -> Result<f64> {
    let stack = DerivativeStack::single(du, drho, psi, cutoff, grid)?;
    Ok(energy_eps(&stack, epsilon).value.max(0.0).sqrt())
}
