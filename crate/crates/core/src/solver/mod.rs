//! Time stepping of the regularized problem
//!
//! ```text
//! u_t − Δ_{x′}u − a u_nn + B·∇_{x′}u_n + c u_n = 0   in each half-slab,
//! u = κ(ρ)                                            on z = 0,
//! u_n = 0                                             on z = ±1,
//! ρ_t + εΔ²ρ_t = ⟨ρ⟩² [u_n]⁻₊,
//! ```
//!
//! one θ-step at a time, with an inner fixed-point loop over the coupling.
//!
//! The plain composition "temperature solve, then interface update"
//! (`Coupling::Picard`) is unstable for small ε on fine grids: the interface
//! mode `k` is amplified by roughly `2Δt k² (k² + 1/Δt)^{1/2} / (1 + εk⁴)` per
//! sweep. The default `Coupling::Linearized` instead solves, per Fourier mode,
//! the linear coupled problem with `κ ≈ ρ_xx`, `⟨ρ⟩² ≈ 1` and the x-averaged
//! `a`, `c`, lagging only the remainders. Both share the same fixed point.

mod linear;
mod run;

pub use run::{run_continuation, NoObserver, Observer, RunOutput};

use std::fmt;
use std::borrow::Cow;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::{difference_norm, Snapshot};
use crate::error::{check_finite, Result, StefanError};
use crate::fields::{BulkField, Grid, InterfaceField};
use crate::hanzawa::{
    check_nondegenerate, coefficients_unchecked, curvature_unchecked, jump_un, Cutoff,
    CutoffProfile, CutoffSamples, TransformCoefficients,
};
use linear::{
    apply_mean_spatial, apply_spatial, from_spectra, residual_scale, solve_spectra,
    spectral_jump, to_spectra, HalfSpectra, ModeOperator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    #[default]
    BackwardEuler,
    CrankNicolson,
}

impl TimeScheme {
    /// Implicitness weight θ.
    pub fn theta(self) -> f64 {
        match self {
            TimeScheme::BackwardEuler => 1.0,
            TimeScheme::CrankNicolson => 0.5,
        }
    }
}

/// How the inner iteration couples temperature and interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    #[default]
    Linearized,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub dt: f64,
    pub n_x: usize,
    pub n_z: usize,
    /// Inner tolerance on `sqrt(E_ε)` of the iterate difference.
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Linear residual tolerance, in units of `u`.
    pub lin_tol: f64,
    pub lin_max_iter: usize,
    pub alpha: f64,
    pub cutoff: CutoffProfile,
    pub k_diag: u32,
    pub scheme: TimeScheme,
    pub coupling: Coupling,
    /// How many times a failed step may be retried as two half steps.
    pub max_halvings: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            dt: 1e-3,
            n_x: 64,
            n_z: 65,
            fp_tol: 1e-11,
            fp_max_iter: 50,
            lin_tol: 1e-13,
            lin_max_iter: 200,
            alpha: 0.25,
            cutoff: CutoffProfile::Quintic,
            k_diag: 1,
            scheme: TimeScheme::BackwardEuler,
            coupling: Coupling::Linearized,
            max_halvings: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StefanError::Config(m));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.fp_tol > 0.0) || !(self.lin_tol > 0.0) {
            return bad("fp_tol and lin_tol must be positive".into());
        }
        if self.fp_max_iter == 0 || self.lin_max_iter == 0 {
            return bad("fp_max_iter and lin_max_iter must be at least 1".into());
        }
        if self.k_diag > crate::energy::MAX_K_DIAG {
            return bad(format!(
                "k_diag must be at most {}, got {}",
                crate::energy::MAX_K_DIAG,
                self.k_diag
            ));
        }
        Grid::new(self.n_x, self.n_z)?;
        Cutoff::new(self.alpha, self.cutoff)?;
        Ok(())
    }

    /// Short stable digest of the configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("solver config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Extra source terms, for manufactured solutions:
/// `u_t + A u = F_bulk`, `u = κ(ρ) + g` on `z = 0`,
/// `(I + εΔ²)ρ_t = ⟨ρ⟩²[u_n]⁻₊ + F_jump`.
pub trait Forcing: Send + Sync {
    fn bulk(&self, t: f64, grid: &Grid) -> BulkField;
    fn dirichlet(&self, t: f64, grid: &Grid) -> InterfaceField;
    fn jump(&self, t: f64, grid: &Grid) -> InterfaceField;
}

/// Per-step record of the inner iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepInfo {
    pub inner_iters: usize,
    /// `sqrt(E_ε)` of successive iterate differences.
    pub differences: Vec<f64>,
    /// `‖u(·,0) − κ(ρ) − g‖_∞` before the trace is reset to `κ(ρ) + g`.
    pub trace_defect: f64,
    pub halvings: u32,
}

impl StepInfo {
    /// Ratios of successive differences.
    pub fn ratios(&self) -> Vec<f64> {
        self.differences
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: BulkField,
    pub rho: InterfaceField,
    /// Interface at the previous accepted step.
    pub rho_prev: InterfaceField,
    pub step: StepInfo,
}

impl State {
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.t,
            u: self.u.clone(),
            rho: self.rho.clone(),
        }
    }
}

pub struct Solver {
    cfg: SolverConfig,
    grid: Grid,
    cutoff: Cutoff,
    samples: CutoffSamples,
    forcing: Option<Arc<dyn Forcing>>,
}

impl fmt::Debug for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Solver")
            .field("cfg", &self.cfg)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl Clone for Solver {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            grid: self.grid.clone(),
            cutoff: self.cutoff,
            samples: self.samples.clone(),
            forcing: self.forcing.clone(),
        }
    }
}

fn sigma(grid: &Grid, i: usize) -> f64 {
    let f = grid.fourier();
    if f.is_nyquist(i) {
        0.0
    } else {
        -f.wavenumber(i).powi(2)
    }
}

fn bracket_sq(rho: &InterfaceField, grid: &Grid) -> InterfaceField {
    rho.dx(grid, 1).map(|g| 1.0 + g * g)
}

impl Solver {
    pub fn new(cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = Grid::new(cfg.n_x, cfg.n_z)?;
        let cutoff = Cutoff::new(cfg.alpha, cfg.cutoff)?;
        let samples = cutoff.on_grid(&grid);
        Ok(Self {
            cfg,
            grid,
            cutoff,
            samples,
            forcing: None,
        })
    }

    pub fn with_forcing(mut self, forcing: Arc<dyn Forcing>) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cutoff(&self) -> &Cutoff {
        &self.cutoff
    }

    fn check_shapes(&self, u: &BulkField, rho: &InterfaceField) -> Result<()> {
        if u.n_x() != self.grid.n_x() || u.n_z() != self.grid.n_z() || rho.len() != self.grid.n_x()
        {
            return Err(StefanError::GridMismatch(format!(
                "fields of shape ({}, {}) and {} on a {}x{} grid",
                u.n_x(),
                u.n_z(),
                rho.len(),
                self.grid.n_x(),
                self.grid.n_z()
            )));
        }
        check_finite("temperature", u.values())?;
        check_finite("interface height", rho.values())
    }

    fn coefficients(&self, rho: &InterfaceField, rho_t: &InterfaceField) -> Result<TransformCoefficients> {
        check_nondegenerate(rho, &self.samples)?;
        Ok(coefficients_unchecked(rho, rho_t, &self.samples, &self.grid))
    }

    fn dirichlet_forcing(&self, t: f64) -> Vec<f64> {
        match &self.forcing {
            Some(f) => f.dirichlet(t, &self.grid).values().to_vec(),
            None => vec![0.0; self.grid.n_x()],
        }
    }

    /// State at time `t0` from raw initial data.
    pub fn initial_state_at(&self, t0: f64, u0: BulkField, rho0: InterfaceField) -> Result<State> {
        self.check_shapes(&u0, &rho0)?;
        check_nondegenerate(&rho0, &self.samples)?;
        Ok(State {
            t: t0,
            u: u0,
            rho_prev: rho0.clone(),
            rho: rho0,
            step: StepInfo::default(),
        })
    }

    pub fn initial_state(&self, u0: BulkField, rho0: InterfaceField) -> Result<State> {
        self.initial_state_at(0.0, u0, rho0)
    }

    /// Temperature compatible with `ρ₀`: the steady frozen-coefficient
    /// problem with `u = κ(ρ₀)` on `z = 0` and Neumann walls.
    pub fn compatible_temperature(&self, rho0: &InterfaceField) -> Result<BulkField> {
        check_finite("interface height", rho0.values())?;
        let zero = InterfaceField::zeros(&self.grid);
        let co = self.coefficients(rho0, &zero)?;
        let trace = curvature_unchecked(rho0, &self.grid);
        let mut guess = BulkField::zeros(&self.grid);
        for j in 0..self.grid.n_z() {
            guess.row_mut(j).copy_from_slice(trace.values());
        }
        let (u, _) = self.solve_frozen(&co, 0.0, 1.0, &BulkField::zeros(&self.grid), trace.values(), &guess)?;
        Ok(u)
    }

    /// Solves `inv_dt·u + θA[u] = rhs` off the interface row with
    /// `u(·,0) = trace`, by defect correction preconditioned with the
    /// per-mode tridiagonal operator. Returns the iteration count too.
    fn solve_frozen(
        &self,
        co: &TransformCoefficients,
        inv_dt: f64,
        theta: f64,
        rhs: &BulkField,
        trace: &[f64],
        initial: &BulkField,
    ) -> Result<(BulkField, usize)> {
        let g = &self.grid;
        let pre = ModeOperator::new(inv_dt, theta, co);
        let scale = residual_scale(inv_dt, theta, g);
        let zeros = vec![Complex64::new(0.0, 0.0); g.n_x()];
        let zero_trace = vec![0.0; g.n_x()];
        let mut u = initial.clone();
        u.row_mut(g.center()).copy_from_slice(trace);
        let mut first = None;
        let mut residual = f64::INFINITY;
        for it in 0..self.cfg.lin_max_iter {
            let au = apply_spatial(&u, co, g);
            let mut r = rhs.zip_map(&u, |f, v| f - inv_dt * v).zip_map(&au, |f, a| f - theta * a);
            r.row_mut(g.center()).fill(0.0);
            residual = r.max_abs() / scale;
            if !residual.is_finite() {
                break;
            }
            if residual <= self.cfg.lin_tol {
                return Ok((u, it));
            }
            let r0 = *first.get_or_insert(residual);
            if residual > 1e6 * r0.max(self.cfg.lin_tol) {
                break;
            }
            let delta = from_spectra(solve_spectra(&pre, &to_spectra(&r, g), &zeros, g), &zero_trace, g);
            u = u.add(&delta);
        }
        Err(StefanError::LinearSolve {
            iterations: self.cfg.lin_max_iter,
            residual,
        })
    }

    /// One backward-Euler temperature step with coefficients frozen at
    /// `(ρ_m, ρ_t)` and `u = κ(ρ_m)` on `z = 0`.
    pub fn temperature_step(
        &self,
        rho_m: &InterfaceField,
        rho_t_m: &InterfaceField,
        u_old: &BulkField,
    ) -> Result<BulkField> {
        self.check_shapes(u_old, rho_m)?;
        check_finite("interface velocity", rho_t_m.values())?;
        let co = self.coefficients(rho_m, rho_t_m)?;
        let inv_dt = 1.0 / self.cfg.dt;
        let trace = curvature_unchecked(rho_m, &self.grid);
        let rhs = u_old.scale(inv_dt);
        Ok(self.solve_frozen(&co, inv_dt, 1.0, &rhs, trace.values(), u_old)?.0)
    }

    /// `(I + εΔ²)^{-1} r`, diagonal in Fourier space.
    pub fn regularized_rate(&self, r: &InterfaceField) -> InterfaceField {
        let eps = self.cfg.epsilon;
        if eps == 0.0 {
            return r.clone();
        }
        InterfaceField::from_vec(
            self.grid
                .fourier()
                .apply_symbol(r.values(), |k| Complex64::new(1.0 / (1.0 + eps * k.powi(4)), 0.0)),
        )
    }

    /// `ρ_prev + Δt (I + εΔ²)^{-1} (⟨ρ_m⟩² [u_n]⁻₊)`.
    pub fn interface_step(
        &self,
        rho_m: &InterfaceField,
        u_new: &BulkField,
        rho_prev: &InterfaceField,
    ) -> Result<InterfaceField> {
        self.check_shapes(u_new, rho_m)?;
        let r = bracket_sq(rho_m, &self.grid).zip_map(&jump_un(u_new, &self.grid)?, |b, j| b * j);
        Ok(rho_prev.add(&self.regularized_rate(&r).scale(self.cfg.dt)))
    }

    /// One time step: iterate the coupling to `fp_tol`.
    pub fn fixed_point_step(&self, state: &State) -> Result<State> {
        let g = &self.grid;
        let cfg = &self.cfg;
        let theta = cfg.scheme.theta();
        let dt = cfg.dt;
        let inv_dt = 1.0 / dt;
        let t_new = state.t + dt;

        let mut bulk_base = state.u.scale(inv_dt);
        let mut jump_base = InterfaceField::zeros(g);
        if theta < 1.0 {
            let j_old = bracket_sq(&state.rho, g).zip_map(&jump_un(&state.u, g)?, |b, j| b * j);
            jump_base = jump_base.add(&j_old.scale(1.0 - theta));
        }
        if let Some(f) = &self.forcing {
            let mut fb = f.bulk(t_new, g).scale(theta);
            let mut fj = f.jump(t_new, g).scale(theta);
            if theta < 1.0 {
                fb = fb.add(&f.bulk(state.t, g).scale(1.0 - theta));
                fj = fj.add(&f.jump(state.t, g).scale(1.0 - theta));
            }
            bulk_base = bulk_base.add(&fb);
            jump_base = jump_base.add(&fj);
        }
        let g_new = self.dirichlet_forcing(t_new);

        let mut u = state.u.clone();
        let mut rho = state.rho.clone();
        let mut differences = Vec::new();
        let mut converged = false;
        for m in 1..=cfg.fp_max_iter {
            let rho_t = rho.sub(&state.rho).scale(inv_dt);
            let co = match self.coefficients(&rho, &rho_t) {
                Ok(co) => co,
                Err(e) if m == 1 => return Err(e),
                Err(_) => break,
            };
            // Explicit half at the old interface but the same midpoint velocity.
            let bulk_m = if theta < 1.0 {
                let co_old = self.coefficients(&state.rho, &rho_t)?;
                Cow::Owned(bulk_base.sub(&apply_spatial(&state.u, &co_old, g).scale(1.0 - theta)))
            } else {
                Cow::Borrowed(&bulk_base)
            };
            let (u_new, rho_new) = match cfg.coupling {
                Coupling::Linearized => {
                    self.linearized_update(state, &co, &u, &rho, &bulk_m, &jump_base, &g_new)?
                }
                Coupling::Picard => {
                    match self.picard_update(state, &co, &u, &rho, &bulk_m, &jump_base, &g_new) {
                        Ok(v) => v,
                        Err(e) if m == 1 => return Err(e),
                        Err(_) => break,
                    }
                }
            };
            let diff = difference_norm(
                &u_new.sub(&u),
                &rho_new.sub(&rho),
                &rho_new,
                cfg.epsilon,
                &self.cutoff,
                g,
            )?;
            differences.push(diff);
            u = u_new;
            rho = rho_new;
            if !diff.is_finite() || diff > 1e8 * differences[0].max(cfg.fp_tol) {
                break;
            }
            if diff <= cfg.fp_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            let last = differences.last().copied().unwrap_or(f64::NAN);
            let ratio = match differences.len() {
                n if n >= 2 => differences[n - 1] / differences[n - 2],
                _ => f64::NAN,
            };
            return Err(StefanError::FixedPoint {
                iterations: differences.len(),
                last_difference: last,
                ratio,
            });
        }
        check_finite("temperature", u.values())?;
        check_finite("interface height", rho.values())?;
        let kappa = curvature_unchecked(&rho, g);
        let target: Vec<f64> = kappa.values().iter().zip(&g_new).map(|(k, f)| k + f).collect();
        let trace_defect = u
            .row(g.center())
            .iter()
            .zip(&target)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        u.row_mut(g.center()).copy_from_slice(&target);
        Ok(State {
            t: t_new,
            u,
            rho,
            rho_prev: state.rho.clone(),
            step: StepInfo {
                inner_iters: differences.len(),
                differences,
                trace_defect,
                halvings: 0,
            },
        })
    }

    /// [`Self::fixed_point_step`], retried as two half steps on an inner
    /// iteration failure, at most `max_halvings` levels deep.
    pub fn advance(&self, state: &State) -> Result<State> {
        match self.fixed_point_step(state) {
            Err(StefanError::FixedPoint { .. }) if self.cfg.max_halvings > 0 => {
                let mut cfg = self.cfg.clone();
                cfg.dt *= 0.5;
                cfg.max_halvings -= 1;
                log::warn!("inner iteration failed at t = {:.6e}; retrying with dt = {:.3e}", state.t, cfg.dt);
                let half = Solver {
                    cfg,
                    ..self.clone()
                };
                let mid = half.advance(state)?;
                let mut end = half.advance(&mid)?;
                end.t = state.t + self.cfg.dt;
                end.rho_prev = state.rho.clone();
                end.step.inner_iters += mid.step.inner_iters;
                end.step.halvings = 1 + mid.step.halvings.max(end.step.halvings);
                Ok(end)
            }
            other => other,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn picard_update(
        &self,
        state: &State,
        co: &TransformCoefficients,
        u: &BulkField,
        rho: &InterfaceField,
        bulk_base: &BulkField,
        jump_base: &InterfaceField,
        g_new: &[f64],
    ) -> Result<(BulkField, InterfaceField)> {
        let g = &self.grid;
        let theta = self.cfg.scheme.theta();
        let trace: Vec<f64> = curvature_unchecked(rho, g)
            .values()
            .iter()
            .zip(g_new)
            .map(|(k, f)| k + f)
            .collect();
        let (u_new, _) = self.solve_frozen(co, 1.0 / self.cfg.dt, theta, bulk_base, &trace, u)?;
        let r = bracket_sq(rho, g)
            .zip_map(&jump_un(&u_new, g)?, |b, j| theta * b * j)
            .add(jump_base);
        let rho_new = state.rho.add(&self.regularized_rate(&r).scale(self.cfg.dt));
        Ok((u_new, rho_new))
    }

    #[allow(clippy::too_many_arguments)]
    fn linearized_update(
        &self,
        state: &State,
        co: &TransformCoefficients,
        u: &BulkField,
        rho: &InterfaceField,
        bulk_base: &BulkField,
        jump_base: &InterfaceField,
        g_new: &[f64],
    ) -> Result<(BulkField, InterfaceField)> {
        let g = &self.grid;
        let fourier = g.fourier();
        let n_x = g.n_x();
        let theta = self.cfg.scheme.theta();
        let inv_dt = 1.0 / self.cfg.dt;
        let eps = self.cfg.epsilon;
        let pre = ModeOperator::new(inv_dt, theta, co);

        // Bulk: x-varying parts of the operator lagged.
        let lag = apply_spatial(u, co, g).sub(&apply_mean_spatial(u, &pre, g));
        let w = bulk_base.sub(&lag.scale(theta));

        // Interface value: κ(ρ) = ρ_xx + lagged remainder.
        let rho_hat = fourier.forward(rho.values());
        let lin: Vec<Complex64> = (0..n_x).map(|i| rho_hat[i] * sigma(g, i)).collect();
        let lin_curv = fourier.inverse(lin);
        let kappa = curvature_unchecked(rho, g);
        let remainder: Vec<f64> = (0..n_x)
            .map(|i| kappa.values()[i] - lin_curv[i] + g_new[i])
            .collect();
        let rem_hat = fourier.forward(&remainder);

        let mut up = solve_spectra(&pre, &to_spectra(&w, g), &rem_hat, g);
        let ones = vec![Complex64::new(1.0, 0.0); n_x];
        let zero_rhs: HalfSpectra = [
            vec![vec![Complex64::new(0.0, 0.0); n_x]; up[0].len()],
            vec![vec![Complex64::new(0.0, 0.0); n_x]; up[1].len()],
        ];
        let uh = solve_spectra(&pre, &zero_rhs, &ones, g);
        let jp = spectral_jump(&up, &rem_hat, g);
        let jh = spectral_jump(&uh, &ones, g);

        // Jump: ⟨ρ⟩² − 1 lagged.
        let lagged = bracket_sq(rho, g)
            .zip_map(&jump_un(u, g)?, |b, j| theta * (b - 1.0) * j)
            .add(jump_base);
        let s_hat = fourier.forward(lagged.values());
        let old_hat = fourier.forward(state.rho.values());

        let mut new_hat = vec![Complex64::new(0.0, 0.0); n_x];
        let mut trace_hat = vec![Complex64::new(0.0, 0.0); n_x];
        for i in 0..n_x {
            let k = fourier.wavenumber(i);
            let reg = 1.0 + eps * k.powi(4);
            let sg = sigma(g, i);
            let num = old_hat[i] * (reg * inv_dt) + jp[i] * theta + s_hat[i];
            let den = Complex64::new(reg * inv_dt, 0.0) - jh[i] * (theta * sg);
            new_hat[i] = num / den;
            let shift = new_hat[i] * sg;
            for (half_p, half_h) in up.iter_mut().zip(&uh) {
                for (row_p, row_h) in half_p.iter_mut().zip(half_h) {
                    row_p[i] += shift * row_h[i];
                }
            }
            trace_hat[i] = rem_hat[i] + shift;
        }
        let trace = fourier.inverse(trace_hat);
        Ok((from_spectra(up, &trace, g), InterfaceField::from_vec(fourier.inverse(new_hat))))
    }
}


#[cfg(test)]
mod tests;
