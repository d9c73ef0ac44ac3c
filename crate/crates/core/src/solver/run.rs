use std::ops::ControlFlow;

use super::{Solver, SolverConfig, State, StepInfo};
use crate::energy::{steady_mean, Diagnostics, EnergyReport};
use crate::error::{Result, StefanError};
use crate::fields::{BulkField, InterfaceField};

/// Called once per accepted state, initial state included. The report's
/// identity column is filled in one step later.
pub trait Observer {
    fn observe(&mut self, state: &State, report: &EnergyReport) -> ControlFlow<()>;
}

impl<F: FnMut(&State, &EnergyReport) -> ControlFlow<()>> Observer for F {
    fn observe(&mut self, state: &State, report: &EnergyReport) -> ControlFlow<()> {
        self(state, report)
    }
}

pub struct NoObserver;

impl Observer for NoObserver {
    fn observe(&mut self, _: &State, _: &EnergyReport) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// One report per accepted state, the initial one first.
    pub reports: Vec<EnergyReport>,
    /// Inner-iteration records of each step.
    pub steps: Vec<StepInfo>,
    pub final_state: State,
    pub rho_bar: f64,
}

impl RunOutput {
    pub fn max_trace_defect(&self) -> f64 {
        self.steps.iter().map(|s| s.trace_defect).fold(0.0, f64::max)
    }
}

impl Solver {
    /// Diagnostics configured for this solver, with `ρ̄` taken from `initial`.
    pub fn diagnostics(&self, initial: &State) -> Diagnostics {
        let rho_bar = steady_mean(&initial.u, &initial.rho, &self.cutoff, &self.grid);
        Diagnostics::new(
            self.grid.clone(),
            self.cutoff,
            self.cfg.epsilon,
            self.cfg.k_diag,
            rho_bar,
        )
    }

    /// Advances `round((t_end − t0)/dt)` steps.
    pub fn run(&self, initial: State, t_end: f64, observer: &mut dyn Observer) -> Result<RunOutput> {
        let diagnostics = self.diagnostics(&initial);
        self.run_with(initial, t_end, diagnostics, observer)
    }

    pub fn run_with(
        &self,
        initial: State,
        t_end: f64,
        mut diagnostics: Diagnostics,
        observer: &mut dyn Observer,
    ) -> Result<RunOutput> {
        if !(t_end >= initial.t) || !t_end.is_finite() {
            return Err(StefanError::Config(format!(
                "t_end = {t_end} precedes the initial time {}",
                initial.t
            )));
        }
        let n_steps = ((t_end - initial.t) / self.cfg.dt).round() as usize;
        let mut reports = Vec::with_capacity(n_steps + 1);
        let mut steps = Vec::with_capacity(n_steps);
        let (report, _) = diagnostics.observe(initial.snapshot(), 0)?;
        let stop = observer.observe(&initial, &report);
        reports.push(report);
        let t0 = initial.t;
        let mut state = initial;
        if stop.is_break() {
            return Ok(RunOutput { reports, steps, final_state: state, rho_bar: diagnostics.rho_bar() });
        }
        for n in 1..=n_steps {
            let wrap = |e: StefanError, t: f64| StefanError::Step { step: n, t, source: Box::new(e) };
            let mut next = self.advance(&state).map_err(|e| wrap(e, state.t))?;
            next.t = t0 + n as f64 * self.cfg.dt;
            let (report, identity) = diagnostics
                .observe(next.snapshot(), next.step.inner_iters)
                .map_err(|e| wrap(e, next.t))?;
            if let (Some(id), Some(prev)) = (identity, reports.last_mut()) {
                prev.identity_residual = Some(id.residual());
            }
            log::debug!(
                "step {n}: t = {:.6e}, inner = {}, E = {:?}",
                next.t,
                next.step.inner_iters,
                report.energy
            );
            steps.push(next.step.clone());
            let stop = observer.observe(&next, &report);
            reports.push(report);
            state = next;
            if stop.is_break() {
                break;
            }
        }
        Ok(RunOutput { reports, steps, final_state: state, rho_bar: diagnostics.rho_bar() })
    }
}

/// Runs the same initial data at each regularization strength in turn.
pub fn run_continuation(
    cfg: &SolverConfig,
    epsilons: &[f64],
    u0: &BulkField,
    rho0: &InterfaceField,
    t_end: f64,
) -> Result<Vec<RunOutput>> {
    epsilons
        .iter()
        .map(|&epsilon| {
            let solver = Solver::new(SolverConfig { epsilon, ..cfg.clone() })?;
            let initial = solver.initial_state(u0.clone(), rho0.clone())?;
            solver.run(initial, t_end, &mut NoObserver)
        })
        .collect()
}
