use std::collections::VecDeque;

use serde::Serialize;

use super::{
    conservation_residual, dissipation_D, dissipation_eps, energy_E, energy_eps,
    i_psi_min_gap, identity_residual_k0, rho_deviation_l2, sobolev_norms, DerivativeStack,
    IdentityTerms, Snapshot,
};
use crate::error::Result;
use crate::fields::Grid;
use crate::hanzawa::Cutoff;

/// Diagnostics of one accepted state. Quantities that need more history
/// than is available are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub t: f64,
    pub energy: Option<f64>,
    pub dissipation: Option<f64>,
    pub energy_eps: Option<f64>,
    pub dissipation_eps: Option<f64>,
    pub i_psi_min_gap: f64,
    pub sobolev_energy: Option<f64>,
    pub sobolev_dissipation: Option<f64>,
    /// Conservation residual of the step that produced this state.
    pub cons_residual: Option<f64>,
    pub rho_dev_l2: f64,
    pub identity_residual: Option<f64>,
    pub inner_iters: usize,
    pub mean_rho: f64,
}

pub const CSV_HEADER: &str = "t,E,D,E_eps,D_eps,sobolev_E,sobolev_D,cons_residual,rho_dev_L2,identity_residual,inner_iters";

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.17e}"),
        None => "NA".to_string(),
    }
}

impl EnergyReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.17e},{},{},{},{},{},{},{},{:.17e},{},{}",
            self.t,
            cell(self.energy),
            cell(self.dissipation),
            cell(self.energy_eps),
            cell(self.dissipation_eps),
            cell(self.sobolev_energy),
            cell(self.sobolev_dissipation),
            cell(self.cons_residual),
            self.rho_dev_l2,
            cell(self.identity_residual),
            self.inner_iters
        )
    }
}

/// Turns a stream of accepted states into [`EnergyReport`]s, keeping the
/// history needed for time differences.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    grid: Grid,
    cutoff: Cutoff,
    epsilon: f64,
    k_diag: u32,
    rho_bar: f64,
    history: VecDeque<Snapshot>,
    capacity: usize,
    identity: bool,
}

impl Diagnostics {
    pub fn new(grid: Grid, cutoff: Cutoff, epsilon: f64, k_diag: u32, rho_bar: f64) -> Self {
        let capacity = ((2 * k_diag + 1) as usize).max(k_diag as usize + 2).max(3);
        Self {
            grid,
            cutoff,
            epsilon,
            k_diag,
            rho_bar,
            history: VecDeque::with_capacity(capacity),
            capacity,
            identity: true,
        }
    }

    /// Disables the identity residual (it is the most expensive column).
    pub fn without_identity(mut self) -> Self {
        self.identity = false;
        self
    }

    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }

    /// Records `state` and returns its report, plus the identity evaluated at
    /// the previous state when three states are available.
    pub fn observe(
        &mut self,
        state: Snapshot,
        inner_iters: usize,
    ) -> Result<(EnergyReport, Option<IdentityTerms>)> {
        let cons = self
            .history
            .back()
            .map(|old| conservation_residual(old, &state, &self.cutoff, &self.grid));
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(state);
        let hist: Vec<Snapshot> = self.history.iter().cloned().collect();
        let stack = DerivativeStack::from_history(&hist, self.k_diag, &self.cutoff, &self.grid)?;
        let (se, sd) = sobolev_norms(&stack, self.epsilon);
        let newest = hist.last().expect("history is non-empty");
        let identity = if self.identity && hist.len() >= 3 {
            Some(identity_residual_k0(
                &hist[hist.len() - 3..],
                self.epsilon,
                &self.cutoff,
                &self.grid,
            )?)
        } else {
            None
        };
        let report = EnergyReport {
            t: newest.t,
            energy: energy_E(&stack).complete(),
            dissipation: dissipation_D(&stack).complete(),
            energy_eps: energy_eps(&stack, self.epsilon).complete(),
            dissipation_eps: dissipation_eps(&stack, self.epsilon).complete(),
            i_psi_min_gap: i_psi_min_gap(&stack),
            sobolev_energy: se.complete(),
            sobolev_dissipation: sd.complete(),
            cons_residual: cons,
            rho_dev_l2: rho_deviation_l2(&newest.rho, self.rho_bar, &self.grid),
            identity_residual: None,
            inner_iters,
            mean_rho: newest.rho.mean(),
        };
        Ok((report, identity))
    }
}
