use std::f64::consts::PI;

use crate::fields::{BulkField, Grid, InterfaceField};
use crate::hanzawa::Cutoff;
use crate::solver::Forcing;

/// Pointwise derivatives of a manufactured temperature.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BulkJet {
    pub u: f64,
    pub u_t: f64,
    pub u_xx: f64,
    pub u_z: f64,
    pub u_zz: f64,
    pub u_xz: f64,
}

/// Pointwise derivatives of a manufactured interface.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InterfaceJet {
    pub rho: f64,
    pub rho_x: f64,
    pub rho_xx: f64,
    pub rho_t: f64,
    /// `∂_x⁴ρ_t`.
    pub rho_t_xxxx: f64,
}

/// A closed-form pair `(u*, ρ*)` with exact derivatives.
pub trait Manufactured: Send + Sync {
    /// At `z ≠ 0`, or the one-sided limit selected by the sign of `z`.
    fn bulk(&self, t: f64, x: f64, z: f64) -> BulkJet;
    fn interface(&self, t: f64, x: f64) -> InterfaceJet;
}

/// `u* = e^{−t} cos(πz)(1 + β cos x)`, `ρ* = δ e^{−t} sin x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayingPair {
    pub beta: f64,
    pub delta: f64,
}

impl Default for DecayingPair {
    fn default() -> Self {
        Self {
            beta: 0.1,
            delta: 0.05,
        }
    }
}

impl Manufactured for DecayingPair {
    fn bulk(&self, t: f64, x: f64, z: f64) -> BulkJet {
        let e = (-t).exp();
        let (c, s) = ((PI * z).cos(), (PI * z).sin());
        let m = 1.0 + self.beta * x.cos();
        BulkJet {
            u: e * c * m,
            u_t: -e * c * m,
            u_xx: -e * c * self.beta * x.cos(),
            u_z: -PI * e * s * m,
            u_zz: -PI * PI * e * c * m,
            u_xz: PI * e * s * self.beta * x.sin(),
        }
    }

    fn interface(&self, t: f64, x: f64) -> InterfaceJet {
        let a = self.delta * (-t).exp();
        InterfaceJet {
            rho: a * x.sin(),
            rho_x: a * x.cos(),
            rho_xx: -a * x.sin(),
            rho_t: -a * x.sin(),
            rho_t_xxxx: -a * x.sin(),
        }
    }
}

/// Forcing that makes a [`Manufactured`] pair an exact solution of the
/// forced problem.
#[derive(Debug, Clone)]
pub struct ManufacturedForcing<M> {
    pub solution: M,
    pub epsilon: f64,
    pub cutoff: Cutoff,
}

/// Closed-form `(F_bulk, F_jump, g)` at time `t`.
pub fn manufactured_forcing<M: Manufactured>(
    solution: &M,
    epsilon: f64,
    cutoff: &Cutoff,
    t: f64,
    grid: &Grid,
) -> (BulkField, InterfaceField, InterfaceField) {
    let xs = grid.tangential.nodes();
    let zs = grid.normal.nodes();
    let mut bulk = BulkField::zeros(grid);
    for (j, &z) in zs.iter().enumerate() {
        if j == grid.center() {
            continue;
        }
        let (p, dp, ddp) = cutoff.eval(z);
        let row = bulk.row_mut(j);
        for (i, &x) in xs.iter().enumerate() {
            let r = solution.interface(t, x);
            let u = solution.bulk(t, x, z);
            let den = 1.0 + dp * r.rho;
            let num = 1.0 + p * p * r.rho_x * r.rho_x;
            let a = num / (den * den);
            let b = 2.0 * p * r.rho_x / den;
            let d = p * r.rho_xx / den - 2.0 * p * dp * r.rho_x * r.rho_x / (den * den)
                + ddp * r.rho * num / (den * den * den);
            let e = -p * r.rho_t / den;
            row[i] = u.u_t - u.u_xx - a * u.u_zz + b * u.u_xz + (d + e) * u.u_z;
        }
    }
    let mut jump = Vec::with_capacity(xs.len());
    let mut dirichlet = Vec::with_capacity(xs.len());
    for &x in &xs {
        let r = solution.interface(t, x);
        let br2 = 1.0 + r.rho_x * r.rho_x;
        let kappa = r.rho_xx / br2.powf(1.5);
        let below = solution.bulk(t, x, -0.0).u_z;
        let above = solution.bulk(t, x, 0.0).u_z;
        jump.push(r.rho_t + epsilon * r.rho_t_xxxx - br2 * (below - above));
        dirichlet.push(solution.bulk(t, x, 0.0).u - kappa);
    }
    (
        bulk,
        InterfaceField::from_vec(jump),
        InterfaceField::from_vec(dirichlet),
    )
}

impl<M: Manufactured> ManufacturedForcing<M> {
    pub fn new(solution: M, epsilon: f64, cutoff: Cutoff) -> Self {
        Self {
            solution,
            epsilon,
            cutoff,
        }
    }

    pub fn exact_bulk(&self, t: f64, grid: &Grid) -> BulkField {
        BulkField::from_fn(grid, |x, z| self.solution.bulk(t, x, z).u)
    }

    pub fn exact_interface(&self, t: f64, grid: &Grid) -> InterfaceField {
        InterfaceField::from_fn(grid, |x| self.solution.interface(t, x).rho)
    }
}

impl<M: Manufactured> Forcing for ManufacturedForcing<M> {
    fn bulk(&self, t: f64, grid: &Grid) -> BulkField {
        manufactured_forcing(&self.solution, self.epsilon, &self.cutoff, t, grid).0
    }

    fn jump(&self, t: f64, grid: &Grid) -> InterfaceField {
        manufactured_forcing(&self.solution, self.epsilon, &self.cutoff, t, grid).1
    }

    fn dirichlet(&self, t: f64, grid: &Grid) -> InterfaceField {
        manufactured_forcing(&self.solution, self.epsilon, &self.cutoff, t, grid).2
    }
}
