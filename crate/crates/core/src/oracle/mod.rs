//! Reference results computed without the solver or the energy layer.

mod manufactured;
mod spectrum;

pub use manufactured::{
    manufactured_forcing, BulkJet, DecayingPair, InterfaceJet, Manufactured, ManufacturedForcing,
};
pub use spectrum::{linearized_spectrum, LinearizedMode};

use crate::fields::{Grid, InterfaceField};

/// Exact curvature of `ρ = δ sin(kx)`.
pub fn curvature_closed_form(delta: f64, k: u32, grid: &Grid) -> InterfaceField {
    let k = f64::from(k);
    InterfaceField::from_fn(grid, |x| {
        let c = (k * x).cos();
        -delta * k * k * (k * x).sin() * (1.0 + delta * delta * k * k * c * c).powf(-1.5)
    })
}
