//! Fixed-domain simulation of the two-phase Stefan problem with surface
//! tension near a flat interface, with energy diagnostics.

pub mod cli;
pub mod energy;
pub mod error;
pub mod fields;
pub mod hanzawa;
pub mod io;
pub mod oracle;
pub mod scenario;
pub mod solver;
pub mod verify;

pub use error::{Result, StefanError};
