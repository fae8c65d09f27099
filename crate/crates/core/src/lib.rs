//! Quantum Hamilton-Jacobi trajectories of the hydrogen electron.
//!
//! Internal units throughout: ħ = m₀ = a₀ = 1 and k e² = 1, so E_n = −1/(2n²)
//! and V(r) = −1/r. SI only appears at the I/O boundary (see [`units`]).

pub mod analysis;
pub mod basis;
pub mod classical;
pub mod error;
pub mod io;
pub mod momenta;
pub mod ode;
pub mod quantum;
pub mod residuals;
pub mod units;

pub use error::{QhjError, Result};
