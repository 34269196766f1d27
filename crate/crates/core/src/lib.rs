//! Simulation and end-to-end training of collective-spin sensors for
//! single-shot Bayesian estimation.
//!
//! The sensing pipeline is `ψ(u) = U_de R_z(u) U_en ψ0` on the `L + 1`
//! dimensional symmetric subspace, followed by a `J_z` measurement whose
//! histogram feeds a linear readout.

pub mod eigentask;
pub mod error;
pub mod info;
pub mod linalg;
pub mod opt;
pub mod prior;
pub mod readout;
pub mod spin;
pub mod target;

pub use error::{Error, Result};
