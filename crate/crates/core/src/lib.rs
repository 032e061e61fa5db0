//! Goal-oriented sensitivity analysis of hyperparameters with the
//! Hilbert-Schmidt independence criterion, and a two-step Bayesian
//! optimization that spends its budget on the parameters that matter.

pub mod analysis;
pub mod error;
pub mod gp;
pub mod harness;
pub mod hsic;
pub mod objectives;
pub mod report;
pub mod rng;
pub mod space;
pub mod trial;
pub mod two_step;

pub use error::{Error, Result};
