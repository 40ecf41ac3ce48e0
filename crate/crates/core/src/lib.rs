//! Multivariate skewed variance gamma (MSVG) estimation.
//!
//! The crate is organised bottom-up:
//!
//! - [`specfun`]: log-scale Bessel `K`, digamma, trigamma, log-gamma.
//! - [`msvg`]: the distribution (parameters, density, sampling, E-step moments).
//! - [`ecm`]: MCECM / ECME / hybrid fitting, optionally with an AR(1) mean.
//! - [`infer`]: Louis observed information, standard errors and AICc.
//! - [`harness`]: replicated simulation studies.
//!
//! Per-observation work runs on rayon when the `parallel` feature is enabled
//! (the default); every reduction is a sequential fold over observation order,
//! so results do not depend on the thread count.

pub mod ecm;
pub mod error;
pub mod harness;
pub mod infer;
pub mod msvg;
pub mod specfun;

mod exec;
mod linalg;
mod optim;

pub use error::{Error, Result};
