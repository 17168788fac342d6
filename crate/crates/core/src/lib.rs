//! Common/residual decomposition of linear Gaussian mechanisms.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decide;
pub mod decompose;
pub mod error;
pub mod exec;
pub mod harness;
pub mod mechanism;
pub mod psd;
pub mod rng;
pub mod spec;
pub mod workloads;

pub use error::{Error, Result};
pub use exec::Exec;
pub use mechanism::{DataVector, LinearGaussianMechanism, PrivacyAccount, PrivacyCostMatrix};
pub use psd::{SymMatrix, Tolerances};
