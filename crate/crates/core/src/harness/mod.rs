//! End-to-end workflows built on the library: %PLB saved, a single adaptive
//! release, and corpus experiments.

mod adaptive;
mod experiment;

pub use adaptive::{run_adaptive, AdaptiveConfig, DecisionMode, Transcript};
pub use experiment::{
    run_experiment, BlockRecord, Corpus, ExperimentConfig, ExperimentReport, ExperimentRow, Family,
    Strategy, PLB_DEFINITION,
};

use crate::decompose::common_mechanism;
use crate::error::{Error, Result};
use crate::mechanism::LinearGaussianMechanism;
use crate::psd::Tolerances;

/// `100 · ρ(common) / ρ` for two targets at the same ρ: the share of the
/// budget a standalone release of the common queries would have cost.
pub fn plb_saved(
    m1: &LinearGaussianMechanism,
    m2: &LinearGaussianMechanism,
    tol: Tolerances,
) -> Result<f64> {
    let (r1, r2) = (m1.rho(), m2.rho());
    if !(r1 > 0.0) || (r1 - r2).abs() > 1e-9 * r1.max(r2) {
        return Err(Error::invalid(format!(
            "targets must have equal positive rho (got {r1} and {r2})"
        )));
    }
    let common = common_mechanism(m1, m2, tol)?;
    Ok(100.0 * common.rho() / r1)
}
