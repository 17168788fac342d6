//! One adaptive release: common → decision → chosen residual → recreate.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::decide::{
    choose_general, choose_nested, nesting_map, snr_spread, Decision, SnrPolicy, SnrReport,
    SpreadStats, DEFAULT_L1_BUDGET,
};
use crate::decompose::{common_mechanism, residual_mechanism, Reconstruction};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mechanism::{DataVector, LinearGaussianMechanism};
use crate::psd::Tolerances;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DecisionMode {
    /// `B₁ = A·B₂`; choose by the SNR bounds.
    Nested,
    /// Probe candidate datasets consistent with the common output and apply
    /// the policy to the probe answers (see `decide::choose_general`).
    General {
        #[serde(default = "default_probes")]
        num_probes: usize,
        #[serde(default = "default_l1")]
        l1_budget: f64,
    },
}

fn default_probes() -> usize {
    20
}

fn default_l1() -> f64 {
    DEFAULT_L1_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub mode: DecisionMode,
    pub policy: SnrPolicy,
}

#[derive(Debug, Clone, Serialize)]
pub struct Transcript {
    pub seed: u64,
    pub mode: DecisionMode,
    pub policy: SnrPolicy,
    pub decision: Decision,
    /// 1 or 2; absent on Stop.
    pub chosen: Option<usize>,
    pub o_common: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr: Option<SnrReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<[SpreadStats; 2]>,
    pub o_residual: Option<Vec<f64>>,
    pub answer: Option<Vec<f64>>,
    pub rho_common: f64,
    pub rho_residual: f64,
    /// ρ of the stacked (common, residual) release actually made.
    pub rho_total: f64,
    /// ρ of the chosen target; equal to `rho_total` up to rounding.
    pub rho_target: Option<f64>,
    /// max |per-record ρ(common) + per-record ρ(residual) − per-record ρ(target)|.
    pub per_record_gap: f64,
}

// Stream indices under the release seed.
const STREAM_COMMON: u64 = 0;
const STREAM_RESIDUAL: u64 = 1;
const STREAM_TOPUP: u64 = 2;
const PROBE_TAG: u64 = 3;

fn max_gap(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| (x + y - z).abs())
        .fold(0.0, f64::max)
}

/// Runs the two-target adaptive workflow on `x`.
pub fn run_adaptive(
    m1: &LinearGaussianMechanism,
    m2: &LinearGaussianMechanism,
    x: &DataVector,
    cfg: &AdaptiveConfig,
    seed: u64,
    tol: Tolerances,
    exec: Exec,
) -> Result<Transcript> {
    cfg.policy.validate()?;
    if x.len() != m1.domain_size() {
        return Err(Error::invalid(
            "data vector does not match the mechanisms' domain",
        ));
    }
    let common = common_mechanism(m1, m2, tol)?;
    if common.is_empty() {
        return Err(Error::invalid(
            "targets share no queries; there is nothing to decide with",
        ));
    }
    let o_common = common.run_with(x, &mut rng::stream(seed, STREAM_COMMON))?;

    let mut snr = None;
    let mut spread = None;
    let decision = match &cfg.mode {
        DecisionMode::Nested => {
            let a = nesting_map(m1.query(), m2.query(), tol)?.ok_or_else(|| {
                Error::invalid("primary queries are not nested in the secondary queries")
            })?;
            let r = crate::decide::snr_bounds(&o_common, &common, m1, m2, &a, tol)?;
            let d = choose_nested(&r, cfg.policy);
            snr = Some(r);
            d
        }
        DecisionMode::General {
            num_probes,
            l1_budget,
        } => {
            let probe_seed = rng::child_seed(seed, PROBE_TAG);
            let s1 = snr_spread(
                &o_common,
                &common,
                m1.query(),
                *num_probes,
                probe_seed,
                *l1_budget,
                exec,
            );
            let s2 = snr_spread(
                &o_common,
                &common,
                m2.query(),
                *num_probes,
                probe_seed,
                *l1_budget,
                exec,
            );
            match (s1, s2) {
                (Ok(s1), Ok(s2)) => {
                    let d = choose_general(&s1, &s2, m1, m2, cfg.policy);
                    spread = Some([s1, s2]);
                    d
                }
                // No nonnegative dataset explains o*: nothing worth spending on.
                (Err(Error::Infeasible(_)), _) | (_, Err(Error::Infeasible(_))) => Decision::Stop,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
    };

    let mut t = Transcript {
        seed,
        mode: cfg.mode.clone(),
        policy: cfg.policy,
        decision,
        chosen: None,
        o_common: o_common.iter().copied().collect(),
        snr,
        spread,
        o_residual: None,
        answer: None,
        rho_common: common.rho(),
        rho_residual: 0.0,
        rho_total: common.rho(),
        rho_target: None,
        per_record_gap: 0.0,
    };
    let (idx, target) = match decision {
        Decision::Stop => return Ok(t),
        Decision::Primary => (1, m1),
        Decision::Secondary => (2, m2),
    };
    let residual = residual_mechanism(target, &common, tol)?;
    let o_residual = if residual.is_empty() {
        DVector::zeros(0)
    } else {
        residual.run_with(x, &mut rng::stream(seed, STREAM_RESIDUAL))?
    };
    let recon = Reconstruction::new(target, &common, &residual, tol)?;
    let answer = recon.combine(
        &o_common,
        &o_residual,
        Some(&mut rng::stream(seed, STREAM_TOPUP)),
    )?;
    let stacked = LinearGaussianMechanism::stack(&[&common, &residual])?;

    t.chosen = Some(idx);
    t.o_residual = Some(o_residual.iter().copied().collect());
    t.answer = Some(answer.iter().copied().collect());
    t.rho_residual = residual.rho();
    t.rho_total = stacked.rho();
    t.rho_target = Some(target.rho());
    t.per_record_gap = max_gap(
        &common.per_record_rho(),
        &residual.per_record_rho(),
        &target.per_record_rho(),
    );
    Ok(t)
}
