//! Turning the common mechanism's output into a choice between targets.
//!
//! Nested analyses (`B₁ = A·B₂`) get 3σ confidence bounds on the primary
//! queries and the implied SNR bounds under each target; general pairs are
//! probed with candidate datasets consistent with the common output.

pub mod lp;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mechanism::LinearGaussianMechanism;
use crate::psd::{self, rel_frobenius, sym_eig, SymMatrix, Tolerances};
use crate::rng;
use lp::LpOutcome;

/// L1 radius of the candidate-dataset constraint, in whitened units.
pub const DEFAULT_L1_BUDGET: f64 = 2.0;

const NESTING_RTOL: f64 = 1e-8;

/// `A` with `B₁ = A·B₂`, or `None` when `B₁` is not nested in `B₂`.
pub fn nesting_map(
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    tol: Tolerances,
) -> Result<Option<DMatrix<f64>>> {
    if b1.ncols() != b2.ncols() {
        return Err(Error::invalid(format!(
            "column counts differ: {} vs {}",
            b1.ncols(),
            b2.ncols()
        )));
    }
    let a = b1 * psd::pinv(b2, tol)?;
    let resid = (&a * b2 - b1).norm();
    if resid <= NESTING_RTOL * b1.norm() {
        Ok(Some(a))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// `(A*o*)ᵢ − 3σᵢ`.
    pub lower: Vec<f64>,
    /// `(A*o*)ᵢ + 3σᵢ`.
    pub upper: Vec<f64>,
    pub snr_lower_primary: Vec<f64>,
    pub snr_upper_primary: Vec<f64>,
    pub snr_lower_secondary: Vec<f64>,
    pub snr_upper_secondary: Vec<f64>,
}

impl SnrReport {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

/// Confidence and SNR bounds for the primary queries `B₁` of `m1`, where
/// `m2` answers them through `a_nest` (`B₁ = A·B₂`).
pub fn snr_bounds(
    o_common: &DVector<f64>,
    common: &LinearGaussianMechanism,
    m1: &LinearGaussianMechanism,
    m2: &LinearGaussianMechanism,
    a_nest: &DMatrix<f64>,
    tol: Tolerances,
) -> Result<SnrReport> {
    let d = common.domain_size();
    if m1.domain_size() != d || m2.domain_size() != d {
        return Err(Error::invalid("mechanisms must share a domain"));
    }
    if o_common.len() != common.num_queries() {
        return Err(Error::invalid(
            "common output length does not match the common mechanism",
        ));
    }
    if a_nest.shape() != (m1.num_queries(), m2.num_queries()) {
        return Err(Error::invalid("nesting map has the wrong shape"));
    }
    let b1 = m1.query();
    let a_star = b1 * psd::pinv(common.query(), tol)?;
    if rel_frobenius(&(&a_star * common.query()), b1, 1e-300) > NESTING_RTOL {
        return Err(Error::NotAnswerable);
    }
    let est = &a_star * o_common;
    let var_est = common.covariance().congruence(&a_star).diagonal();
    let var1 = m1.covariance().diagonal();
    let var2 = m2.covariance().congruence(a_nest).diagonal();

    let n = b1.nrows();
    let mut r = SnrReport {
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
        snr_lower_primary: Vec::with_capacity(n),
        snr_upper_primary: Vec::with_capacity(n),
        snr_lower_secondary: Vec::with_capacity(n),
        snr_upper_secondary: Vec::with_capacity(n),
    };
    for i in 0..n {
        let sd = var_est[i].max(0.0).sqrt();
        let (lo, hi) = (est[i] - 3.0 * sd, est[i] + 3.0 * sd);
        let (s1, s2) = (var1[i].sqrt(), var2[i].sqrt());
        if !(s1 > 0.0 && s2 > 0.0) {
            return Err(Error::invalid(format!(
                "query {i} has zero noise under a target"
            )));
        }
        r.lower.push(lo);
        r.upper.push(hi);
        r.snr_lower_primary.push(lo / s1);
        r.snr_upper_primary.push(hi / s1);
        r.snr_lower_secondary.push(lo / s2);
        r.snr_upper_secondary.push(hi / s2);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPolicy {
    /// Required fraction of queries, in (0, 1].
    pub x: f64,
    /// Required SNR, > 0.
    pub y: f64,
}

impl SnrPolicy {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let p = SnrPolicy { x, y };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x > 0.0 && self.x <= 1.0) {
            return Err(Error::invalid(format!(
                "policy x must be in (0, 1], got {}",
                self.x
            )));
        }
        if !(self.y > 0.0 && self.y.is_finite()) {
            return Err(Error::invalid(format!(
                "policy y must be positive, got {}",
                self.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Primary,
    Secondary,
    Stop,
}

fn fraction_at_least(v: &[f64], y: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().filter(|&&s| s >= y).count() as f64 / v.len() as f64
}

/// Secondary if enough secondary lower bounds clear `y`; Stop if not even the
/// primary upper bounds do; otherwise Primary. Both comparisons are inclusive.
pub fn choose_nested(report: &SnrReport, policy: SnrPolicy) -> Decision {
    if fraction_at_least(&report.snr_lower_secondary, policy.y) >= policy.x {
        Decision::Secondary
    } else if fraction_at_least(&report.snr_upper_primary, policy.y) < policy.x {
        Decision::Stop
    } else {
        Decision::Primary
    }
}

/// Whitened view of the common mechanism used by the candidate-dataset LP.
struct Whitened {
    wb: DMatrix<f64>,
    wo: DVector<f64>,
}

fn whiten(o_common: &DVector<f64>, common: &LinearGaussianMechanism) -> Result<Whitened> {
    if common.is_empty() {
        return Err(Error::invalid("common mechanism is empty"));
    }
    if o_common.len() != common.num_queries() {
        return Err(Error::invalid(
            "common output length does not match the common mechanism",
        ));
    }
    let w: SymMatrix = sym_eig(common.covariance())?.map(|l| 1.0 / l.sqrt());
    Ok(Whitened {
        wb: w.as_matrix() * common.query(),
        wo: w.as_matrix() * o_common,
    })
}

/// `‖Σ*^{-1/2}(B*x − o*)‖₁`.
pub fn whitened_l1(
    x: &DVector<f64>,
    o_common: &DVector<f64>,
    common: &LinearGaussianMechanism,
) -> Result<f64> {
    if x.len() != common.domain_size() {
        return Err(Error::invalid(
            "data vector length does not match the domain",
        ));
    }
    let w = whiten(o_common, common)?;
    Ok((&w.wb * x - &w.wo).iter().map(|v| v.abs()).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Found(DVector<f64>),
    /// No nonnegative dataset lies within the L1 ball.
    Infeasible,
    /// The direction is not bounded by the constraint.
    Unbounded,
}

fn candidate_whitened(w: &Whitened, cost: &DVector<f64>, l1_budget: f64) -> Candidate {
    let (m, d) = w.wb.shape();
    let n = d + m;
    let mut a = DMatrix::zeros(2 * m + 1, n);
    let mut b = DVector::zeros(2 * m + 1);
    for i in 0..m {
        for j in 0..d {
            a[(i, j)] = w.wb[(i, j)];
            a[(m + i, j)] = -w.wb[(i, j)];
        }
        a[(i, d + i)] = -1.0;
        a[(m + i, d + i)] = -1.0;
        b[i] = w.wo[i];
        b[m + i] = -w.wo[i];
        a[(2 * m, d + i)] = 1.0;
    }
    b[2 * m] = l1_budget;
    let mut c = DVector::zeros(n);
    c.rows_mut(0, d).copy_from(cost);
    match lp::solve(&c, &a, &b) {
        LpOutcome::Optimal { x, .. } => Candidate::Found(x.rows(0, d).into_owned()),
        LpOutcome::Infeasible => Candidate::Infeasible,
        LpOutcome::Unbounded => Candidate::Unbounded,
    }
}

/// Minimizes `cᵀB₁x̂` over nonnegative `x̂` with `‖Σ*^{-1/2}(B*x̂ − o*)‖₁ ≤ l1_budget`.
pub fn candidate_dataset(
    o_common: &DVector<f64>,
    common: &LinearGaussianMechanism,
    b1: &DMatrix<f64>,
    c: &DVector<f64>,
    l1_budget: f64,
) -> Result<Candidate> {
    if b1.ncols() != common.domain_size() || c.len() != b1.nrows() {
        return Err(Error::invalid("direction/query dimensions do not match"));
    }
    if !(l1_budget > 0.0) {
        return Err(Error::invalid("L1 budget must be positive"));
    }
    let w = whiten(o_common, common)?;
    Ok(candidate_whitened(&w, &(b1.transpose() * c), l1_budget))
}

/// Per-query statistics of `B₁x̂` over the probe candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub probes: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased sample variance (0 with fewer than two probes).
    pub variance: Vec<f64>,
}

impl SpreadStats {
    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }
}

/// Unit direction for probe `index`, uniform on the sphere.
pub fn probe_direction(seed: u64, index: u64, dim: usize) -> DVector<f64> {
    let mut r = rng::stream(seed, index);
    loop {
        let v = DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 || dim == 0 {
            return if dim == 0 { v } else { v / n };
        }
    }
}

/// Solves the candidate LP for `num_probes` seeded random directions and
/// summarizes the spread of `B₁x̂`.
pub fn snr_spread(
    o_common: &DVector<f64>,
    common: &LinearGaussianMechanism,
    b1: &DMatrix<f64>,
    num_probes: usize,
    seed: u64,
    l1_budget: f64,
    exec: Exec,
) -> Result<SpreadStats> {
    let q = b1.nrows();
    if num_probes == 0 {
        return Ok(SpreadStats {
            probes: 0,
            min: Vec::new(),
            max: Vec::new(),
            mean: Vec::new(),
            variance: Vec::new(),
        });
    }
    if b1.ncols() != common.domain_size() {
        return Err(Error::invalid("query matrix does not match the domain"));
    }
    if !(l1_budget > 0.0) {
        return Err(Error::invalid("L1 budget must be positive"));
    }
    let w = whiten(o_common, common)?;
    let b1t = b1.transpose();
    let answers: Vec<DVector<f64>> = exec.try_map(num_probes, |i| {
        let dir = probe_direction(seed, i as u64, q);
        match candidate_whitened(&w, &(&b1t * dir), l1_budget) {
            Candidate::Found(x) => Ok(b1 * x),
            Candidate::Infeasible => Err(Error::Infeasible(
                "common output is inconsistent with every nonnegative dataset".into(),
            )),
            Candidate::Unbounded => Err(Error::Infeasible(format!(
                "probe {i} is unbounded: the queries are not limited by the common output"
            ))),
        }
    })?;

    let n = answers.len() as f64;
    let mut stats = SpreadStats {
        probes: answers.len(),
        min: vec![f64::INFINITY; q],
        max: vec![f64::NEG_INFINITY; q],
        mean: vec![0.0; q],
        variance: vec![0.0; q],
    };
    for k in 0..q {
        let mean = answers.iter().map(|a| a[k]).sum::<f64>() / n;
        let mut ss = 0.0;
        for a in &answers {
            stats.min[k] = stats.min[k].min(a[k]);
            stats.max[k] = stats.max[k].max(a[k]);
            ss += (a[k] - mean).powi(2);
        }
        stats.mean[k] = mean;
        stats.variance[k] = if answers.len() > 1 {
            ss / (n - 1.0)
        } else {
            0.0
        };
    }
    Ok(stats)
}

/// Decision for a non-nested pair from probe statistics, mirroring
/// [`choose_nested`]: Secondary when enough probe-mean answers of `m2` reach
/// SNR `y`; Stop when not even the largest probe answers of `m1` do;
/// otherwise Primary.
pub fn choose_general(
    spread1: &SpreadStats,
    spread2: &SpreadStats,
    m1: &LinearGaussianMechanism,
    m2: &LinearGaussianMechanism,
    policy: SnrPolicy,
) -> Decision {
    let snr = |v: &[f64], m: &LinearGaussianMechanism| -> Vec<f64> {
        v.iter()
            .zip(m.covariance().diagonal())
            .map(|(a, var)| a / var.sqrt())
            .collect()
    };
    if fraction_at_least(&snr(&spread2.mean, m2), policy.y) >= policy.x {
        Decision::Secondary
    } else if fraction_at_least(&snr(&spread1.max, m1), policy.y) < policy.x {
        Decision::Stop
    } else {
        Decision::Primary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhcConfig {
    /// Fraction of the budget spent on the noisy total, in (0, 1).
    pub gamma: f64,
    pub thetas: [f64; 3],
}

impl DhcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!(
                "DHC gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        let [a, b, c] = self.thetas;
        if !(a.is_finite() && c.is_finite() && a < b && b < c) {
            return Err(Error::invalid(
                "DHC thresholds must be finite and strictly increasing",
            ));
        }
        Ok(())
    }
}

/// Bucketization index in 1..=4 chosen from a noisy total, half-open at each
/// threshold.
pub fn dhc_select(noisy_total: f64, cfg: &DhcConfig) -> usize {
    1 + cfg.thetas.iter().filter(|&&th| noisy_total >= th).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(lo2: Vec<f64>, up1: Vec<f64>) -> SnrReport {
        let n = lo2.len();
        SnrReport {
            lower: vec![0.0; n],
            upper: vec![0.0; n],
            snr_lower_primary: vec![0.0; n],
            snr_upper_primary: up1,
            snr_lower_secondary: lo2,
            snr_upper_secondary: vec![0.0; n],
        }
    }

    #[test]
    fn nesting_identity_and_failure() {
        let tol = Tolerances::default();
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let a = nesting_map(&b, &b, tol).unwrap().unwrap();
        assert!((a - DMatrix::identity(2, 2)).norm() < 1e-12);
        let other = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert!(nesting_map(&other, &b, tol).unwrap().is_none());
        assert!(nesting_map(&other, &DMatrix::zeros(1, 2), tol).is_err());
    }

    #[test]
    fn single_query_bounds() {
        let tol = Tolerances::default();
        let b = DMatrix::from_element(1, 1, 1.0);
        let common = LinearGaussianMechanism::with_variance(b.clone(), 25.0).unwrap();
        let m1 = LinearGaussianMechanism::with_variance(b.clone(), 4.0).unwrap();
        let m2 = LinearGaussianMechanism::with_variance(b, 100.0).unwrap();
        let o = DVector::from_element(1, 100.0);
        let r = snr_bounds(&o, &common, &m1, &m2, &DMatrix::identity(1, 1), tol).unwrap();
        assert_eq!(r.lower, vec![85.0]);
        assert_eq!(r.upper, vec![115.0]);
        assert_eq!(r.snr_lower_primary, vec![42.5]);
        assert_eq!(r.snr_upper_primary, vec![57.5]);
        assert_eq!(r.snr_lower_secondary, vec![8.5]);
    }

    #[test]
    fn snr_bounds_requires_answerable_primary() {
        let tol = Tolerances::default();
        let common =
            LinearGaussianMechanism::with_variance(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), 1.0)
                .unwrap();
        let m = LinearGaussianMechanism::with_variance(DMatrix::identity(2, 2), 1.0).unwrap();
        let o = DVector::from_element(1, 3.0);
        assert!(matches!(
            snr_bounds(&o, &common, &m, &m, &DMatrix::identity(2, 2), tol),
            Err(Error::NotAnswerable)
        ));
    }

    #[test]
    fn policy_examples() {
        let p = SnrPolicy::new(0.5, 5.0).unwrap();
        assert_eq!(
            choose_nested(&report(vec![10.0, 1.0], vec![0.0, 0.0]), p),
            Decision::Secondary
        );
        assert_eq!(
            choose_nested(
                &report(vec![0.0, 0.0], vec![0.1, 0.2]),
                SnrPolicy::new(0.5, 1.0).unwrap()
            ),
            Decision::Stop
        );
        assert_eq!(
            choose_nested(&report(vec![1.0, 1.0], vec![100.0, 100.0]), p),
            Decision::Primary
        );
        assert!(SnrPolicy::new(0.0, 1.0).is_err());
        assert!(SnrPolicy::new(1.0, 0.0).is_err());
    }

    #[test]
    fn dhc_half_open_thresholds() {
        let cfg = DhcConfig {
            gamma: 0.1,
            thetas: [10.0, 100.0, 1000.0],
        };
        cfg.validate().unwrap();
        assert_eq!(dhc_select(9.0, &cfg), 1);
        assert_eq!(dhc_select(10.0, &cfg), 2);
        assert_eq!(dhc_select(100.0, &cfg), 3);
        assert_eq!(dhc_select(1000.0, &cfg), 4);
        assert_eq!(dhc_select(-5.0, &cfg), 1);
        assert!(DhcConfig {
            gamma: 0.1,
            thetas: [1.0, 1.0, 2.0]
        }
        .validate()
        .is_err());
        assert!(DhcConfig {
            gamma: 1.0,
            thetas: [1.0, 2.0, 3.0]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn one_dimensional_candidate() {
        let common =
            LinearGaussianMechanism::with_variance(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), 1.0)
                .unwrap();
        let b1 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let o = DVector::from_element(1, 10.0);
        let c = DVector::from_element(1, 1.0);
        match candidate_dataset(&o, &common, &b1, &c, DEFAULT_L1_BUDGET).unwrap() {
            Candidate::Found(x) => {
                assert!(x[0].abs() < 1e-9);
                assert!((8.0 - 1e-9..=12.0 + 1e-9).contains(&x[1]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_common_output_is_infeasible() {
        let common =
            LinearGaussianMechanism::with_variance(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), 1.0)
                .unwrap();
        let o = DVector::from_element(1, -5.0);
        let b1 = DMatrix::identity(2, 2);
        let c = DVector::from_element(2, 1.0);
        assert_eq!(
            candidate_dataset(&o, &common, &b1, &c, 2.0).unwrap(),
            Candidate::Infeasible
        );
        assert!(matches!(
            snr_spread(&o, &common, &b1, 3, 1, 2.0, Exec::Sequential),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn spread_is_empty_without_probes() {
        let common =
            LinearGaussianMechanism::with_variance(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), 1.0)
                .unwrap();
        let s = snr_spread(
            &DVector::from_element(1, 4.0),
            &common,
            &DMatrix::identity(2, 2),
            0,
            7,
            2.0,
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(s.probes, 0);
        assert!(s.min.is_empty());
    }

    #[test]
    fn probe_directions_are_unit_and_seeded() {
        let a = probe_direction(3, 5, 4);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a, probe_direction(3, 5, 4));
        assert_ne!(a, probe_direction(3, 6, 4));
    }
}
