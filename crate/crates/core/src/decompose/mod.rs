//! Maximally common mechanisms, residual mechanisms, and reconstruction.
//!
//! For targets `M₁ … M_k` the common mechanism answers the intersection of
//! their row spaces with the least noise that every target can still supply;
//! the residual of `Mᵢ` carries exactly the remaining privacy cost, so running
//! `(common, residualᵢ)` is equivalent to running `Mᵢ`.

mod recreate;
mod solver;

use nalgebra::DMatrix;
use serde::Serialize;

pub use recreate::{recreate, Reconstruction};
pub use solver::{min_trace_dominating, SolveOutcome, SolverConfig};

use crate::error::{Error, Result};
use crate::mechanism::{self, standardize, LinearGaussianMechanism};
use crate::psd::{self, loewner_leq, matrix_to_rows, SymMatrix, Tolerances};

/// Intersection basis `B*` and the constraint matrices `AᵢAᵢᵀ`,
/// `Aᵢ = B*·(standardized Bᵢ)⁺`.
#[derive(Debug, Clone)]
pub struct CommonConstraints {
    pub basis: DMatrix<f64>,
    pub constraints: Vec<SymMatrix>,
}

fn check_same_domain(mechs: &[&LinearGaussianMechanism]) -> Result<usize> {
    let d = mechs
        .first()
        .ok_or_else(|| Error::invalid("at least one mechanism is required"))?
        .domain_size();
    if let Some(bad) = mechs.iter().find(|m| m.domain_size() != d) {
        return Err(Error::invalid(format!(
            "domain mismatch: {} vs {d}",
            bad.domain_size()
        )));
    }
    Ok(d)
}

pub fn common_constraints(
    mechs: &[&LinearGaussianMechanism],
    tol: Tolerances,
) -> Result<CommonConstraints> {
    let d = check_same_domain(mechs)?;
    let standardized: Vec<LinearGaussianMechanism> = mechs
        .iter()
        .map(|m| standardize(m, tol))
        .collect::<Result<_>>()?;
    let mut basis = psd::rowspace_basis(standardized[0].query(), tol)?;
    for s in &standardized[1..] {
        if basis.nrows() == 0 {
            break;
        }
        basis = psd::rowspace_intersection(&basis, s.query(), tol)?;
    }
    if basis.nrows() == 0 {
        return Ok(CommonConstraints {
            basis: DMatrix::zeros(0, d),
            constraints: vec![SymMatrix::zeros(0); mechs.len()],
        });
    }
    let constraints = standardized
        .iter()
        .map(|s| {
            let a = &basis * psd::pinv(s.query(), tol)?;
            Ok(SymMatrix::new(&a * a.transpose()))
        })
        .collect::<Result<_>>()?;
    Ok(CommonConstraints { basis, constraints })
}

/// Closed-form maximally common mechanism of two mechanisms:
/// `Σ* = (X₁ + X₂)/2 + |X₂ − X₁|/2` with `Xᵢ = AᵢAᵢᵀ`.
pub fn common_mechanism(
    m1: &LinearGaussianMechanism,
    m2: &LinearGaussianMechanism,
    tol: Tolerances,
) -> Result<LinearGaussianMechanism> {
    let cc = common_constraints(&[m1, m2], tol)?;
    if cc.basis.nrows() == 0 {
        return Ok(LinearGaussianMechanism::empty(m1.domain_size()));
    }
    let (x1, x2) = (&cc.constraints[0], &cc.constraints[1]);
    let sigma = x1
        .add(x2)
        .scale(0.5)
        .add(&psd::psd_abs(&x2.sub(x1))?.scale(0.5));
    LinearGaussianMechanism::new(cc.basis, sigma)
}

/// Maximally common mechanism of any number of mechanisms, solving the
/// trace-minimization numerically. One mechanism yields its standardization.
pub fn common_mechanism_multi(
    mechs: &[&LinearGaussianMechanism],
    cfg: &SolverConfig,
    tol: Tolerances,
) -> Result<LinearGaussianMechanism> {
    cfg.validate()?;
    let d = check_same_domain(mechs)?;
    if mechs.len() == 1 {
        return standardize(mechs[0], tol);
    }
    let cc = common_constraints(mechs, tol)?;
    if cc.basis.nrows() == 0 {
        return Ok(LinearGaussianMechanism::empty(d));
    }
    let out = min_trace_dominating(&cc.constraints, cfg)?;
    LinearGaussianMechanism::new(cc.basis, out.sigma)
}

/// Residual of `target` after `common`: the standardized mechanism whose cost
/// matrix is `cost(target) − cost(common)`.
pub fn residual_mechanism(
    target: &LinearGaussianMechanism,
    common: &LinearGaussianMechanism,
    tol: Tolerances,
) -> Result<LinearGaussianMechanism> {
    if target.domain_size() != common.domain_size() {
        return Err(Error::invalid("target and common mechanism domains differ"));
    }
    let ct = target.cost_matrix();
    let cc = common.cost_matrix();
    if !loewner_leq(cc.matrix(), ct.matrix(), tol)? {
        return Err(Error::NotCommon(
            "common mechanism is not answerable from the target".into(),
        ));
    }
    let scale = psd::sym_eig(ct.matrix())?.spectral_scale();
    let diff = ct.matrix().sub(cc.matrix());
    mechanism::standardize_cost(&diff, Some(scale), tol)
}

/// Per-target verification numbers for a decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct TargetCheck {
    /// `‖cost(common) + cost(residual) − cost(target)‖_F / ‖cost(target)‖_F`.
    pub cost_identity_error: f64,
    /// `‖A*B_c + A′B_r − B_t‖_F / ‖B_t‖_F`.
    pub mean_identity_error: f64,
    /// `λ_min(Σ* − AᵢAᵢᵀ)` for this target's constraint (0 rows → 0).
    pub constraint_slack: f64,
    pub common_answerable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub targets: Vec<TargetCheck>,
    pub max_cost_identity_error: f64,
    pub max_mean_identity_error: f64,
}

/// Common mechanism, one residual per target, and the reconstruction maps.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub targets: Vec<LinearGaussianMechanism>,
    pub common: LinearGaussianMechanism,
    pub residuals: Vec<LinearGaussianMechanism>,
    pub recon: Vec<Reconstruction>,
    pub report: VerificationReport,
}

impl Decomposition {
    /// Two targets use the closed form; three or more use the numerical solver.
    pub fn new(
        targets: Vec<LinearGaussianMechanism>,
        cfg: &SolverConfig,
        tol: Tolerances,
    ) -> Result<Self> {
        let refs: Vec<&LinearGaussianMechanism> = targets.iter().collect();
        let common = match refs.len() {
            2 => common_mechanism(refs[0], refs[1], tol)?,
            _ => common_mechanism_multi(&refs, cfg, tol)?,
        };
        Self::with_common(targets, common, tol)
    }

    /// Decomposes each target against a caller-supplied common mechanism.
    pub fn with_common(
        targets: Vec<LinearGaussianMechanism>,
        common: LinearGaussianMechanism,
        tol: Tolerances,
    ) -> Result<Self> {
        let refs: Vec<&LinearGaussianMechanism> = targets.iter().collect();
        check_same_domain(&refs)?;
        let cc = common_constraints(&refs, tol)?;
        let mut residuals = Vec::with_capacity(targets.len());
        let mut recon = Vec::with_capacity(targets.len());
        let mut checks = Vec::with_capacity(targets.len());
        let cost_c = common.cost_matrix();
        for (i, t) in targets.iter().enumerate() {
            let r = residual_mechanism(t, &common, tol)?;
            let rc = Reconstruction::new(t, &common, &r, tol)?;
            let cost_t = t.cost_matrix();
            let sum = cost_c.matrix().add(r.cost_matrix().matrix());
            let cost_identity_error =
                psd::rel_frobenius(sum.as_matrix(), cost_t.matrix().as_matrix(), 1e-300);
            let mean_identity_error =
                psd::rel_frobenius(&rc.mean_map(&common, &r), t.query(), 1e-300);
            let constraint_slack = if common.is_empty() || cc.basis.nrows() != common.num_queries()
            {
                0.0
            } else {
                psd::sym_eig(&common.covariance().sub(&cc.constraints[i]))?.min()
            };
            checks.push(TargetCheck {
                cost_identity_error,
                mean_identity_error,
                constraint_slack,
                common_answerable: mechanism::is_answerable(&common, t, tol)?,
            });
            residuals.push(r);
            recon.push(rc);
        }
        let report = VerificationReport {
            max_cost_identity_error: checks
                .iter()
                .map(|c| c.cost_identity_error)
                .fold(0.0, f64::max),
            max_mean_identity_error: checks
                .iter()
                .map(|c| c.mean_identity_error)
                .fold(0.0, f64::max),
            targets: checks,
        };
        Ok(Decomposition {
            targets,
            common,
            residuals,
            recon,
            report,
        })
    }

    pub fn to_doc(&self) -> DecompositionDoc {
        DecompositionDoc {
            common: MechanismDoc::from(&self.common),
            residuals: self.residuals.iter().map(MechanismDoc::from).collect(),
            recon: self
                .recon
                .iter()
                .map(|r| ReconDoc {
                    a_common: matrix_to_rows(&r.a_common),
                    a_residual: matrix_to_rows(&r.a_residual),
                    topup_covariance: matrix_to_rows(r.topup_covariance.as_matrix()),
                })
                .collect(),
            rho_common: self.common.rho(),
            rho_targets: self
                .targets
                .iter()
                .map(LinearGaussianMechanism::rho)
                .collect(),
            verification: self.report.clone(),
        }
    }
}

/// JSON form of a mechanism: query rows and covariance rows.
#[derive(Debug, Clone, Serialize)]
pub struct MechanismDoc {
    pub query: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
}

impl From<&LinearGaussianMechanism> for MechanismDoc {
    fn from(m: &LinearGaussianMechanism) -> Self {
        MechanismDoc {
            query: matrix_to_rows(m.query()),
            covariance: matrix_to_rows(m.covariance().as_matrix()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconDoc {
    pub a_common: Vec<Vec<f64>>,
    pub a_residual: Vec<Vec<f64>>,
    pub topup_covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionDoc {
    pub common: MechanismDoc,
    pub residuals: Vec<MechanismDoc>,
    pub recon: Vec<ReconDoc>,
    pub rho_common: f64,
    pub rho_targets: Vec<f64>,
    pub verification: VerificationReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{is_answerable, is_equivalent};
    use crate::psd::matrix_from_rows;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        matrix_from_rows(&rows, None).unwrap()
    }

    fn one_way(first: bool) -> LinearGaussianMechanism {
        let b = DMatrix::from_fn(3, 9, |r, c| {
            let v = if first { c / 3 } else { c % 3 };
            if v == r {
                1.0
            } else {
                0.0
            }
        });
        LinearGaussianMechanism::with_variance(b, 1.0).unwrap()
    }

    fn ones_outer(d: usize, s: f64) -> DMatrix<f64> {
        DMatrix::from_element(d, d, s)
    }

    #[test]
    fn marginal_pair_common_is_noisy_total() {
        let c = common_mechanism(&one_way(true), &one_way(false), tol()).unwrap();
        assert_eq!(c.num_queries(), 1);
        let cost = c.cost_matrix();
        assert!((cost.matrix().as_matrix() - ones_outer(9, 1.0 / 3.0)).norm() < 1e-9);
    }

    #[test]
    fn example3_common_is_sum_with_variance_1_5() {
        let ones = DMatrix::from_element(1, 3, 1.0);
        let m1 = LinearGaussianMechanism::with_variance(ones, 1.0).unwrap();
        let m2 = LinearGaussianMechanism::with_variance(
            m(&[
                &[1.0, 1.0, 1.0],
                &[1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0],
                &[0.0, 0.0, 1.0],
            ]),
            2.0,
        )
        .unwrap();
        let c = common_mechanism(&m1, &m2, tol()).unwrap();
        assert!((c.cost_matrix().matrix().as_matrix() - ones_outer(3, 1.0 / 1.5)).norm() < 1e-9);
    }

    #[test]
    fn self_common_is_equivalent() {
        let a = one_way(true);
        let c = common_mechanism(&a, &a, tol()).unwrap();
        assert!(is_equivalent(&c, &a, tol()).unwrap());
        let r = residual_mechanism(&a, &c, tol()).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn disjoint_rowspaces_give_empty_common() {
        let a = LinearGaussianMechanism::with_variance(m(&[&[1.0, 0.0]]), 1.0).unwrap();
        let b = LinearGaussianMechanism::with_variance(m(&[&[0.0, 1.0]]), 1.0).unwrap();
        let c = common_mechanism(&a, &b, tol()).unwrap();
        assert!(c.is_empty());
        let dec = Decomposition::new(vec![a.clone(), b], &SolverConfig::default(), tol()).unwrap();
        assert!(is_equivalent(&dec.residuals[0], &a, tol()).unwrap());
    }

    #[test]
    fn residual_matches_printed_marginal_residual() {
        let m1 = one_way(true);
        let c = common_mechanism(&m1, &one_way(false), tol()).unwrap();
        let r = residual_mechanism(&m1, &c, tol()).unwrap();
        let want = m1.cost_matrix().matrix().as_matrix() - ones_outer(9, 1.0 / 3.0);
        assert!((r.cost_matrix().matrix().as_matrix() - &want).norm() < 1e-9);

        let printed = LinearGaussianMechanism::new(
            m(&[
                &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0],
                &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            ]),
            SymMatrix::new(m(&[&[2.0, 1.0], &[1.0, 2.0]])),
        )
        .unwrap();
        assert!((printed.cost_matrix().matrix().as_matrix() - &want).norm() < 1e-12);
    }

    #[test]
    fn residual_requires_answerable_common() {
        let ones = DMatrix::from_element(1, 3, 1.0);
        let weak = LinearGaussianMechanism::with_variance(ones.clone(), 2.0).unwrap();
        let strong = LinearGaussianMechanism::with_variance(ones, 1.0).unwrap();
        assert!(matches!(
            residual_mechanism(&weak, &strong, tol()),
            Err(Error::NotCommon(_))
        ));
    }

    #[test]
    fn printed_reconstruction_maps() {
        let m1 = one_way(true);
        let common =
            LinearGaussianMechanism::with_variance(DMatrix::from_element(1, 9, 1.0), 3.0).unwrap();
        let residual = LinearGaussianMechanism::new(
            m(&[
                &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0],
                &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            ]),
            SymMatrix::new(m(&[&[2.0, 1.0], &[1.0, 2.0]])),
        )
        .unwrap();
        let rc = Reconstruction::new(&m1, &common, &residual, tol()).unwrap();
        let third = 1.0 / 3.0;
        let want_res = m(&[
            &[third, -2.0 * third],
            &[third, third],
            &[-2.0 * third, third],
        ]);
        assert!((&rc.a_residual - want_res).norm() < 1e-12);
        assert!((&rc.a_common - DMatrix::from_element(3, 1, third)).norm() < 1e-12);
        assert!(rc.topup_covariance.as_matrix().norm() < 1e-10);
    }

    #[test]
    fn own_basis_mean_identity() {
        let m1 = one_way(true);
        let dec = Decomposition::new(
            vec![m1.clone(), one_way(false)],
            &SolverConfig::default(),
            tol(),
        )
        .unwrap();
        assert!(dec.report.max_mean_identity_error < 1e-8);
        assert!(dec.report.max_cost_identity_error < 1e-7);
        for t in &dec.report.targets {
            assert!(t.common_answerable);
            assert!(t.constraint_slack > -1e-9);
        }
    }

    #[test]
    fn full_overlap_has_no_residual_and_no_topup() {
        let m1 = one_way(true);
        let common = standardize(&m1, tol()).unwrap();
        let dec = Decomposition::with_common(vec![m1], common, tol()).unwrap();
        assert!(dec.residuals[0].is_empty());
        assert_eq!(dec.recon[0].a_residual.ncols(), 0);
        assert!(dec.recon[0].topup_covariance.as_matrix().norm() < 1e-10);
    }

    #[test]
    fn multi_with_one_mechanism_standardizes() {
        let m1 = one_way(true);
        let c = common_mechanism_multi(&[&m1], &SolverConfig::default(), tol()).unwrap();
        assert!(is_equivalent(&c, &m1, tol()).unwrap());
        assert!((c.covariance().as_matrix() - DMatrix::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn multi_matches_closed_form_for_pair() {
        let a = one_way(true);
        let b = LinearGaussianMechanism::with_variance(DMatrix::identity(9, 9), 2.0).unwrap();
        let closed = common_mechanism(&a, &b, tol()).unwrap();
        let numeric = common_mechanism_multi(&[&a, &b], &SolverConfig::default(), tol()).unwrap();
        let (t1, t2) = (closed.covariance().trace(), numeric.covariance().trace());
        assert!((t1 - t2).abs() / t1 < 1e-5);
        assert!(is_answerable(&numeric, &a, tol()).unwrap());
        assert!(is_answerable(&numeric, &b, tol()).unwrap());
    }

    #[test]
    fn domain_mismatch_rejected() {
        let a = one_way(true);
        let b = LinearGaussianMechanism::with_variance(DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(matches!(
            common_mechanism(&a, &b, tol()),
            Err(Error::InvalidInput(_))
        ));
    }
}
