//! Linear Gaussian mechanisms `M(x) = Bx + N(0, Σ)` and the predicates that
//! depend only on their privacy cost matrix `BᵀΣ⁻¹B`.

pub mod accounting;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::{self, loewner_leq, SymMatrix, Tolerances};
use crate::rng::{self, StreamRng};

pub use accounting::{approx_dp_delta, normal_cdf, PrivacyAccount};

/// Histogram of record counts over the domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataVector {
    counts: Vec<u64>,
}

impl DataVector {
    pub fn new(counts: Vec<u64>) -> Self {
        DataVector { counts }
    }

    pub fn zeros(d: usize) -> Self {
        DataVector { counts: vec![0; d] }
    }

    /// Accepts signed counts, rejecting negatives.
    pub fn from_signed(counts: &[i64]) -> Result<Self> {
        counts
            .iter()
            .map(|&c| u64::try_from(c).map_err(|_| Error::invalid(format!("negative count {c}"))))
            .collect::<Result<Vec<_>>>()
            .map(DataVector::new)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.counts.len(), self.counts.iter().map(|&c| c as f64))
    }
}

/// The PSD matrix `BᵀΣ⁻¹B`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyCostMatrix(SymMatrix);

impl PrivacyCostMatrix {
    pub fn new(m: SymMatrix) -> Self {
        PrivacyCostMatrix(m)
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Largest diagonal entry (0 for an all-zero matrix).
    pub fn c_max(&self) -> f64 {
        self.0.diagonal().into_iter().fold(0.0, f64::max)
    }

    pub fn rho(&self) -> f64 {
        self.c_max() / 2.0
    }

    pub fn per_record_rho(&self) -> Vec<f64> {
        self.0.diagonal().into_iter().map(|c| c / 2.0).collect()
    }
}

/// `M(x) = Bx + N(0, Σ)`; `Σ` is validated SPD and factored once.
#[derive(Debug, Clone)]
pub struct LinearGaussianMechanism {
    query: DMatrix<f64>,
    covariance: SymMatrix,
    /// Lower-triangular `L` with `LLᵀ = Σ`.
    factor: DMatrix<f64>,
}

impl LinearGaussianMechanism {
    pub fn new(query: DMatrix<f64>, covariance: SymMatrix) -> Result<Self> {
        let (m, d) = query.shape();
        if d == 0 {
            return Err(Error::invalid("query matrix must have at least one column"));
        }
        if covariance.dim() != m {
            return Err(Error::invalid(format!(
                "covariance is {}x{} but query matrix has {m} rows",
                covariance.dim(),
                covariance.dim()
            )));
        }
        if query.iter().any(|v| !v.is_finite()) || !covariance.is_finite() {
            return Err(Error::invalid("mechanism has non-finite entries"));
        }
        let factor = if m == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let chol = covariance
                .as_matrix()
                .clone()
                .cholesky()
                .ok_or(Error::SingularCovariance)?;
            let l = chol.unpack();
            let diag = l.diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            // κ(Σ) ≈ (hi/lo)²; refuse anything beyond double precision
            if !(lo > 0.0) || (lo / hi).powi(2) < 1e-15 {
                return Err(Error::SingularCovariance);
            }
            l
        };
        Ok(LinearGaussianMechanism {
            query,
            covariance,
            factor,
        })
    }

    /// `Σ = σ² I`.
    pub fn with_variance(query: DMatrix<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::invalid(format!(
                "variance must be positive, got {variance}"
            )));
        }
        let m = query.nrows();
        Self::new(query, SymMatrix::identity(m).scale(variance))
    }

    /// `Σ = σ² I` with `σ² = c_max(BᵀB) / (2ρ)`, so the mechanism is exactly ρ-zCDP.
    pub fn with_target_rho(query: DMatrix<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!(
                "target rho must be positive, got {rho}"
            )));
        }
        let c = SymMatrix::gram(&query)
            .diagonal()
            .into_iter()
            .fold(0.0, f64::max);
        if c == 0.0 {
            return Err(Error::invalid("target_rho requires a nonzero query matrix"));
        }
        Self::with_variance(query, c / (2.0 * rho))
    }

    /// Zero-row mechanism over a domain of size `d`; its cost matrix is zero.
    pub fn empty(d: usize) -> Self {
        LinearGaussianMechanism {
            query: DMatrix::zeros(0, d),
            covariance: SymMatrix::zeros(0),
            factor: DMatrix::zeros(0, 0),
        }
    }

    pub fn query(&self) -> &DMatrix<f64> {
        &self.query
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    pub fn covariance_factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn num_queries(&self) -> usize {
        self.query.nrows()
    }

    pub fn domain_size(&self) -> usize {
        self.query.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.query.nrows() == 0
    }

    /// `Σ⁻¹ M` for a matrix `M` with `m` rows.
    pub fn solve_covariance(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.is_empty() {
            return DMatrix::zeros(0, rhs.ncols());
        }
        let l = &self.factor;
        let y = l
            .solve_lower_triangular(rhs)
            .expect("factor has positive diagonal");
        l.transpose()
            .solve_upper_triangular(&y)
            .expect("factor has positive diagonal")
    }

    pub fn covariance_inverse(&self) -> SymMatrix {
        SymMatrix::new(
            self.solve_covariance(&DMatrix::identity(self.num_queries(), self.num_queries())),
        )
    }

    /// `BᵀΣ⁻¹B`, computed as `YᵀY` with `Y = L⁻¹B`.
    pub fn cost_matrix(&self) -> PrivacyCostMatrix {
        if self.is_empty() {
            return PrivacyCostMatrix(SymMatrix::zeros(self.domain_size()));
        }
        let y = self
            .factor
            .solve_lower_triangular(&self.query)
            .expect("factor has positive diagonal");
        PrivacyCostMatrix(SymMatrix::gram(&y))
    }

    pub fn rho(&self) -> f64 {
        self.cost_matrix().rho()
    }

    pub fn per_record_rho(&self) -> Vec<f64> {
        self.cost_matrix().per_record_rho()
    }

    /// Runs both mechanisms with independent noise: `[B₁; B₂]`, `diag(Σ₁, Σ₂)`.
    pub fn stack(parts: &[&LinearGaussianMechanism]) -> Result<Self> {
        let d = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero mechanisms"))?
            .domain_size();
        if parts.iter().any(|p| p.domain_size() != d) {
            return Err(Error::invalid("stacked mechanisms must share a domain"));
        }
        let m: usize = parts.iter().map(|p| p.num_queries()).sum();
        let mut q = DMatrix::zeros(m, d);
        let mut cov = DMatrix::zeros(m, m);
        let mut at = 0;
        for p in parts {
            let k = p.num_queries();
            q.view_mut((at, 0), (k, d)).copy_from(p.query());
            cov.view_mut((at, at), (k, k))
                .copy_from(p.covariance().as_matrix());
            at += k;
        }
        Self::new(q, SymMatrix::new(cov))
    }

    /// `Bx + Lz`, `z` standard normal from `rng`.
    pub fn run_with(&self, x: &DataVector, rng: &mut StreamRng) -> Result<DVector<f64>> {
        if x.len() != self.domain_size() {
            return Err(Error::invalid(format!(
                "data vector has length {}, mechanism domain is {}",
                x.len(),
                self.domain_size()
            )));
        }
        let z = DVector::from_vec(rng::standard_normals(rng, self.num_queries()));
        Ok(&self.query * x.to_vector() + &self.factor * z)
    }

    /// Deterministic for fixed `seed`.
    pub fn run(&self, x: &DataVector, seed: u64) -> Result<DVector<f64>> {
        self.run_with(x, &mut rng::stream(seed, 0))
    }
}

/// Rewrites `M` as an equivalent mechanism with identity covariance and
/// linearly independent rows `√λᵢ vᵢᵀ` taken from the eigen-decomposition of
/// its cost matrix. A zero cost matrix yields the empty mechanism.
pub fn standardize(
    m: &LinearGaussianMechanism,
    tol: Tolerances,
) -> Result<LinearGaussianMechanism> {
    standardize_cost(m.cost_matrix().matrix(), None, tol)
}

/// Matrix square-root mechanism of a PSD cost matrix. Eigenvalues at or below
/// `rank_rtol * scale` are dropped; `scale` defaults to the matrix's own
/// spectral scale.
pub(crate) fn standardize_cost(
    x: &SymMatrix,
    scale: Option<f64>,
    tol: Tolerances,
) -> Result<LinearGaussianMechanism> {
    let d = x.dim();
    let eig = psd::sym_eig(x)?;
    let scale = scale.unwrap_or_else(|| eig.spectral_scale());
    let keep: Vec<usize> = (0..d)
        .filter(|&k| eig.eigenvalues[k] > tol.rank_rtol * scale && eig.eigenvalues[k] > 0.0)
        .collect();
    if keep.is_empty() {
        return Ok(LinearGaussianMechanism::empty(d));
    }
    let mut b = DMatrix::zeros(keep.len(), d);
    for (r, &k) in keep.iter().enumerate() {
        let row = eig.eigenvectors.column(k).transpose() * eig.eigenvalues[k].sqrt();
        b.set_row(r, &row);
    }
    let k = keep.len();
    LinearGaussianMechanism::new(b, SymMatrix::identity(k))
}

fn check_domain(a: &LinearGaussianMechanism, b: &LinearGaussianMechanism) -> Result<()> {
    if a.domain_size() != b.domain_size() {
        return Err(Error::invalid(format!(
            "domain mismatch: {} vs {}",
            a.domain_size(),
            b.domain_size()
        )));
    }
    Ok(())
}

/// True iff `m_b` is answerable from `m_a`: `cost(m_b) ⪯ cost(m_a)`.
pub fn is_answerable(
    m_b: &LinearGaussianMechanism,
    m_a: &LinearGaussianMechanism,
    tol: Tolerances,
) -> Result<bool> {
    check_domain(m_a, m_b)?;
    loewner_leq(m_b.cost_matrix().matrix(), m_a.cost_matrix().matrix(), tol)
}

/// Answerable in both directions.
pub fn is_equivalent(
    m_a: &LinearGaussianMechanism,
    m_b: &LinearGaussianMechanism,
    tol: Tolerances,
) -> Result<bool> {
    Ok(is_answerable(m_a, m_b, tol)? && is_answerable(m_b, m_a, tol)?)
}

/// Explicit postprocessing `(A, C)` with `m_b(x) ~ A·m_a(x) + C·N(0, I)`:
/// `B_b = A B_a` and `Σ_b = A Σ_a Aᵀ + CCᵀ`.
#[derive(Debug, Clone)]
pub struct Postprocessing {
    pub linear: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

/// Builds the postprocessing that answers `m_b` from `m_a`, taking
/// `A = B_b (L_a⁻¹ B_a)⁺ L_a⁻¹` and `C` a square root of `Σ_b − AΣ_aAᵀ`.
pub fn postprocessing(
    m_b: &LinearGaussianMechanism,
    m_a: &LinearGaussianMechanism,
    tol: Tolerances,
) -> Result<Postprocessing> {
    if !is_answerable(m_b, m_a, tol)? {
        return Err(Error::NotAnswerable);
    }
    let mb = m_b.num_queries();
    if m_a.is_empty() {
        return Ok(Postprocessing {
            linear: DMatrix::zeros(mb, 0),
            noise: m_b.factor.clone(),
        });
    }
    let l_inv = m_a
        .factor
        .clone()
        .solve_lower_triangular(&DMatrix::identity(m_a.num_queries(), m_a.num_queries()))
        .expect("factor has positive diagonal");
    let whitened = &l_inv * m_a.query();
    let linear = m_b.query() * psd::pinv(&whitened, tol)? * &l_inv;
    let residual_cov = m_b.covariance().sub(&m_a.covariance().congruence(&linear));
    let scale = psd::sym_eig(m_b.covariance())?.spectral_scale();
    let noise = psd::psd_factor(&residual_cov, Some(scale), tol)?;
    Ok(Postprocessing { linear, noise })
}
