//! Dense symmetric / positive-semidefinite linear algebra.
//!
//! Everything here is a deterministic function of its input: eigenvalues are
//! sorted descending and eigenvector signs are canonicalized, so repeated
//! calls on the same matrix produce bit-identical results on a given platform.
//!
//! Exact rank and Loewner statements become tolerance checks under floating
//! point; see [`Tolerances`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical cutoffs shared by every rank and Loewner decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Eigen/singular values below `rank_rtol * largest` are treated as zero.
    pub rank_rtol: f64,
    /// Negative eigenvalues above `-psd_rtol * scale` are treated as zero.
    pub psd_rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_rtol: 1e-9,
            psd_rtol: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn new(rank_rtol: f64, psd_rtol: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v < 1.0;
        if !ok(rank_rtol) || !ok(psd_rtol) {
            return Err(Error::invalid(format!(
                "tolerances must lie in (0, 1); got rank_rtol={rank_rtol}, psd_rtol={psd_rtol}"
            )));
        }
        Ok(Tolerances {
            rank_rtol,
            psd_rtol,
        })
    }
}

/// A square matrix that is exactly symmetric as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2`. Panics if `m` is not square.
    pub fn new(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix requires a square matrix");
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        SymMatrix(out)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = matrix_from_rows(rows, None)?;
        if !m.is_square() {
            return Err(Error::invalid("symmetric matrix must be square"));
        }
        Ok(SymMatrix::new(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::new(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::new(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    /// `A · self · Aᵀ`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::new(a * &self.0 * a.transpose())
    }

    /// `Bᵀ B` for any matrix `B`.
    pub fn gram(b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::new(b.transpose() * b)
    }
}

/// Eigen-decomposition `X = V diag(λ) Vᵀ` with `λ` sorted descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue magnitude (0 for the empty matrix).
    pub fn spectral_scale(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..n {
            let s = f(self.eigenvalues[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        SymMatrix::new(scaled * self.eigenvectors.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|l| l)
    }
}

/// Symmetric eigendecomposition; eigenvalues descending, each eigenvector's
/// largest-magnitude component positive.
pub fn sym_eig(x: &SymMatrix) -> Result<EigenDecomposition> {
    if !x.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let n = x.dim();
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = x.as_matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        canonical_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        // strict comparison so the first index wins ties (up to rounding noise)
        if x.abs() > v[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Checks the PSD condition and returns the decomposition with tiny negative
/// eigenvalues clamped to zero.
fn clamped_psd_eig(
    x: &SymMatrix,
    scale: Option<f64>,
    tol: Tolerances,
) -> Result<EigenDecomposition> {
    let mut eig = sym_eig(x)?;
    let scale = scale.unwrap_or_else(|| eig.spectral_scale());
    let allowed = -tol.psd_rtol * scale;
    let min = if eig.dim() == 0 { 0.0 } else { eig.min() };
    if min < allowed {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            allowed,
        });
    }
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(eig)
}

/// Symmetric PSD square root.
pub fn psd_sqrt(x: &SymMatrix, tol: Tolerances) -> Result<SymMatrix> {
    Ok(clamped_psd_eig(x, None, tol)?.map(f64::sqrt))
}

/// Factor `F` (n × n) with `F Fᵀ = X` after clamping tiny negative
/// eigenvalues; columns are `√λᵢ vᵢ`.
///
/// The negativity allowance is `psd_rtol * scale`; pass the scale of the
/// matrices `x` was computed from when `x` itself may be pure rounding noise.
pub fn psd_factor(x: &SymMatrix, scale: Option<f64>, tol: Tolerances) -> Result<DMatrix<f64>> {
    let eig = clamped_psd_eig(x, scale, tol)?;
    let mut f = eig.eigenvectors.clone();
    for j in 0..eig.dim() {
        f.column_mut(j).scale_mut(eig.eigenvalues[j].sqrt());
    }
    Ok(f)
}

/// Replaces every eigenvalue by its absolute value.
pub fn psd_abs(x: &SymMatrix) -> Result<SymMatrix> {
    Ok(sym_eig(x)?.map(f64::abs))
}

/// `A = U·diag(s)·Vᵀ` with orthonormal columns in `u` and rows in `v_t`.
struct Svd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v_t: DMatrix<f64>,
}

/// Thin SVD through faer. nalgebra's own SVD was found to return wrong
/// factorizations on some rank-deficient inputs.
fn thin_svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (m, n) = a.shape();
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = fa
        .thin_svd()
        .map_err(|e| Error::InternalInconsistency(format!("SVD did not converge: {e:?}")))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let k = s.nrows();
    Ok(Svd {
        u: DMatrix::from_fn(m, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v_t: DMatrix::from_fn(k, n, |i, j| v[(j, i)]),
    })
}

/// Moore–Penrose pseudoinverse via SVD with a relative singular-value cutoff.
pub fn pinv(a: &DMatrix<f64>, tol: Tolerances) -> Result<DMatrix<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(n, m));
    }
    let svd = thin_svd(a)?;
    let cutoff = tol.rank_rtol * svd.s.max();
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in svd.s.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (svd.v_t.row(k).transpose() * svd.u.column(k).transpose()) / s;
        }
    }
    Ok(out)
}

/// Orthonormal basis of the row space of `b`, one basis vector per row.
pub fn rowspace_basis(b: &DMatrix<f64>, tol: Tolerances) -> Result<DMatrix<f64>> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let (m, d) = b.shape();
    if m == 0 || d == 0 {
        return Ok(DMatrix::zeros(0, d));
    }
    let svd = thin_svd(b)?;
    let s_max = svd.s.max();
    let keep: Vec<usize> = (0..svd.s.len())
        .filter(|&k| svd.s[k] > tol.rank_rtol * s_max && svd.s[k] > 0.0)
        .collect();
    let mut out = DMatrix::zeros(keep.len(), d);
    for (r, &k) in keep.iter().enumerate() {
        out.set_row(r, &svd.v_t.row(k));
    }
    Ok(out)
}

pub fn rank(b: &DMatrix<f64>, tol: Tolerances) -> Result<usize> {
    Ok(rowspace_basis(b, tol)?.nrows())
}

/// Numerical rank of a PSD matrix from its eigenvalues, with the cutoff taken
/// relative to `scale` (or to its own spectral scale when `scale` is `None`).
pub fn psd_rank(x: &SymMatrix, scale: Option<f64>, tol: Tolerances) -> Result<usize> {
    let eig = sym_eig(x)?;
    let scale = scale.unwrap_or_else(|| eig.spectral_scale());
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > tol.rank_rtol * scale && l > 0.0)
        .count())
}

/// `X ⪯ Y` in the Loewner order: `λ_min(Y − X) ≥ −psd_rtol · s`, where `s` is
/// the largest spectral norm among `X`, `Y` and `Y − X`. The cutoff is relative
/// to the operands, matching the rank cutoffs used to build them.
pub fn loewner_leq(x: &SymMatrix, y: &SymMatrix, tol: Tolerances) -> Result<bool> {
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch in Loewner comparison: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.dim() == 0 {
        return Ok(true);
    }
    let eig = sym_eig(&y.sub(x))?;
    let scale = eig
        .spectral_scale()
        .max(sym_eig(x)?.spectral_scale())
        .max(sym_eig(y)?.spectral_scale());
    Ok(eig.min() >= -tol.psd_rtol * scale)
}

/// Orthonormal basis (rows) of `rowspace(b1) ∩ rowspace(b2)`.
///
/// Builds orthogonal projectors `P₁`, `P₂` onto the two row spaces and keeps
/// the eigenvectors of `P₁P₂ + P₂P₁` whose eigenvalue is within `rank_rtol`
/// of 2; a unit vector reaches 2 exactly when it lies in both spaces.
pub fn rowspace_intersection(
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    tol: Tolerances,
) -> Result<DMatrix<f64>> {
    if b1.ncols() != b2.ncols() {
        return Err(Error::invalid(format!(
            "column count mismatch: {} vs {}",
            b1.ncols(),
            b2.ncols()
        )));
    }
    let d = b1.ncols();
    let q1 = rowspace_basis(b1, tol)?;
    let q2 = rowspace_basis(b2, tol)?;
    if q1.nrows() == 0 || q2.nrows() == 0 {
        return Ok(DMatrix::zeros(0, d));
    }
    let p1 = q1.transpose() * &q1;
    let p2 = q2.transpose() * &q2;
    let p12 = &p1 * &p2;
    let sym = SymMatrix::new(&p12 + p12.transpose());
    let eig = sym_eig(&sym)?;
    let keep: Vec<usize> = (0..d)
        .filter(|&k| eig.eigenvalues[k] >= 2.0 - tol.rank_rtol)
        .collect();
    let mut out = DMatrix::zeros(keep.len(), d);
    for (r, &k) in keep.iter().enumerate() {
        out.set_row(r, &eig.eigenvectors.column(k).transpose());
    }
    Ok(out)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(x: &SymMatrix) -> Result<SymMatrix> {
    if x.dim() == 0 {
        return Ok(SymMatrix::zeros(0));
    }
    let chol = x
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance)?;
    Ok(SymMatrix::new(chol.inverse()))
}

/// `‖a − b‖_F / max(‖b‖_F, floor)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn matrix_from_rows(rows: &[Vec<f64>], ncols: Option<usize>) -> Result<DMatrix<f64>> {
    let cols = ncols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::invalid(format!(
            "row {bad} has {} entries, expected {cols}",
            rows[bad].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        matrix_from_rows(&rows, None).unwrap()
    }

    #[test]
    fn eig_of_diagonal() {
        let e = sym_eig(&SymMatrix::from_diagonal(&[0.0, 2.0])).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[2.0, 0.0]);
        assert!((e.eigenvectors[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((e.eigenvectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_of_all_ones() {
        let x = SymMatrix::new(DMatrix::from_element(4, 4, 1.0));
        let e = sym_eig(&x).unwrap();
        let want = [4.0, 0.0, 0.0, 0.0];
        for (g, w) in e.eigenvalues.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn eig_of_example_cost_matrix() {
        // det([[1-l, .5], [.5, 1-l]]) = 0  =>  l = 1 ± 0.5
        let x = SymMatrix::new(m(&[&[1.0, 0.5], &[0.5, 1.0]]));
        let e = sym_eig(&x).unwrap();
        assert!((e.eigenvalues[0] - 1.5).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 0.5).abs() < 1e-14);
        let recon = e.reconstruct();
        assert!(rel_frobenius(recon.as_matrix(), x.as_matrix(), 0.0) < 1e-10);
        let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
        assert!((vtv - DMatrix::identity(2, 2)).norm() < 1e-10 * 2.0);
    }

    #[test]
    fn eig_rejects_nan() {
        let x = SymMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, f64::NAN, f64::NAN, 1.0],
        ));
        assert!(matches!(sym_eig(&x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sqrt_examples() {
        let s = psd_sqrt(&SymMatrix::identity(3), tol()).unwrap();
        assert!((s.as_matrix() - DMatrix::identity(3, 3)).norm() < 1e-14);

        let s = psd_sqrt(&SymMatrix::from_diagonal(&[4.0, 9.0]), tol()).unwrap();
        assert!((s.as_matrix() - m(&[&[2.0, 0.0], &[0.0, 3.0]])).norm() < 1e-14);

        // eigenvalues 3, 1 with eigenvectors (1,1)/√2, (1,-1)/√2
        let x = SymMatrix::new(m(&[&[2.0, 1.0], &[1.0, 2.0]]));
        let s = psd_sqrt(&x, tol()).unwrap();
        let r3 = 3f64.sqrt();
        let want = m(&[
            &[(r3 + 1.0) / 2.0, (r3 - 1.0) / 2.0],
            &[(r3 - 1.0) / 2.0, (r3 + 1.0) / 2.0],
        ]);
        assert!((s.as_matrix() - &want).norm() < 1e-14);
        let ss = s.as_matrix() * s.as_matrix();
        assert!((ss - x.as_matrix()).norm() < 1e-8);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let x = SymMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(psd_sqrt(&x, tol()), Err(Error::NotPsd { .. })));
        // tiny negative noise is clamped
        let x = SymMatrix::from_diagonal(&[1.0, -1e-13]);
        assert!(psd_sqrt(&x, tol()).is_ok());
    }

    #[test]
    fn abs_examples() {
        let a = psd_abs(&SymMatrix::from_diagonal(&[3.0, -2.0])).unwrap();
        assert!((a.as_matrix() - m(&[&[3.0, 0.0], &[0.0, 2.0]])).norm() < 1e-14);

        let a = psd_abs(&SymMatrix::new(m(&[&[0.0, 1.0], &[1.0, 0.0]]))).unwrap();
        assert!((a.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-14);

        let x = SymMatrix::new(m(&[&[2.0, 1.0], &[1.0, 2.0]]));
        assert!((psd_abs(&x).unwrap().as_matrix() - x.as_matrix()).norm() < 1e-10);
    }

    #[test]
    fn pinv_examples() {
        let p = pinv(&DMatrix::identity(3, 3), tol()).unwrap();
        assert!((p - DMatrix::identity(3, 3)).norm() < 1e-14);

        let p = pinv(&DMatrix::from_element(1, 4, 1.0), tol()).unwrap();
        assert_eq!(p.shape(), (4, 1));
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-14);
        }

        let ba = m(&[&[1.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let p = pinv(&ba, tol()).unwrap();
        assert!((p * &ba - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_empty() {
        let p = pinv(&DMatrix::zeros(0, 5), tol()).unwrap();
        assert_eq!(p.shape(), (5, 0));
    }

    #[test]
    fn loewner_examples() {
        let i = SymMatrix::identity(2);
        assert!(loewner_leq(&i, &i.scale(2.0), tol()).unwrap());
        let d = SymMatrix::from_diagonal(&[2.0, 0.5]);
        assert!(!loewner_leq(&d, &i, tol()).unwrap());
        assert!(!loewner_leq(&i, &d, tol()).unwrap());
        assert!(loewner_leq(&i, &i, tol()).unwrap());
        assert!(matches!(
            loewner_leq(&i, &SymMatrix::identity(3), tol()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn intersection_examples() {
        let a = rowspace_intersection(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]]), tol()).unwrap();
        assert_eq!(a.shape(), (0, 2));

        let i3 = DMatrix::identity(3, 3);
        let b = rowspace_intersection(&i3, &i3, tol()).unwrap();
        assert_eq!(b.nrows(), 3);
        assert!((&b * b.transpose() - DMatrix::identity(3, 3)).norm() < 1e-12);

        assert!(matches!(
            rowspace_intersection(&i3, &DMatrix::identity(2, 2), tol()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn intersection_of_one_way_marginals_is_total() {
        let att1 = DMatrix::from_fn(3, 9, |r, c| if c / 3 == r { 1.0 } else { 0.0 });
        let att2 = DMatrix::from_fn(3, 9, |r, c| if c % 3 == r { 1.0 } else { 0.0 });
        let b = rowspace_intersection(&att1, &att2, tol()).unwrap();
        assert_eq!(b.nrows(), 1);
        for v in b.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tolerances_validated() {
        assert!(Tolerances::new(0.0, 0.5).is_err());
        assert!(Tolerances::new(0.5, 1.0).is_err());
        assert!(Tolerances::new(1e-6, 1e-6).is_ok());
    }
}
