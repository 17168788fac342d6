#![allow(dead_code)]

use mechdecomp::rng::{self, StreamRng};
use mechdecomp::{LinearGaussianMechanism, SymMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(r: &mut StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// Random `rows × d` matrix of rank at most `rank`.
pub fn low_rank(r: &mut StreamRng, rows: usize, d: usize, rank: usize) -> DMatrix<f64> {
    gaussian(r, rows, rank) * gaussian(r, rank, d)
}

/// Well-conditioned SPD matrix.
pub fn spd(r: &mut StreamRng, n: usize) -> SymMatrix {
    let g = gaussian(r, n, n);
    SymMatrix::new(&g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5)
}

pub fn random_psd(r: &mut StreamRng, n: usize, rank: usize) -> SymMatrix {
    let g = gaussian(r, n, rank);
    SymMatrix::new(&g * g.transpose())
}

pub fn random_symmetric(r: &mut StreamRng, n: usize) -> SymMatrix {
    SymMatrix::new(gaussian(r, n, n))
}

/// Random mechanism over `d` cells with a possibly rank-deficient query.
pub fn random_mechanism(r: &mut StreamRng, d: usize) -> LinearGaussianMechanism {
    let rows = r.random_range(1..=d + 2);
    let rank = r.random_range(1..=rows.min(d));
    let b = low_rank(r, rows, d, rank);
    let cov = spd(r, rows);
    LinearGaussianMechanism::new(b, cov).expect("valid random mechanism")
}

/// Two mechanisms over one random domain of size ≤ 12 whose row spaces
/// overlap in a random number of dimensions.
pub fn random_pair(seed: u64) -> (LinearGaussianMechanism, LinearGaussianMechanism) {
    let mut r = rng::stream(seed, 0);
    let d = r.random_range(2..=12);
    let shared = r.random_range(0..=d / 2);
    let own1 = r.random_range(0..=(d - shared) / 2);
    let own2 = r.random_range(0..=(d - shared - own1));
    // Orthonormal rows, so the mixing matrix alone sets the conditioning.
    let basis = gaussian(&mut r, d, d).qr().q().transpose();
    let pick = |from: usize, n: usize| basis.rows(from, n).into_owned();
    let mut part = |own: DMatrix<f64>| {
        let sh = pick(0, shared);
        let mut rows = DMatrix::zeros(sh.nrows() + own.nrows(), d);
        rows.rows_mut(0, sh.nrows()).copy_from(&sh);
        rows.rows_mut(sh.nrows(), own.nrows()).copy_from(&own);
        if rows.nrows() == 0 {
            rows = pick(0, 1);
        }
        // Mix rows and maybe add a redundant one, keeping the query well
        // conditioned: cost-space rank cutoffs square the singular values.
        let k = rows.nrows();
        let extra = r.random_range(0..=1);
        let b = loop {
            let b = gaussian(&mut r, k + extra, k) * &rows;
            if condition(&b) <= 1e3 {
                break b;
            }
        };
        let cov = spd(&mut r, b.nrows());
        LinearGaussianMechanism::new(b, cov).expect("valid")
    };
    let m1 = part(pick(shared, own1));
    let m2 = part(pick(shared + own1, own2));
    (m1, m2)
}

/// Ratio of largest to smallest nonzero singular value.
pub fn condition(b: &DMatrix<f64>) -> f64 {
    let ev = (b * b.transpose()).symmetric_eigen().eigenvalues;
    let max = ev.max();
    let min = ev
        .iter()
        .copied()
        .filter(|&l| l > 1e-12 * max)
        .fold(f64::INFINITY, f64::min);
    (max / min).sqrt()
}

/// ‖a − b‖_F / max(‖b‖_F, 1e-12).
pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}
