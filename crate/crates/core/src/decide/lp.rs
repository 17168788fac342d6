//! Dense two-phase tableau simplex for `min cᵀx  s.t.  Ax ≤ b, x ≥ 0`.
//!
//! Bland's rule on both entering and leaving choices, so it cannot cycle.
//! Meant for desk-scale problems (a few hundred rows/columns).

use nalgebra::{DMatrix, DVector};

const PIVOT_EPS: f64 = 1e-10;
const COST_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// Constraint rows followed by one objective row; last column is the RHS.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    rows: usize,
}

enum Run {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[(r, c)];
        let mut row = self.t.row(r).clone_owned();
        row /= p;
        self.t.set_row(r, &row);
        for i in 0..self.t.nrows() {
            if i != r {
                let f = self.t[(i, c)];
                if f != 0.0 {
                    let upd = &row * f;
                    let mut ri = self.t.row_mut(i);
                    ri -= upd;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex on the objective row (last row) over columns `< allowed`.
    fn run(&mut self, allowed: usize) -> Run {
        let obj = self.rows;
        let rhs = self.rhs_col();
        loop {
            let entering = (0..allowed).find(|&j| self.t[(obj, j)] < -COST_EPS);
            let Some(c) = entering else {
                return Run::Optimal;
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.t[(r, c)];
                if a > PIVOT_EPS {
                    let ratio = self.t[(r, rhs)] / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                            if ratio < bratio && !tie || tie && self.basis[r] < self.basis[br] {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Run::Unbounded,
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }
}

/// Solves `min cᵀx` subject to `a·x ≤ b`, `x ≥ 0`.
pub fn solve(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> LpOutcome {
    let (m, n) = a.shape();
    assert_eq!(c.len(), n, "objective length");
    assert_eq!(b.len(), m, "rhs length");

    // Columns: x (n), slacks (m), artificials (one per negative-rhs row), rhs.
    let negative: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = negative.len();
    let cols = n + m + n_art + 1;
    let mut t = DMatrix::zeros(m + 1, cols);
    let mut basis = vec![0; m];
    let mut art = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = sign;
        t[(i, cols - 1)] = sign * b[i];
        if sign < 0.0 {
            t[(i, n + m + art)] = 1.0;
            basis[i] = n + m + art;
            art += 1;
        } else {
            basis[i] = n + i;
        }
    }
    let mut tab = Tableau { t, basis, rows: m };

    if n_art > 0 {
        // Phase 1: minimize the sum of artificials.
        for &i in &negative {
            for j in 0..cols {
                if !(n + m..n + m + n_art).contains(&j) {
                    tab.t[(m, j)] -= tab.t[(i, j)];
                }
            }
        }
        tab.run(n + m + n_art);
        let scale = 1.0 + b.amax();
        if -tab.t[(m, cols - 1)] > 1e-9 * scale {
            return LpOutcome::Infeasible;
        }
        // Drive zero-valued artificials out of the basis.
        for r in 0..m {
            if tab.basis[r] >= n + m {
                if let Some(c) = (0..n + m).find(|&j| tab.t[(r, j)].abs() > PIVOT_EPS) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    // Phase 2 objective row: reduced costs of c over the current basis.
    for j in 0..cols {
        tab.t[(m, j)] = if j < n { c[j] } else { 0.0 };
    }
    for r in 0..m {
        let bj = tab.basis[r];
        let cb = if bj < n { c[bj] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..cols {
                tab.t[(m, j)] -= cb * tab.t[(r, j)];
            }
        }
    }
    if let Run::Unbounded = tab.run(n + m) {
        return LpOutcome::Unbounded;
    }

    let mut x = DVector::zeros(n);
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.t[(r, cols - 1)].max(0.0);
        }
    }
    let objective = c.dot(&x);
    LpOutcome::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(out: LpOutcome) -> (DVector<f64>, f64) {
        match out {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  → (2, 6), 36
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 3.0, 2.0]);
        let b = DVector::from_vec(vec![4.0, 12.0, 18.0]);
        let c = DVector::from_vec(vec![-3.0, -5.0]);
        let (x, obj) = optimal(solve(&c, &a, &b));
        assert!((obj + 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn lower_bounds_need_phase_one() {
        // min x + y s.t. x + y ≥ 3, x ≤ 1  → 3
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![-3.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let (x, obj) = optimal(solve(&c, &a, &b));
        assert!((obj - 3.0).abs() < 1e-9);
        assert!(x[0] <= 1.0 + 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        // x ≤ 1 and x ≥ 2
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let c = DVector::from_vec(vec![0.0]);
        assert_eq!(solve(&c, &a, &b), LpOutcome::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0]);
        let c = DVector::from_vec(vec![0.0, -1.0]);
        assert_eq!(solve(&c, &a, &b), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Classic Beale cycling example (cycles under Dantzig's rule).
        let a = DMatrix::from_row_slice(
            3,
            4,
            &[
                0.25, -60.0, -0.04, 9.0, 0.5, -90.0, -0.02, 3.0, 0.0, 0.0, 1.0, 0.0,
            ],
        );
        let b = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = DVector::from_vec(vec![-0.75, 150.0, -0.02, 6.0]);
        let (_, obj) = optimal(solve(&c, &a, &b));
        assert!((obj + 0.05).abs() < 1e-9);
    }
}
