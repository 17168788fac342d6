//! Trace minimization over the intersection of shifted PSD cones:
//!
//! ```text
//! minimize tr(Σ)  subject to  Σ ⪰ Xᵢ,  i = 1..k
//! ```
//!
//! Solved by ADMM on the splitting `Σ − Yᵢ = Xᵢ`, `Yᵢ ⪰ 0`: the `Σ`-step is an
//! averaged trace-descent step, each `Yᵢ`-step is a Euclidean projection onto
//! the PSD cone, and the penalty is rebalanced from the primal/dual residuals.
//! The returned iterate is shifted by a multiple of `I` so every constraint
//! holds to rounding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::{sym_eig, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once primal and dual residuals (on the problem scaled so that
    /// `max λ_max(Xᵢ) = 1`) both fall below this.
    pub tolerance: f64,
    pub initial_penalty: f64,
    /// Penalty rebalancing period, in iterations.
    pub rebalance_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 50_000,
            tolerance: 1e-11,
            initial_penalty: 1.0,
            rebalance_every: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("solver max_iters must be at least 1"));
        }
        if !(self.tolerance > 0.0) || !(self.initial_penalty > 0.0) || self.rebalance_every == 0 {
            return Err(Error::invalid(
                "solver tolerances and penalty must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub sigma: SymMatrix,
    pub iterations: usize,
    /// `max(0, −min_i λ_min(Σ − Xᵢ))` before the feasibility shift, in the
    /// original scale.
    pub violation: f64,
}

fn project_psd(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(&SymMatrix::new(x.clone()))?;
    Ok(eig.map(|l| l.max(0.0)).into_inner())
}

fn min_slack(sigma: &DMatrix<f64>, xs: &[DMatrix<f64>]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for x in xs {
        let eig = sym_eig(&SymMatrix::new(sigma - x))?;
        worst = worst.min(eig.min());
    }
    Ok(worst)
}

/// Minimum-trace `Σ` with `Σ ⪰ Xᵢ` for every `i`.
pub fn min_trace_dominating(xs: &[SymMatrix], cfg: &SolverConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("at least one constraint is required"))?;
    let m = first.dim();
    if xs.iter().any(|x| x.dim() != m) {
        return Err(Error::invalid("constraint matrices differ in size"));
    }
    if m == 0 {
        return Ok(SolveOutcome {
            sigma: SymMatrix::zeros(0),
            iterations: 0,
            violation: 0.0,
        });
    }

    let lmax: Vec<f64> = xs
        .iter()
        .map(|x| sym_eig(x).map(|e| e.max()))
        .collect::<Result<_>>()?;
    let scale = lmax.iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::invalid("constraint matrices are all zero"));
    }
    let k = xs.len() as f64;
    let xs: Vec<DMatrix<f64>> = xs.iter().map(|x| x.as_matrix() / scale).collect();
    let eye = DMatrix::<f64>::identity(m, m);

    // Loewner-dominating start
    let mut sigma = &eye * (lmax.iter().copied().fold(0.0, f64::max) / scale);
    let mut ys: Vec<DMatrix<f64>> = xs
        .iter()
        .map(|x| project_psd(&(&sigma - x)))
        .collect::<Result<_>>()?;
    let mut us: Vec<DMatrix<f64>> = vec![DMatrix::zeros(m, m); xs.len()];
    let mut penalty = cfg.initial_penalty;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let mut acc = DMatrix::zeros(m, m);
        for ((y, x), u) in ys.iter().zip(&xs).zip(&us) {
            acc += y + x - u;
        }
        sigma = acc / k - &eye / (k * penalty);
        sigma = (&sigma + sigma.transpose()) * 0.5;

        let mut primal = 0.0;
        let mut dual = 0.0;
        for i in 0..xs.len() {
            let y_new = project_psd(&(&sigma - &xs[i] + &us[i]))?;
            dual += (&y_new - &ys[i]).norm_squared();
            ys[i] = y_new;
            let r = &sigma - &ys[i] - &xs[i];
            primal += r.norm_squared();
            us[i] += r;
        }
        let primal = primal.sqrt();
        let dual = penalty * dual.sqrt();
        if primal < cfg.tolerance && dual < cfg.tolerance {
            converged = true;
            break;
        }
        if it % cfg.rebalance_every == 0 {
            if primal > 10.0 * dual {
                penalty *= 2.0;
                us.iter_mut().for_each(|u| *u /= 2.0);
            } else if dual > 10.0 * primal {
                penalty /= 2.0;
                us.iter_mut().for_each(|u| *u *= 2.0);
            }
        }
    }

    let slack = min_slack(&sigma, &xs)?;
    let violation = (-slack).max(0.0);
    let shifted = SymMatrix::new((&sigma + &eye * violation) * scale);
    if !converged {
        return Err(Error::SolverFailed {
            iterations,
            violation: violation * scale,
            best: Box::new(shifted.into_inner()),
        });
    }
    log::debug!("min-trace solver converged in {iterations} iterations");
    Ok(SolveOutcome {
        sigma: shifted,
        iterations,
        violation: violation * scale,
    })
}
