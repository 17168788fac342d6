use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mechanism::DataVector;
use crate::rng;

use super::Domain;

/// Distribution of block totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SizeDistribution {
    /// `exp(U(ln min, ln max))`.
    LogUniform {
        min: f64,
        max: f64,
    },
    Fixed {
        total: u64,
    },
    /// `high` with probability `p_high`, else `low`.
    Bimodal {
        low: u64,
        high: u64,
        p_high: f64,
    },
}

impl Default for SizeDistribution {
    fn default() -> Self {
        SizeDistribution::LogUniform {
            min: 1.0,
            max: 10_000.0,
        }
    }
}

impl SizeDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SizeDistribution::LogUniform { min, max } => {
                if !(min >= 1.0 && max >= min && max.is_finite()) {
                    return Err(Error::invalid("log-uniform sizes need 1 ≤ min ≤ max"));
                }
            }
            SizeDistribution::Fixed { .. } => {}
            SizeDistribution::Bimodal { p_high, .. } => {
                if !(0.0..=1.0).contains(&p_high) {
                    return Err(Error::invalid("bimodal p_high must be in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SizeDistribution::LogUniform { min, max } => {
                if max == min {
                    min
                } else {
                    (max - min) / (max / min).ln()
                }
            }
            SizeDistribution::Fixed { total } => total as f64,
            SizeDistribution::Bimodal { low, high, p_high } => {
                p_high * high as f64 + (1.0 - p_high) * low as f64
            }
        }
    }

    fn sample<R: Rng>(&self, r: &mut R) -> u64 {
        match *self {
            SizeDistribution::LogUniform { min, max } => {
                let u: f64 = r.random();
                (min.ln() + u * (max.ln() - min.ln())).exp().round() as u64
            }
            SizeDistribution::Fixed { total } => total,
            SizeDistribution::Bimodal { low, high, p_high } => {
                if r.random::<f64>() < p_high {
                    high
                } else {
                    low
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default)]
    pub sizes: SizeDistribution,
    /// Relative cell weights; uniform when absent.
    #[serde(default)]
    pub cell_weights: Option<Vec<f64>>,
}

fn multinomial<R: Rng>(r: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (slot, &p) in out.iter_mut().zip(probs) {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let k = Binomial::new(left, q)
            .expect("probability in [0, 1]")
            .sample(r);
        *slot = k;
        left -= k;
        mass -= p;
    }
    if left > 0 {
        // Rounding left a remainder; give it to the last positive-weight cell.
        if let Some(i) = probs.iter().rposition(|&p| p > 0.0) {
            out[i] += left;
        }
    }
    out
}

/// `num_blocks` synthetic histograms; block `i` draws from stream `(seed, i)`.
pub fn synth_blocks(
    domain: &Domain,
    num_blocks: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<DataVector>> {
    cfg.sizes.validate()?;
    let d = domain.size();
    let probs: Vec<f64> = match &cfg.cell_weights {
        None => vec![1.0 / d as f64; d],
        Some(w) => {
            if w.len() != d {
                return Err(Error::invalid("cell weights must have one entry per cell"));
            }
            if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid(
                    "cell weights must be finite and nonnegative",
                ));
            }
            let s: f64 = w.iter().sum();
            if !(s > 0.0) {
                return Err(Error::invalid("cell weights sum to zero"));
            }
            w.iter().map(|v| v / s).collect()
        }
    };
    Ok(Exec::default().map(num_blocks, |i| {
        let mut r = rng::stream(seed, i as u64);
        let n = cfg.sizes.sample(&mut r);
        DataVector::new(multinomial(&mut r, n, &probs))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_totals_are_exact() {
        let d = Domain::from_cardinalities(&[4, 5]).unwrap();
        let cfg = SynthConfig {
            sizes: SizeDistribution::Fixed { total: 1234 },
            cell_weights: None,
        };
        for b in synth_blocks(&d, 20, &cfg, 9).unwrap() {
            assert_eq!(b.total(), 1234);
            assert_eq!(b.len(), 20);
        }
    }

    #[test]
    fn zero_weight_cells_stay_empty() {
        let d = Domain::from_cardinalities(&[3]).unwrap();
        let cfg = SynthConfig {
            sizes: SizeDistribution::Fixed { total: 500 },
            cell_weights: Some(vec![1.0, 0.0, 3.0]),
        };
        for b in synth_blocks(&d, 10, &cfg, 2).unwrap() {
            assert_eq!(b.counts()[1], 0);
        }
    }

    #[test]
    fn log_uniform_mean() {
        let s = SizeDistribution::LogUniform {
            min: 1.0,
            max: std::f64::consts::E,
        };
        assert!((s.mean() - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_rejected() {
        let d = Domain::binary(2).unwrap();
        let bad = SynthConfig {
            sizes: SizeDistribution::LogUniform {
                min: 10.0,
                max: 1.0,
            },
            cell_weights: None,
        };
        assert!(synth_blocks(&d, 1, &bad, 0).is_err());
        let bad = SynthConfig {
            sizes: SizeDistribution::default(),
            cell_weights: Some(vec![1.0]),
        };
        assert!(synth_blocks(&d, 1, &bad, 0).is_err());
    }
}
