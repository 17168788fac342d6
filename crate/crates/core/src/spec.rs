//! JSON mechanism specifications.
//!
//! ```json
//! { "domain": [3, 3],
//!   "queries": { "type": "marginals", "subsets": [[0]] },
//!   "noise": { "sigma2": 1.0 } }
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::LinearGaussianMechanism;
use crate::psd::{matrix_from_rows, SymMatrix};
use crate::workloads::{bucketization_matrix, marginal_matrix, Bucketization, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QuerySpec {
    Identity,
    Total,
    Marginals {
        subsets: Vec<Vec<usize>>,
    },
    /// All `k`-attribute marginals.
    KWay {
        k: usize,
    },
    Matrix {
        rows: Vec<Vec<f64>>,
    },
    /// `total`, `age4`, `age9` or `age23`; domain must be `[2, 103]`.
    Bucketization {
        scheme: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Sigma2(f64),
    Diag(Vec<f64>),
    Full(Vec<Vec<f64>>),
    /// `σ²I` with `σ² = c_max(BᵀB)/(2ρ)`.
    TargetRho(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub domain: Vec<usize>,
    pub queries: QuerySpec,
    pub noise: NoiseSpec,
}

impl QuerySpec {
    pub fn matrix(&self, domain: &Domain) -> Result<DMatrix<f64>> {
        let d = domain.size();
        match self {
            QuerySpec::Identity => Ok(DMatrix::identity(d, d)),
            QuerySpec::Total => Ok(DMatrix::from_element(1, d, 1.0)),
            QuerySpec::Marginals { subsets } => marginal_matrix(domain, subsets),
            QuerySpec::KWay { k } => {
                if *k > domain.num_attributes() {
                    return Err(Error::invalid(format!(
                        "{k}-way marginals need at least {k} attributes"
                    )));
                }
                marginal_matrix(domain, &crate::workloads::k_way_subsets(domain, *k))
            }
            QuerySpec::Matrix { rows } => matrix_from_rows(rows, Some(d)),
            QuerySpec::Bucketization { scheme } => {
                if domain.cardinalities() != Domain::gender_age().cardinalities() {
                    return Err(Error::invalid("bucketization queries need domain [2, 103]"));
                }
                let b = Bucketization::by_name(scheme)
                    .ok_or_else(|| Error::invalid(format!("unknown bucketization {scheme:?}")))?;
                Ok(bucketization_matrix(&b))
            }
        }
    }
}

impl MechanismSpec {
    pub fn domain(&self) -> Result<Domain> {
        Domain::from_cardinalities(&self.domain)
    }

    pub fn build(&self) -> Result<LinearGaussianMechanism> {
        let domain = self.domain()?;
        let b = self.queries.matrix(&domain)?;
        let m = b.nrows();
        match &self.noise {
            NoiseSpec::Sigma2(s) => LinearGaussianMechanism::with_variance(b, *s),
            NoiseSpec::Diag(v) => {
                if v.len() != m {
                    return Err(Error::invalid(format!(
                        "diag noise has {} entries for {m} queries",
                        v.len()
                    )));
                }
                LinearGaussianMechanism::new(b, SymMatrix::from_diagonal(v))
            }
            NoiseSpec::Full(rows) => {
                let s = matrix_from_rows(rows, Some(m))?;
                if s.nrows() != m {
                    return Err(Error::invalid("full covariance has the wrong size"));
                }
                if (&s - s.transpose()).norm() > 1e-12 * (1.0 + s.norm()) {
                    return Err(Error::invalid("full covariance is not symmetric"));
                }
                LinearGaussianMechanism::new(b, SymMatrix::new(s))
            }
            NoiseSpec::TargetRho(rho) => LinearGaussianMechanism::with_target_rho(b, *rho),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
