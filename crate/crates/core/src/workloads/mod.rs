//! Query workloads over categorical domains and histogram I/O.
//!
//! Cells are ordered mixed-radix with the last attribute varying fastest, so
//! cell `(a₀, …, a_{k−1})` has index `((a₀·n₁ + a₁)·n₂ + …)`.

mod histogram;
mod synth;

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use histogram::{
    export_histogram, ingest_histogram, read_histogram, write_histogram, CsvLayout,
};
pub use synth::{synth_blocks, SizeDistribution, SynthConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    names: Vec<String>,
    cardinalities: Vec<usize>,
}

impl Domain {
    pub fn new(names: Vec<String>, cardinalities: Vec<usize>) -> Result<Self> {
        if names.len() != cardinalities.len() {
            return Err(Error::invalid("one name per attribute is required"));
        }
        if cardinalities.is_empty() {
            return Err(Error::invalid("domain needs at least one attribute"));
        }
        if let Some(i) = cardinalities.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("attribute {i} has cardinality 0")));
        }
        cardinalities
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| Error::invalid("domain size overflows"))?;
        Ok(Domain {
            names,
            cardinalities,
        })
    }

    /// Attributes named `a0`, `a1`, ….
    pub fn from_cardinalities(cardinalities: &[usize]) -> Result<Self> {
        let names = (0..cardinalities.len()).map(|i| format!("a{i}")).collect();
        Domain::new(names, cardinalities.to_vec())
    }

    /// `n` binary attributes.
    pub fn binary(n: usize) -> Result<Self> {
        Domain::from_cardinalities(&vec![2; n])
    }

    /// The 2 × 103 gender-age domain of the census chain; gender is the
    /// slower attribute.
    pub fn gender_age() -> Self {
        Domain::new(vec!["gender".into(), "age".into()], vec![GENDERS, AGES]).expect("valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn num_attributes(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn size(&self) -> usize {
        self.cardinalities.iter().product()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cell_index(&self, tuple: &[usize]) -> Result<usize> {
        if tuple.len() != self.cardinalities.len() {
            return Err(Error::invalid(format!(
                "expected {} attribute values, got {}",
                self.cardinalities.len(),
                tuple.len()
            )));
        }
        let mut idx = 0;
        for (k, (&v, &n)) in tuple.iter().zip(&self.cardinalities).enumerate() {
            if v >= n {
                return Err(Error::invalid(format!(
                    "value {v} out of range for attribute {k} (cardinality {n})"
                )));
            }
            idx = idx * n + v;
        }
        Ok(idx)
    }

    pub fn cell_tuple(&self, mut index: usize) -> Vec<usize> {
        let mut t = vec![0; self.cardinalities.len()];
        for (slot, &n) in t.iter_mut().zip(&self.cardinalities).rev() {
            *slot = index % n;
            index /= n;
        }
        t
    }
}

/// All `k`-element attribute subsets in lexicographic order.
pub fn k_way_subsets(domain: &Domain, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= domain.num_attributes() {
        rec(0, domain.num_attributes(), k, &mut Vec::new(), &mut out);
    }
    out
}

/// Stacks one 0/1 row per marginal cell, subsets in order, marginal cells in
/// mixed-radix order. The empty subset is the total query.
pub fn marginal_matrix(domain: &Domain, subsets: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let d = domain.size();
    let cards = domain.cardinalities();
    let mut blocks = Vec::with_capacity(subsets.len());
    for s in subsets {
        let mut seen = vec![false; cards.len()];
        for &a in s {
            if a >= cards.len() {
                return Err(Error::invalid(format!("unknown attribute {a}")));
            }
            if std::mem::replace(&mut seen[a], true) {
                return Err(Error::invalid(format!(
                    "attribute {a} repeated in a subset"
                )));
            }
        }
        let rows: usize = s.iter().map(|&a| cards[a]).product();
        let mut block = DMatrix::zeros(rows, d);
        for cell in 0..d {
            let t = domain.cell_tuple(cell);
            let r = s.iter().fold(0, |acc, &a| acc * cards[a] + t[a]);
            block[(r, cell)] = 1.0;
        }
        blocks.push(block);
    }
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, d);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(&b);
        r += b.nrows();
    }
    Ok(out)
}

pub const AGES: usize = 103;
pub const GENDERS: usize = 2;

/// A partition of `[0, 103)` into contiguous half-open age ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucketization {
    pub name: String,
    /// Boundaries `0 = b₀ < b₁ < … < b_k = 103`.
    pub bounds: Vec<usize>,
}

impl Bucketization {
    pub fn new(name: impl Into<String>, bounds: Vec<usize>) -> Result<Self> {
        if bounds.len() < 2 || bounds[0] != 0 || *bounds.last().unwrap() != AGES {
            return Err(Error::invalid(format!(
                "bucket bounds must run from 0 to {AGES}"
            )));
        }
        if bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("bucket bounds must be strictly increasing"));
        }
        Ok(Bucketization {
            name: name.into(),
            bounds,
        })
    }

    pub fn total() -> Self {
        Bucketization::new("Total", vec![0, AGES]).expect("valid")
    }

    pub fn age4() -> Self {
        Bucketization::new("Age4", vec![0, 18, 45, 65, AGES]).expect("valid")
    }

    pub fn age9() -> Self {
        Bucketization::new("Age9", vec![0, 5, 18, 25, 35, 45, 55, 65, 75, AGES]).expect("valid")
    }

    pub fn age23() -> Self {
        Bucketization::new(
            "Age23",
            vec![
                0, 5, 10, 15, 18, 20, 21, 22, 25, 30, 35, 40, 45, 50, 55, 60, 62, 65, 67, 70, 75,
                80, 85, AGES,
            ],
        )
        .expect("valid")
    }

    /// Total, Age4, Age9, Age23: each refines the one before.
    pub fn chain() -> [Bucketization; 4] {
        [Self::total(), Self::age4(), Self::age9(), Self::age23()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "total" => Some(Self::total()),
            "age4" => Some(Self::age4()),
            "age9" => Some(Self::age9()),
            "age23" => Some(Self::age23()),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn buckets(&self) -> Vec<Range<usize>> {
        self.bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }
}

/// `(2·k) × 206` matrix over the gender-age domain; row `g·k + j` sums the
/// ages of bucket `j` for gender `g`.
pub fn bucketization_matrix(b: &Bucketization) -> DMatrix<f64> {
    let k = b.len();
    let mut m = DMatrix::zeros(GENDERS * k, GENDERS * AGES);
    for g in 0..GENDERS {
        for (j, r) in b.buckets().into_iter().enumerate() {
            for age in r {
                m[(g * k + j, g * AGES + age)] = 1.0;
            }
        }
    }
    m
}
