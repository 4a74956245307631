//! Sample pools, per-dimension sorted views and prior-driven generation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::rng::RandomStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("sample pool is empty")]
    Empty,
    #[error("samples have zero dimensions")]
    NoDimensions,
    #[error("row {row} has {found} values, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("invalid prior for column {column}: {reason}")]
    InvalidPrior { column: usize, reason: String },
    #[error("no priors given")]
    NoPriors,
}

/// One dimension of a pool in ascending order. Ties are ordered by
/// original sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedColumn {
    values: Vec<f64>,
    index: Vec<usize>,
}

impl SortedColumn {
    fn build(column: impl Iterator<Item = f64>) -> Self {
        let mut tagged: Vec<(f64, usize)> = column.enumerate().map(|(i, v)| (v, i)).collect();
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (values, index) = tagged.into_iter().unzip();
        Self { values, index }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Original sample index of each entry of [`values`](Self::values).
    pub fn indices(&self) -> &[usize] {
        &self.index
    }
}

/// An immutable `n x d` pool of finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    n: usize,
    d: usize,
    data: Vec<f64>,
    sorted: Vec<SortedColumn>,
}

impl SamplePool {
    /// Builds a pool from rows, validating shape and finiteness.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, PoolError> {
        let first = rows.first().ok_or(PoolError::Empty)?;
        let d = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (row, values) in rows.iter().enumerate() {
            let values = values.as_ref();
            if values.len() != d {
                return Err(PoolError::Ragged {
                    row,
                    expected: d,
                    found: values.len(),
                });
            }
            data.extend_from_slice(values);
        }
        Self::from_flat(rows.len(), d, data)
    }

    /// Builds a pool from row-major data.
    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self, PoolError> {
        if n == 0 {
            return Err(PoolError::Empty);
        }
        if d == 0 {
            return Err(PoolError::NoDimensions);
        }
        assert_eq!(data.len(), n * d, "flat data does not match n x d");
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PoolError::NonFinite {
                row: pos / d,
                column: pos % d,
            });
        }
        let sorted = (0..d)
            .map(|j| SortedColumn::build((0..n).map(|i| data[i * d + j])))
            .collect();
        Ok(Self { n, d, data, sorted })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn sorted_view(&self, j: usize) -> &SortedColumn {
        &self.sorted[j]
    }

    /// Sub-pool made of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<SamplePool, PoolError> {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        SamplePool::from_flat(rows.len(), self.d, data)
    }

    /// Per-column sample standard deviation (population form).
    pub fn column_std(&self) -> Vec<f64> {
        (0..self.d)
            .map(|j| {
                let mean = (0..self.n).map(|i| self.value(i, j)).sum::<f64>() / self.n as f64;
                let var = (0..self.n)
                    .map(|i| (self.value(i, j) - mean).powi(2))
                    .sum::<f64>()
                    / self.n as f64;
                var.sqrt()
            })
            .collect()
    }

    /// SHA-256 over `n`, `d` and the IEEE bits of every value, row-major.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Distribution family for one input dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl Prior {
    pub fn validate(&self) -> Result<(), String> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            Prior::Uniform { lo, hi } => {
                if !finite(&[lo, hi]) || lo >= hi {
                    return Err(format!("uniform needs finite lo < hi, got ({lo}, {hi})"));
                }
            }
            Prior::Normal { mean, sd } => {
                if !finite(&[mean, sd]) || sd <= 0.0 {
                    return Err(format!("normal needs finite mean and sd > 0, got ({mean}, {sd})"));
                }
            }
            Prior::TruncatedNormal { mean, sd, lo, hi } => {
                if !finite(&[mean, sd, lo, hi]) || sd <= 0.0 || lo >= hi {
                    return Err(format!(
                        "truncated normal needs sd > 0 and lo < hi, got ({mean}, {sd}, {lo}, {hi})"
                    ));
                }
            }
            Prior::LogUniform { lo, hi } => {
                if !finite(&[lo, hi]) || lo <= 0.0 || lo >= hi {
                    return Err(format!("log-uniform needs 0 < lo < hi, got ({lo}, {hi})"));
                }
            }
        }
        Ok(())
    }

    /// One draw. Assumes [`validate`](Self::validate) passed.
    pub fn sample(&self, rng: &mut RandomStream) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => lo + (hi - lo) * rng.unit(),
            Prior::Normal { mean, sd } => {
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                mean + sd * z
            }
            Prior::TruncatedNormal { mean, sd, lo, hi } => {
                truncated_standard_normal((lo - mean) / sd, (hi - mean) / sd, rng)
                    .mul_add(sd, mean)
                    .clamp(lo, hi)
            }
            Prior::LogUniform { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * rng.unit()).exp(),
        }
    }
}

/// Inverse-CDF draw from N(0,1) restricted to `[a, b]`. Works in the lower
/// tail (mirroring when needed) so the CDF stays well resolved.
fn truncated_standard_normal(a: f64, b: f64, rng: &mut RandomStream) -> f64 {
    if a > 0.0 {
        return -truncated_standard_normal(-b, -a, rng);
    }
    let std = Normal::standard();
    let (pa, pb) = (std.cdf(a), std.cdf(b));
    let u = pa + (pb - pa) * rng.unit();
    std.inverse_cdf(u).clamp(a, b)
}

/// The `priors` block of a JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub priors: Vec<Prior>,
}

impl PriorSpec {
    /// Default priors for the phase-field inputs `[c*, W, kappa, M]`.
    ///
    /// The composition stays inside the spinodal region of the 0.3/0.7
    /// double well; the other three span a factor of four around unity.
    pub fn phase_field_demo() -> Self {
        Self {
            priors: vec![
                Prior::TruncatedNormal {
                    mean: 0.5,
                    sd: 0.04,
                    lo: 0.42,
                    hi: 0.58,
                },
                Prior::Uniform { lo: 0.5, hi: 2.0 },
                Prior::LogUniform { lo: 0.5, hi: 2.0 },
                Prior::LogUniform { lo: 0.5, hi: 2.0 },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        if self.priors.is_empty() {
            return Err(PoolError::NoPriors);
        }
        for (column, p) in self.priors.iter().enumerate() {
            p.validate()
                .map_err(|reason| PoolError::InvalidPrior { column, reason })?;
        }
        Ok(())
    }
}

/// Draws `n` i.i.d. rows, one column per prior, row by row from `rng`.
pub fn generate_pool(priors: &PriorSpec, n: usize, rng: &mut RandomStream) -> Result<SamplePool, PoolError> {
    priors.validate()?;
    if n == 0 {
        return Err(PoolError::Empty);
    }
    let d = priors.priors.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for p in &priors.priors {
            data.push(p.sample(rng));
        }
    }
    SamplePool::from_flat(n, d, data)
}
