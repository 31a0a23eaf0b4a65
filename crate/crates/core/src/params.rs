//! Flat parameter vectors and the coordinate arithmetic used by every
//! attack and aggregation rule.
//!
//! Vectors are value types: all operations return fresh vectors and never
//! mutate their inputs, so they are safe to share across workers.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A dense, fixed-length vector of model parameters.
///
/// Every entry is finite; constructors reject NaN and infinities so the
/// invariant holds for the lifetime of the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Build a vector, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("ParamVector entry {pos}"),
            });
        }
        Ok(ParamVector(values))
    }

    /// All-zeros vector of the given length.
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    /// Entry at dimension `d`. Panics if out of range, matching slice indexing.
    pub fn get(&self, d: usize) -> f64 {
        self.0[d]
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }
}

/// `a*u + b*v`, elementwise.
pub fn affine_combine(a: f64, u: &ParamVector, b: f64, v: &ParamVector) -> Result<ParamVector> {
    u.check_len(v)?;
    let values: Vec<f64> = u
        .values()
        .iter()
        .zip(v.values())
        .map(|(&x, &y)| a * x + b * y)
        .collect();
    ParamVector::new(values).map_err(|_| Error::NonFinite {
        context: "affine_combine result".to_string(),
    })
}

/// Euclidean distance between two vectors of equal length.
pub fn l2_distance(u: &ParamVector, v: &ParamVector) -> Result<f64> {
    u.check_len(v)?;
    let sum: f64 = u
        .values()
        .iter()
        .zip(v.values())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum.sqrt())
}

/// Per-dimension statistics across a set of updates: population mean,
/// population standard deviation (divide by count, not count-1), and the
/// ascending sort of the coordinate values.
pub fn elementwise_stats(updates: &[ParamVector], d: usize) -> Result<(f64, f64, Vec<f64>)> {
    if updates.is_empty() {
        return Err(Error::EmptyInput {
            context: "elementwise_stats".to_string(),
        });
    }
    let n = updates.len() as f64;
    // stats accumulate over the sorted column so the results are
    // bit-identical under any permutation of the update list
    let mut sorted: Vec<f64> = updates.iter().map(|u| u.get(d)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt(), sorted))
}
