//! Percentile-pair trimming defense: per-dimension outlier flags from a
//! configurable estimator, deviation-inverse weighting of survivors.

use crate::aggregate::AggregationOutcome;
use crate::error::{Error, Result};
use crate::params::{elementwise_stats, ParamVector};
use crate::svm;
use serde::{Deserialize, Serialize};

/// Weight guard: an exactly-mean value gets the largest finite weight.
const EPS_WEIGHT: f64 = 1e-12;
/// Below this spread a dimension is treated as constant.
const EPS_STD: f64 = 1e-12;

/// Which estimator produces the percentile pair (or the flags directly,
/// for the SVM backend).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlidEstimator {
    Sd {
        #[serde(default = "default_k")]
        k: f64,
    },
    Iqr {
        #[serde(default = "default_k_iqr")]
        k_iqr: f64,
    },
    ZScore {
        #[serde(default = "default_k_z")]
        k_z: f64,
    },
    /// `bandwidth: None` selects the median pairwise-difference heuristic.
    OneClassSvm {
        #[serde(default = "default_nu")]
        nu: f64,
        #[serde(default)]
        bandwidth: Option<f64>,
    },
}

fn default_k() -> f64 {
    3.0
}
fn default_k_iqr() -> f64 {
    1.5
}
fn default_k_z() -> f64 {
    2.0
}
fn default_nu() -> f64 {
    0.2
}

impl Default for GlidEstimator {
    fn default() -> Self {
        GlidEstimator::Sd { k: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlidConfig {
    #[serde(default)]
    pub estimator: GlidEstimator,
    /// Overrides the estimator with a fixed (lo, hi) percentile pair.
    #[serde(default)]
    pub fixed_pair: Option<(f64, f64)>,
}

impl GlidConfig {
    pub fn validate(&self) -> Result<()> {
        match self.estimator {
            GlidEstimator::Sd { k } if k <= 0.0 => {
                return Err(Error::InvalidParameter("glid k must be positive".into()));
            }
            GlidEstimator::Iqr { k_iqr } if k_iqr < 0.0 => {
                return Err(Error::InvalidParameter("glid k_iqr must be nonnegative".into()));
            }
            GlidEstimator::ZScore { k_z } if k_z <= 0.0 => {
                return Err(Error::InvalidParameter("glid k_z must be positive".into()));
            }
            GlidEstimator::OneClassSvm { nu, bandwidth } => {
                if !(nu > 0.0 && nu < 1.0) {
                    return Err(Error::InvalidParameter("glid svm nu must lie in (0,1)".into()));
                }
                if let Some(bw) = bandwidth {
                    if bw <= 0.0 {
                        return Err(Error::InvalidParameter(
                            "glid svm bandwidth must be positive".into(),
                        ));
                    }
                }
            }
            _ => {}
        }
        if let Some((lo, hi)) = self.fixed_pair {
            if !(0.0 <= lo && lo < hi && hi <= 100.0) {
                return Err(Error::InvalidParameter(
                    "glid fixed_pair must satisfy 0 <= lo < hi <= 100".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Percentile of `x` within the sorted sample: g(x) = ((P(x) - 0.5)/n)*100
/// with P(x) the 1-based rank, linearly interpolated between neighboring
/// ranks for off-sample x and clamped to ranks 1 and n outside the range.
/// Ties resolve to the first occurrence.
pub fn percentile_of(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile_of on empty sample");
    let i = sorted.partition_point(|&v| v < x);
    let rank = if i == n {
        n as f64
    } else if sorted[i] == x {
        (i + 1) as f64
    } else if i == 0 {
        1.0
    } else {
        i as f64 + (x - sorted[i - 1]) / (sorted[i] - sorted[i - 1])
    };
    (rank - 0.5) / n as f64 * 100.0
}

/// Percentile pair from mean +- k * population std.
pub fn percentile_pair_sd(sorted: &[f64], mean: f64, std: f64, k: f64) -> (f64, f64) {
    (
        percentile_of(sorted, mean - k * std),
        percentile_of(sorted, mean + k * std),
    )
}

/// Linear-interpolation ("type 7") quantile of a sorted sample.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Percentile pair from Tukey fences Q1 - k*IQR and Q3 + k*IQR.
pub fn percentile_pair_iqr(sorted: &[f64], k_iqr: f64) -> (f64, f64) {
    let q1 = quantile_type7(sorted, 0.25);
    let q3 = quantile_type7(sorted, 0.75);
    let iqr = q3 - q1;
    (
        percentile_of(sorted, q1 - k_iqr * iqr),
        percentile_of(sorted, q3 + k_iqr * iqr),
    )
}

/// Z-score bounds: same form as the SD pair, separate default sensitivity.
pub fn percentile_pair_z(sorted: &[f64], mean: f64, std: f64, k_z: f64) -> (f64, f64) {
    percentile_pair_sd(sorted, mean, std, k_z)
}

/// GLID aggregation. Flags are per (dimension, update); surviving values in
/// a dimension are combined with weights inverse to their absolute deviation
/// from the dimension mean. A dimension where everything is flagged, or whose
/// spread is below EPS_STD, falls back to the unweighted median; fallback
/// dimensions report uniform weights because every value participates there.
pub fn agg_glid(updates: &[ParamVector], cfg: &GlidConfig) -> Result<AggregationOutcome> {
    if updates.len() < 2 {
        return Err(Error::InvalidParameter(
            "glid requires at least 2 updates".into(),
        ));
    }
    cfg.validate()?;
    let n = updates.len();
    let dim = updates[0].len();
    for u in updates {
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: u.len(),
            });
        }
    }

    let mut global = vec![0.0; dim];
    let mut flags = vec![vec![false; n]; dim];
    let mut weights = vec![vec![0.0; n]; dim];

    for d in 0..dim {
        let (mean, std, sorted) = elementwise_stats(updates, d)?;
        let values: Vec<f64> = updates.iter().map(|u| u.get(d)).collect();

        let dim_flags: Vec<bool> = if std < EPS_STD {
            vec![false; n]
        } else if let Some((lo, hi)) = cfg.fixed_pair {
            values
                .iter()
                .map(|&v| {
                    let p = percentile_of(&sorted, v);
                    p < lo || p > hi
                })
                .collect()
        } else {
            match cfg.estimator {
                GlidEstimator::Sd { k } => flag_by_pair(
                    &values,
                    &sorted,
                    percentile_pair_sd(&sorted, mean, std, k),
                ),
                GlidEstimator::Iqr { k_iqr } => {
                    flag_by_pair(&values, &sorted, percentile_pair_iqr(&sorted, k_iqr))
                }
                GlidEstimator::ZScore { k_z } => flag_by_pair(
                    &values,
                    &sorted,
                    percentile_pair_z(&sorted, mean, std, k_z),
                ),
                GlidEstimator::OneClassSvm { nu, bandwidth } => {
                    svm::flag_outliers(&values, nu, bandwidth)?
                }
            }
        };

        let survivors = dim_flags.iter().filter(|&&f| !f).count();
        if std < EPS_STD || survivors == 0 {
            let mid = sorted.len() / 2;
            global[d] = if sorted.len() % 2 == 0 {
                0.5 * (sorted[mid - 1] + sorted[mid])
            } else {
                sorted[mid]
            };
            flags[d] = dim_flags;
            weights[d] = vec![1.0 / n as f64; n];
            continue;
        }

        let mut alpha = vec![0.0; n];
        for i in 0..n {
            if !dim_flags[i] {
                alpha[i] = std / (values[i] - mean).abs().max(EPS_WEIGHT);
            }
        }
        // summing in value order keeps the result bit-identical under any
        // permutation of the update list (equal values get equal alphas)
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(alpha.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let alpha_sum: f64 = pairs.iter().map(|&(_, a)| a).sum();
        global[d] = pairs.iter().map(|&(v, a)| v * a).sum::<f64>() / alpha_sum;
        for i in 0..n {
            weights[d][i] = alpha[i] / alpha_sum;
        }
        flags[d] = dim_flags;
    }

    Ok(AggregationOutcome {
        global: ParamVector::new(global)?,
        flags,
        weights,
    })
}

fn flag_by_pair(values: &[f64], sorted: &[f64], pair: (f64, f64)) -> Vec<bool> {
    let (lo, hi) = pair;
    values
        .iter()
        .map(|&v| {
            let p = percentile_of(sorted, v);
            p < lo || p > hi
        })
        .collect()
}
