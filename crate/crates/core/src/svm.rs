//! Scalar nu-one-class SVM with an RBF kernel, solved exactly at the tiny
//! problem sizes GLID needs (one fit per dimension per round).
//!
//! Dual problem: minimize 0.5 * gamma' K gamma subject to
//! 0 <= gamma_i <= 1/(nu * n) and sum gamma_i = 1. Solved by pairwise
//! coordinate (SMO-style) updates, which are exact at convergence for this
//! strictly convex QP.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OneClassSvmModel {
    pub support_values: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub offset: f64,
    pub bandwidth: f64,
}

impl OneClassSvmModel {
    /// Decision value; a point is an outlier when this is negative.
    pub fn decision(&self, x: f64) -> f64 {
        let s: f64 = self
            .support_values
            .iter()
            .zip(&self.multipliers)
            .map(|(&sv, &g)| g * rbf(sv, x, self.bandwidth))
            .sum();
        s - self.offset
    }
}

fn rbf(a: f64, b: f64, bandwidth: f64) -> f64 {
    let d = a - b;
    (-(d * d) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Median of pairwise absolute differences; the usual bandwidth heuristic.
/// Falls back to 1.0 when every pair coincides.
pub fn median_heuristic_bandwidth(values: &[f64]) -> f64 {
    let mut diffs = Vec::with_capacity(values.len() * (values.len() - 1) / 2);
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            diffs.push((values[i] - values[j]).abs());
        }
    }
    if diffs.is_empty() {
        return 1.0;
    }
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = diffs.len() / 2;
    let med = if diffs.len() % 2 == 0 {
        0.5 * (diffs[mid - 1] + diffs[mid])
    } else {
        diffs[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Fit on scalar samples and return the fitted model.
pub fn fit(values: &[f64], nu: f64, bandwidth: f64) -> Result<OneClassSvmModel> {
    Ok(fit_full(values, nu, bandwidth)?.0)
}

/// As `fit`, but also returns the full multiplier vector (aligned with
/// `values`) and the box cap 1/(nu*n); both are needed to classify the
/// training points themselves.
fn fit_full(values: &[f64], nu: f64, bandwidth: f64) -> Result<(OneClassSvmModel, Vec<f64>, f64)> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "one-class svm fit".into(),
        });
    }
    if !(0.0..=1.0).contains(&nu) || nu == 0.0 {
        return Err(Error::InvalidParameter("svm nu must lie in (0, 1]".into()));
    }
    if bandwidth <= 0.0 {
        return Err(Error::InvalidParameter("svm bandwidth must be positive".into()));
    }

    let cap = 1.0 / (nu * n as f64);
    // kernel matrix (n is small, at most a few hundred)
    let mut kernel = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            kernel[i * n + j] = rbf(values[i], values[j], bandwidth);
        }
    }

    // feasible start: spread mass uniformly
    let mut gamma = vec![(1.0 / n as f64).min(cap); n];
    // repair the simplex constraint if the cap truncated the uniform start
    normalize_to_simplex(&mut gamma, cap);

    // gradient g_i = (K gamma)_i
    let mut grad = vec![0.0; n];
    for i in 0..n {
        grad[i] = (0..n).map(|j| kernel[i * n + j] * gamma[j]).sum();
    }

    let tol = 1e-10;
    for _ in 0..200 * n {
        // most violating pair: decrease where gradient is largest among
        // gamma_i > 0, increase where smallest among gamma_i < cap
        let mut up = None;
        let mut down = None;
        for i in 0..n {
            if gamma[i] < cap - 1e-15 {
                up = Some(match up {
                    None => i,
                    Some(u) => {
                        if grad[i] < grad[u] {
                            i
                        } else {
                            u
                        }
                    }
                });
            }
            if gamma[i] > 1e-15 {
                down = Some(match down {
                    None => i,
                    Some(d) => {
                        if grad[i] > grad[d] {
                            i
                        } else {
                            d
                        }
                    }
                });
            }
        }
        let (i, j) = match (up, down) {
            (Some(i), Some(j)) if i != j => (i, j),
            _ => break,
        };
        if grad[j] - grad[i] < tol {
            break;
        }
        // move t mass from j to i; unconstrained optimum of the 1-d problem
        let curvature = kernel[i * n + i] - 2.0 * kernel[i * n + j] + kernel[j * n + j];
        let mut t = if curvature > 1e-15 {
            (grad[j] - grad[i]) / curvature
        } else {
            f64::INFINITY
        };
        t = t.min(cap - gamma[i]).min(gamma[j]);
        if t <= 0.0 {
            break;
        }
        gamma[i] += t;
        gamma[j] -= t;
        for k in 0..n {
            grad[k] += t * (kernel[k * n + i] - kernel[k * n + j]);
        }
    }

    // offset rho: average of (K gamma)_i over free support vectors, falling
    // back to all support vectors when none are strictly inside the box
    let free: Vec<usize> = (0..n)
        .filter(|&i| gamma[i] > 1e-12 && gamma[i] < cap - 1e-12)
        .collect();
    let anchors: Vec<usize> = if free.is_empty() {
        (0..n).filter(|&i| gamma[i] > 1e-12).collect()
    } else {
        free
    };
    let rho = anchors.iter().map(|&i| grad[i]).sum::<f64>() / anchors.len() as f64;

    let (support_values, multipliers): (Vec<f64>, Vec<f64>) = values
        .iter()
        .zip(&gamma)
        .filter(|(_, &g)| g > 1e-12)
        .map(|(&v, &g)| (v, g))
        .unzip();

    let model = OneClassSvmModel {
        support_values,
        multipliers,
        offset: rho,
        bandwidth,
    };
    Ok((model, gamma, cap))
}

fn normalize_to_simplex(gamma: &mut [f64], cap: f64) {
    let mut sum: f64 = gamma.iter().sum();
    let mut guard = 0;
    while (sum - 1.0).abs() > 1e-12 && guard < 64 {
        let deficit = 1.0 - sum;
        let room: f64 = gamma.iter().map(|&g| (cap - g).max(0.0)).sum();
        if deficit > 0.0 && room > 0.0 {
            let frac = deficit / room;
            for g in gamma.iter_mut() {
                *g += (cap - *g).max(0.0) * frac;
            }
        } else if deficit < 0.0 {
            let scale = 1.0 / sum;
            for g in gamma.iter_mut() {
                *g = (*g * scale).min(cap);
            }
        } else {
            break;
        }
        sum = gamma.iter().sum();
        guard += 1;
    }
}

/// Fit and flag in one call; `flags[i]` is true when `values[i]` is an
/// outlier. A training point is an outlier when its decision value is
/// negative or its multiplier sits at the box cap (bounded support vectors
/// are exactly the margin errors, so at most a nu fraction is flagged).
/// All-identical inputs flag nothing: every multiplier is 1/n, strictly
/// inside the box, and the decision value sits on the boundary.
pub fn flag_outliers(values: &[f64], nu: f64, bandwidth: Option<f64>) -> Result<Vec<bool>> {
    let bw = bandwidth.unwrap_or_else(|| median_heuristic_bandwidth(values));
    let (model, gamma, cap) = fit_full(values, nu, bw)?;
    Ok(values
        .iter()
        .zip(&gamma)
        .map(|(&v, &g)| model.decision(v) < -1e-9 || g >= cap * (1.0 - 1e-9))
        .collect())
}
