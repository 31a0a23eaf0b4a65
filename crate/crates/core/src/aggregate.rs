//! Aggregation rules behind one dispatch point.
//!
//! Every rule returns an `AggregationOutcome` carrying the merged model plus
//! per-(dimension, update) flags and combine weights, so detection metrics
//! can be computed uniformly. Rules that exclude nothing report all-false
//! flags and the weights they actually combined with.

use crate::error::{Error, Result};
use crate::glid::{agg_glid, GlidConfig};
use crate::params::{l2_distance, ParamVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AggregationOutcome {
    pub global: ParamVector,
    /// `flags[d][i]` is true when update i was flagged malicious in dim d.
    pub flags: Vec<Vec<bool>>,
    /// `weights[d][i]`: nonnegative combine weight, zero when flagged.
    pub weights: Vec<Vec<f64>>,
}

/// One update as the server sees it: a parameter vector tagged only with the
/// sender's identity. Ground truth about the sender never reaches a rule.
#[derive(Debug, Clone)]
pub struct Submission {
    pub bs_id: u64,
    pub params: ParamVector,
}

/// Aggregation rule with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Rule {
    Mean,
    Median,
    TrimmedMean { trim_fraction: f64 },
    Krum { expected_malicious: usize },
    FoolsGold,
    Faba { remove_fraction: f64 },
    FlTrust,
    Flair,
    Glid(GlidConfig),
}

impl Rule {
    pub fn label(&self) -> &'static str {
        match self {
            Rule::Mean => "mean",
            Rule::Median => "median",
            Rule::TrimmedMean { .. } => "trimmed_mean",
            Rule::Krum { .. } => "krum",
            Rule::FoolsGold => "foolsgold",
            Rule::Faba { .. } => "faba",
            Rule::FlTrust => "fltrust",
            Rule::Flair => "flair",
            Rule::Glid(_) => "glid",
        }
    }
}

/// Server-side context a rule may consult.
pub struct AggContext<'a> {
    pub current_global: &'a ParamVector,
    pub prev_global: Option<&'a ParamVector>,
    /// Model the server trained on its own clean data this round (FLTrust).
    pub server_update: Option<&'a ParamVector>,
}

/// Cross-round aggregator state, owned by the experiment loop and updated
/// once per aggregation call.
#[derive(Debug, Clone, Default)]
pub struct AggState {
    /// FoolsGold: cumulative sum of each BS's submitted updates.
    pub foolsgold_history: BTreeMap<u64, Vec<f64>>,
    /// FLAIR: exponentially decayed suspicion score per BS.
    pub flair_suspicion: BTreeMap<u64, f64>,
}

pub fn aggregate(
    rule: &Rule,
    submissions: &[Submission],
    ctx: &AggContext,
    state: &mut AggState,
) -> Result<AggregationOutcome> {
    if submissions.is_empty() {
        return Err(Error::EmptyInput {
            context: "aggregate".into(),
        });
    }
    let dim = submissions[0].params.len();
    for s in submissions {
        if s.params.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: s.params.len(),
            });
        }
    }
    match rule {
        Rule::Mean => agg_mean(submissions),
        Rule::Median => agg_median(submissions),
        Rule::TrimmedMean { trim_fraction } => agg_trimmed_mean(submissions, *trim_fraction),
        Rule::Krum { expected_malicious } => agg_krum(submissions, *expected_malicious),
        Rule::FoolsGold => agg_foolsgold(submissions, state),
        Rule::Faba { remove_fraction } => agg_faba(submissions, *remove_fraction),
        Rule::FlTrust => agg_fltrust(submissions, ctx),
        Rule::Flair => agg_flair(submissions, ctx, state),
        Rule::Glid(cfg) => {
            let updates: Vec<ParamVector> =
                submissions.iter().map(|s| s.params.clone()).collect();
            agg_glid(&updates, cfg)
        }
    }
}

fn no_flags(n: usize, dim: usize) -> Vec<Vec<bool>> {
    vec![vec![false; n]; dim]
}

/// Outcome whose weights are one per-BS weight replicated across dimensions.
fn per_bs_outcome(global: ParamVector, bs_weights: &[f64], dim: usize) -> AggregationOutcome {
    let n = bs_weights.len();
    AggregationOutcome {
        global,
        flags: no_flags(n, dim),
        weights: vec![bs_weights.to_vec(); dim],
    }
}

pub fn agg_mean(submissions: &[Submission]) -> Result<AggregationOutcome> {
    let n = submissions.len();
    let dim = submissions[0].params.len();
    // summing each column in sorted order keeps the result bit-identical
    // under any permutation of the update list
    let mut global = vec![0.0; dim];
    let mut column = vec![0.0; n];
    for (d, out) in global.iter_mut().enumerate() {
        for (c, s) in column.iter_mut().zip(submissions) {
            *c = s.params.get(d);
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        *out = column.iter().sum::<f64>() / n as f64;
    }
    let global = ParamVector::new(global)?;
    Ok(per_bs_outcome(global, &vec![1.0 / n as f64; n], dim))
}

pub fn agg_median(submissions: &[Submission]) -> Result<AggregationOutcome> {
    let n = submissions.len();
    let dim = submissions[0].params.len();
    let mut global = vec![0.0; dim];
    let mut weights = vec![vec![0.0; n]; dim];
    for d in 0..dim {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            submissions[a]
                .params
                .get(d)
                .partial_cmp(&submissions[b].params.get(d))
                .unwrap()
        });
        let mid = n / 2;
        if n % 2 == 1 {
            global[d] = submissions[idx[mid]].params.get(d);
            weights[d][idx[mid]] = 1.0;
        } else {
            let (a, b) = (idx[mid - 1], idx[mid]);
            global[d] = 0.5 * (submissions[a].params.get(d) + submissions[b].params.get(d));
            weights[d][a] = 0.5;
            weights[d][b] = 0.5;
        }
    }
    Ok(AggregationOutcome {
        global: ParamVector::new(global)?,
        flags: no_flags(n, dim),
        weights,
    })
}

pub fn agg_trimmed_mean(submissions: &[Submission], trim_fraction: f64) -> Result<AggregationOutcome> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::InvalidParameter(
            "trim_fraction must lie in [0, 0.5)".into(),
        ));
    }
    let n = submissions.len();
    let g = (trim_fraction * n as f64).floor() as usize;
    if 2 * g >= n {
        return Err(Error::InvalidParameter(format!(
            "trimmed mean would drop all {n} updates (trim count {g} per side)"
        )));
    }
    let dim = submissions[0].params.len();
    let keep = n - 2 * g;
    let mut global = vec![0.0; dim];
    let mut weights = vec![vec![0.0; n]; dim];
    for d in 0..dim {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            submissions[a]
                .params
                .get(d)
                .partial_cmp(&submissions[b].params.get(d))
                .unwrap()
        });
        let mut sum = 0.0;
        for &i in &idx[g..n - g] {
            sum += submissions[i].params.get(d);
            weights[d][i] = 1.0 / keep as f64;
        }
        global[d] = sum / keep as f64;
    }
    Ok(AggregationOutcome {
        global: ParamVector::new(global)?,
        flags: no_flags(n, dim),
        weights,
    })
}

/// Krum in its original form: score is the sum of squared distances to the
/// (n+m-f-2) nearest other updates; the minimum-score update wins outright.
pub fn agg_krum(submissions: &[Submission], f: usize) -> Result<AggregationOutcome> {
    let n = submissions.len();
    if n < f + 3 {
        return Err(Error::InvalidParameter(format!(
            "krum needs at least f+3 = {} updates, got {n}",
            f + 3
        )));
    }
    let dim = submissions[0].params.len();
    let neighbors = n - f - 2;
    let mut best: Option<(f64, u64, usize)> = None;
    for i in 0..n {
        let mut sq: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = l2_distance(&submissions[i].params, &submissions[j].params).unwrap();
                d * d
            })
            .collect();
        sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let score: f64 = sq[..neighbors].iter().sum();
        let key = (score, submissions[i].bs_id, i);
        // ties on score resolve to the lowest bs_id
        best = Some(match best {
            None => key,
            Some(b) if (score, submissions[i].bs_id) < (b.0, b.1) => key,
            Some(b) => b,
        });
    }
    let (_, _, winner) = best.unwrap();
    let mut bs_weights = vec![0.0; n];
    bs_weights[winner] = 1.0;
    Ok(per_bs_outcome(
        submissions[winner].params.clone(),
        &bs_weights,
        dim,
    ))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// FoolsGold, realized from the paper's one-line description ("calculates a
/// cosine similarity matrix among all BSs and adjusts the weights") with the
/// standard procedure: similarity on cumulative histories, pardoning, max
/// rescale, then a logit stretch clipped to [0, 1].
pub fn agg_foolsgold(submissions: &[Submission], state: &mut AggState) -> Result<AggregationOutcome> {
    let n = submissions.len();
    let dim = submissions[0].params.len();

    for s in submissions {
        let hist = state
            .foolsgold_history
            .entry(s.bs_id)
            .or_insert_with(|| vec![0.0; dim]);
        if hist.len() != dim {
            return Err(Error::DimensionMismatch {
                left: hist.len(),
                right: dim,
            });
        }
        for (h, &v) in hist.iter_mut().zip(s.params.values()) {
            *h += v;
        }
    }

    let hists: Vec<&Vec<f64>> = submissions
        .iter()
        .map(|s| &state.foolsgold_history[&s.bs_id])
        .collect();
    let mut cs = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cs[i][j] = cosine(hists[i], hists[j]);
            }
        }
    }
    let vmax: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| cs[i][j]).fold(0.0, f64::max))
        .collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && vmax[j] > vmax[i] && vmax[j] > 0.0 {
                cs[i][j] *= vmax[i] / vmax[j];
            }
        }
    }
    let mut wv: Vec<f64> = (0..n)
        .map(|i| {
            let m = (0..n).filter(|&j| j != i).map(|j| cs[i][j]).fold(0.0, f64::max);
            (1.0 - m).clamp(0.0, 1.0)
        })
        .collect();
    let top = wv.iter().cloned().fold(0.0, f64::max);
    if top > 0.0 {
        for w in wv.iter_mut() {
            *w /= top;
            if *w >= 1.0 {
                *w = 0.99;
            }
            *w = ((*w / (1.0 - *w)).ln() + 0.5).clamp(0.0, 1.0);
        }
    }

    let total: f64 = wv.iter().sum();
    if total <= 0.0 {
        // every history pair fully similar: no signal, fall back to the mean
        return agg_mean(submissions);
    }
    let bs_weights: Vec<f64> = wv.iter().map(|w| w / total).collect();
    Ok(per_bs_outcome(
        weighted_mean(submissions, &bs_weights)?,
        &bs_weights,
        dim,
    ))
}

fn weighted_mean(submissions: &[Submission], weights: &[f64]) -> Result<ParamVector> {
    let dim = submissions[0].params.len();
    let mut out = vec![0.0; dim];
    for (s, &w) in submissions.iter().zip(weights) {
        for (acc, &v) in out.iter_mut().zip(s.params.values()) {
            *acc += w * v;
        }
    }
    ParamVector::new(out)
}

/// FABA, realized from "excluding a specific percentage of the most distant
/// models": repeatedly drop the update farthest from the running mean.
pub fn agg_faba(submissions: &[Submission], remove_fraction: f64) -> Result<AggregationOutcome> {
    if !(0.0..1.0).contains(&remove_fraction) {
        return Err(Error::InvalidParameter(
            "remove_fraction must lie in [0, 1)".into(),
        ));
    }
    let n = submissions.len();
    let dim = submissions[0].params.len();
    let rounds = (remove_fraction * n as f64).floor() as usize;
    if rounds >= n {
        return Err(Error::InvalidParameter(
            "faba would remove every update".into(),
        ));
    }
    let mut alive: Vec<usize> = (0..n).collect();
    for _ in 0..rounds {
        let live: Vec<Submission> = alive.iter().map(|&i| submissions[i].clone()).collect();
        let mean = agg_mean(&live)?.global;
        // farthest from the mean goes; distance ties drop the lowest bs_id
        let victim_pos = (0..alive.len())
            .max_by(|&a, &b| {
                let da = l2_distance(&submissions[alive[a]].params, &mean).unwrap();
                let db = l2_distance(&submissions[alive[b]].params, &mean).unwrap();
                da.partial_cmp(&db)
                    .unwrap()
                    .then(submissions[alive[b]].bs_id.cmp(&submissions[alive[a]].bs_id))
            })
            .unwrap();
        alive.remove(victim_pos);
    }
    let survivors: Vec<Submission> = alive.iter().map(|&i| submissions[i].clone()).collect();
    let mean = agg_mean(&survivors)?.global;
    let mut flags = vec![vec![true; n]; dim];
    let mut weights = vec![vec![0.0; n]; dim];
    for &i in &alive {
        for d in 0..dim {
            flags[d][i] = false;
            weights[d][i] = 1.0 / alive.len() as f64;
        }
    }
    Ok(AggregationOutcome {
        global: mean,
        flags,
        weights,
    })
}

/// FLTrust: trust each BS by the clipped cosine between its delta and the
/// server's clean-data delta, rescale every delta to the server delta's
/// norm, and move the global by the trust-weighted mean of those deltas.
pub fn agg_fltrust(submissions: &[Submission], ctx: &AggContext) -> Result<AggregationOutcome> {
    let server = ctx.server_update.ok_or_else(|| {
        Error::InvalidParameter("fltrust requires a server update in the context".into())
    })?;
    let n = submissions.len();
    let dim = submissions[0].params.len();
    if server.len() != dim || ctx.current_global.len() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: server.len(),
        });
    }
    let theta = ctx.current_global.values();
    let server_delta: Vec<f64> = server
        .values()
        .iter()
        .zip(theta)
        .map(|(&s, &t)| s - t)
        .collect();
    let server_norm: f64 = server_delta.iter().map(|&v| v * v).sum::<f64>().sqrt();

    let mut trusts = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    for s in submissions {
        let delta: Vec<f64> = s
            .params
            .values()
            .iter()
            .zip(theta)
            .map(|(&u, &t)| u - t)
            .collect();
        trusts.push(cosine(&delta, &server_delta).max(0.0));
        deltas.push(delta);
    }
    let trust_sum: f64 = trusts.iter().sum();

    if trust_sum <= 0.0 || server_norm == 0.0 {
        // no BS aligns with the clean direction: take the server's own step.
        // The reported weights are uniform but unused by this branch.
        let global = ParamVector::new(
            theta
                .iter()
                .zip(&server_delta)
                .map(|(&t, &d)| t + d)
                .collect(),
        )?;
        return Ok(per_bs_outcome(global, &vec![1.0 / n as f64; n], dim));
    }

    let mut step = vec![0.0; dim];
    for (delta, &trust) in deltas.iter().zip(&trusts) {
        let norm: f64 = delta.iter().map(|&v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { server_norm / norm } else { 0.0 };
        for (acc, &v) in step.iter_mut().zip(delta) {
            *acc += trust * scale * v;
        }
    }
    let global = ParamVector::new(
        theta
            .iter()
            .zip(&step)
            .map(|(&t, &v)| t + v / trust_sum)
            .collect(),
    )?;
    let bs_weights: Vec<f64> = trusts.iter().map(|&t| t / trust_sum).collect();
    Ok(per_bs_outcome(global, &bs_weights, dim))
}

const FLAIR_DECAY: f64 = 0.9;
const FLAIR_SHARPNESS: f64 = 5.0;

/// FLAIR, realized from "flip-scores derived from the changes in gradient
/// directions and suspicion-scores based on historical behavior": the flip
/// score is the fraction of dimensions moving against the global trajectory,
/// folded into a decayed suspicion that exponentially discounts weights.
pub fn agg_flair(
    submissions: &[Submission],
    ctx: &AggContext,
    state: &mut AggState,
) -> Result<AggregationOutcome> {
    let n = submissions.len();
    let dim = submissions[0].params.len();
    let prev = match ctx.prev_global {
        Some(p) => p,
        None => return agg_mean(submissions),
    };
    if prev.len() != dim || ctx.current_global.len() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: prev.len(),
        });
    }
    let theta = ctx.current_global.values();
    let trajectory: Vec<f64> = theta
        .iter()
        .zip(prev.values())
        .map(|(&c, &p)| c - p)
        .collect();

    let mut bs_weights = Vec::with_capacity(n);
    for s in submissions {
        let flips = s
            .params
            .values()
            .iter()
            .zip(theta)
            .zip(&trajectory)
            .filter(|&((&u, &t), &tr)| sign(u - t) != sign(tr))
            .count();
        let flip = flips as f64 / dim as f64;
        let suspicion = state.flair_suspicion.entry(s.bs_id).or_insert(0.0);
        *suspicion = FLAIR_DECAY * *suspicion + (1.0 - FLAIR_DECAY) * flip;
        bs_weights.push((-FLAIR_SHARPNESS * *suspicion).exp());
    }
    let total: f64 = bs_weights.iter().sum();
    for w in bs_weights.iter_mut() {
        *w /= total;
    }
    Ok(per_bs_outcome(
        weighted_mean(submissions, &bs_weights)?,
        &bs_weights,
        dim,
    ))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}
