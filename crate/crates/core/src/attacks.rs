//! Malicious update crafting: the fake-traffic-injection attack and the
//! five baseline model poisoning attacks.
//!
//! The baseline attacks are realized from one-line descriptions in the
//! literature; the concrete formulas here are this project's committed
//! readings and are documented next to each implementation.

use crate::data::gaussian;
use crate::error::{Error, Result};
use crate::model::{local_train, ModelArch, TrainConfig};
use crate::params::{affine_combine, l2_distance, ParamVector};
use crate::sim::AttackerView;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fake-traffic-injection parameters: the base model the attacker drags the
/// global model towards, the initial blend weight, and the number of
/// refinement iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FtiConfig {
    /// Attacker-chosen base model. `None` means the all-zeros vector.
    pub base_model: Option<Vec<f64>>,
    pub eta0: f64,
    pub refinement_iters: usize,
}

impl Default for FtiConfig {
    fn default() -> Self {
        FtiConfig {
            base_model: None,
            eta0: 10.0,
            refinement_iters: 10,
        }
    }
}

impl FtiConfig {
    pub fn validate(&self) -> Result<()> {
        // eta0 = 0 is allowed: the blend degenerates to the current global,
        // which the eta sweep uses as its no-attack reference point
        if self.eta0 < 0.0 || !self.eta0.is_finite() {
            return Err(Error::Config("fti eta0 must be nonnegative".into()));
        }
        Ok(())
    }

    fn resolve_base(&self, dim: usize) -> Result<ParamVector> {
        match &self.base_model {
            Some(values) => {
                if values.len() != dim {
                    return Err(Error::Config(format!(
                        "fti base model has {} entries, model has {dim}",
                        values.len()
                    )));
                }
                ParamVector::new(values.clone())
            }
            None => Ok(ParamVector::zeros(dim)),
        }
    }
}

/// Shared baseline-attack knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineAttackConfig {
    /// Scaling factor lambda applied by History/Random/MPAF/Zheng.
    pub scaling_factor: f64,
    /// Standard deviation of the Gaussian used by the Random attack.
    pub gaussian_std: f64,
    /// History attack lag in rounds.
    pub history_lag: usize,
    /// How far beyond the benign extreme the Trim attack places its values,
    /// as a fraction of that extreme's magnitude.
    pub trim_spread: f64,
    /// Inversion strength of the Zheng attack (may be zero).
    pub zheng_scale: f64,
}

impl Default for BaselineAttackConfig {
    fn default() -> Self {
        BaselineAttackConfig {
            scaling_factor: 1000.0,
            gaussian_std: 1.0,
            history_lag: 1,
            trim_spread: 0.5,
            zheng_scale: 1.0,
        }
    }
}

impl BaselineAttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scaling_factor == 0.0 {
            return Err(Error::Config("scaling factor must be nonzero".into()));
        }
        if self.gaussian_std < 0.0 {
            return Err(Error::Config("gaussian_std must be >= 0".into()));
        }
        if self.history_lag == 0 {
            return Err(Error::Config("history lag must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one FTI crafting call: the fake model shared by every fake BS
/// this round, the final blend weight, and the full (eta, dist) trace.
#[derive(Debug, Clone)]
pub struct FtiCraft {
    pub fake_params: ParamVector,
    pub eta_final: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Craft the shared fake model via the distance-feedback halving search.
///
/// Each iteration blends `eta * base + (1 - eta) * global`, measures the
/// candidate's L2 distance to the global model, nudges `eta` by half the
/// current step (up if the distance grew, down otherwise), then halves the
/// step. With zero iterations the blend is applied once with `eta0` as-is.
pub fn fti_craft(global: &ParamVector, cfg: &FtiConfig) -> Result<FtiCraft> {
    cfg.validate()?;
    let base = cfg.resolve_base(global.len())?;

    let mut eta = cfg.eta0;
    let mut step = cfg.eta0;
    let mut prev_dist = -1.0;
    let mut trace = Vec::with_capacity(cfg.refinement_iters);
    let mut candidate = affine_combine(eta, &base, 1.0 - eta, global)?;

    for _ in 0..cfg.refinement_iters {
        candidate = affine_combine(eta, &base, 1.0 - eta, global)?;
        let dist = l2_distance(&candidate, global)?;
        if prev_dist < dist {
            eta += step / 2.0;
        } else {
            eta -= step / 2.0;
        }
        step /= 2.0;
        prev_dist = dist;
        trace.push((eta, dist));
    }

    Ok(FtiCraft {
        fake_params: candidate,
        eta_final: eta,
        trace,
    })
}

/// Trim attack: estimate the benign movement direction per dimension from
/// the compromised updates, then submit values just beyond the opposite
/// extreme. A zero direction counts as positive. Each compromised BS gets
/// an independently jittered copy (1% of the spread) so copies are not
/// byte-identical.
pub fn trim_attack(
    known_updates: &[ParamVector],
    global: &ParamVector,
    cfg: &BaselineAttackConfig,
    copies: usize,
    seed: u64,
) -> Result<Vec<ParamVector>> {
    if known_updates.is_empty() {
        return Err(Error::EmptyInput {
            context: "trim attack needs at least one compromised update".into(),
        });
    }
    let dim = global.len();
    let mut template = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for u in known_updates {
            let v = u.get(d);
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        let mean = sum / known_updates.len() as f64;
        let direction = mean - global.get(d);
        let value = if direction >= 0.0 {
            min - min.abs() * cfg.trim_spread
        } else {
            max + max.abs() * cfg.trim_spread
        };
        template.push(value);
    }

    let mut rng = attack_rng(seed, 0);
    (0..copies)
        .map(|_| {
            let values = template
                .iter()
                .map(|&v| {
                    let spread = v.abs() * cfg.trim_spread;
                    v + gaussian(&mut rng) * 0.01 * spread
                })
                .collect();
            ParamVector::new(values)
        })
        .collect()
}

/// History attack: `theta_t + lambda * (theta_{t-h} - theta_t)`, using the
/// initial model while fewer than `h` rounds have elapsed.
pub fn history_attack(view: &AttackerView, cfg: &BaselineAttackConfig) -> Result<ParamVector> {
    let lagged = view.global_at_lag(cfg.history_lag);
    let delta = affine_combine(1.0, lagged, -1.0, view.current_global())?;
    affine_combine(1.0, view.current_global(), cfg.scaling_factor, &delta)
}

/// Random attack: a lambda-scaled i.i.d. Gaussian vector, seeded per BS per
/// round.
pub fn random_attack(dim: usize, cfg: &BaselineAttackConfig, seed: u64) -> Result<ParamVector> {
    let mut rng = attack_rng(seed, 1);
    let values = (0..dim)
        .map(|_| cfg.scaling_factor * cfg.gaussian_std * gaussian(&mut rng))
        .collect();
    ParamVector::new(values)
}

/// MPAF: drag the aggregate toward the initial model,
/// `theta_t + lambda * (theta_0 - theta_t)`.
pub fn mpaf_attack(view: &AttackerView, cfg: &BaselineAttackConfig) -> Result<ParamVector> {
    let delta = affine_combine(1.0, view.initial_global(), -1.0, view.current_global())?;
    affine_combine(1.0, view.current_global(), cfg.scaling_factor, &delta)
}

/// Zheng attack: each compromised BS fine-tunes honestly, then submits the
/// inversion `theta_t - lambda * (delta_i + drift)` where `delta_i` is its
/// own descent direction and `drift = theta_t - theta_{t-1}` (zero at round
/// zero).
pub fn zheng_attack(
    arch: &ModelArch,
    compromised: &[(&crate::data::WindowedDataset, TrainConfig)],
    global: &ParamVector,
    prev_global: Option<&ParamVector>,
    cfg: &BaselineAttackConfig,
) -> Result<Vec<ParamVector>> {
    let drift = match prev_global {
        Some(prev) => affine_combine(1.0, global, -1.0, prev)?,
        None => ParamVector::zeros(global.len()),
    };
    compromised
        .iter()
        .map(|(data, train_cfg)| {
            let tuned = local_train(arch, global, data, train_cfg)?;
            let descent = affine_combine(1.0, &tuned, -1.0, global)?;
            let combined = affine_combine(1.0, &descent, 1.0, &drift)?;
            affine_combine(1.0, global, -cfg.zheng_scale, &combined)
        })
        .collect()
}

fn attack_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16] = 0xa7;
    ChaCha8Rng::from_seed(key)
}
