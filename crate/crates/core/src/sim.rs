//! Round orchestration: synchronize, train or attack, aggregate.
//!
//! Rounds are strictly sequential; everything inside a round is derived from
//! explicit seeds, so a run is a pure function of its config.

use crate::aggregate::{aggregate, AggContext, AggState, Rule, Submission};
use crate::attacks::{
    fti_craft, history_attack, mpaf_attack, random_attack, trim_attack, zheng_attack,
    BaselineAttackConfig, FtiConfig,
};
use crate::config::ExperimentConfig;
use crate::data::{build_windows, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::{cap_metric, DetectionAccumulator, DetectionReport, RoundRecord, METRIC_CAP};
use crate::model::{evaluate, init_model, local_train, ModelArch, TrainConfig};
use crate::params::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Consecutive capped rounds before a run counts as broken.
pub const BROKEN_STREAK: usize = 5;

/// Ground truth about an update's sender. Aggregators never see this; they
/// receive `Submission`s, a type without the tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Benign,
    Fake,
    Compromised,
}

/// One model submitted to the server, with ground truth attached for
/// metrics only.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub bs_id: u64,
    pub round: usize,
    pub params: ParamVector,
    truth: Truth,
}

impl LocalUpdate {
    pub fn new(bs_id: u64, round: usize, params: ParamVector, truth: Truth) -> Self {
        LocalUpdate {
            bs_id,
            round,
            params,
            truth,
        }
    }

    pub fn truth(&self) -> Truth {
        self.truth
    }

    pub fn is_adversarial(&self) -> bool {
        self.truth != Truth::Benign
    }

    /// What the aggregator is allowed to see.
    pub fn submission(&self) -> Submission {
        Submission {
            bs_id: self.bs_id,
            params: self.params.clone(),
        }
    }
}

/// What a global-knowledge attacker can observe: the initial model and the
/// broadcast globals. Benign updates and training data are absent by
/// construction.
#[derive(Debug, Clone)]
pub struct AttackerView {
    initial: ParamVector,
    history: Vec<ParamVector>,
}

impl AttackerView {
    /// `history` holds the broadcast globals in round order, the current
    /// model last.
    pub fn new(initial: ParamVector, history: Vec<ParamVector>) -> Self {
        AttackerView { initial, history }
    }

    pub fn current_global(&self) -> &ParamVector {
        self.history.last().unwrap_or(&self.initial)
    }

    pub fn initial_global(&self) -> &ParamVector {
        &self.initial
    }

    /// Global model `lag` rounds back; the initial model when fewer rounds
    /// have elapsed.
    pub fn global_at_lag(&self, lag: usize) -> &ParamVector {
        if lag < self.history.len() {
            &self.history[self.history.len() - 1 - lag]
        } else {
            &self.initial
        }
    }
}

/// Fleet composition. The adversaries are fake BSs for global-knowledge
/// attacks and compromised (data-holding) BSs for Trim/Zheng.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub n_benign: usize,
    pub n_adversarial: usize,
}

impl FleetConfig {
    pub fn total(&self) -> usize {
        self.n_benign + self.n_adversarial
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_benign == 0 {
            return Err(Error::Config("fleet needs at least one benign BS".into()));
        }
        Ok(())
    }
}

/// Which attack runs, with its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AttackSpec {
    None,
    Fti(FtiConfig),
    Trim(BaselineAttackConfig),
    History(BaselineAttackConfig),
    Random(BaselineAttackConfig),
    Mpaf(BaselineAttackConfig),
    Zheng(BaselineAttackConfig),
}

impl AttackSpec {
    pub fn label(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Fti(_) => "fti",
            AttackSpec::Trim(_) => "trim",
            AttackSpec::History(_) => "history",
            AttackSpec::Random(_) => "random",
            AttackSpec::Mpaf(_) => "mpaf",
            AttackSpec::Zheng(_) => "zheng",
        }
    }

    /// Trim and Zheng control real BSs with data; the rest inject fake BSs.
    pub fn uses_compromised(&self) -> bool {
        matches!(self, AttackSpec::Trim(_) | AttackSpec::Zheng(_))
    }

    pub fn is_none(&self) -> bool {
        matches!(self, AttackSpec::None)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttackSpec::None => Ok(()),
            AttackSpec::Fti(cfg) => cfg.validate(),
            AttackSpec::Trim(cfg)
            | AttackSpec::History(cfg)
            | AttackSpec::Random(cfg)
            | AttackSpec::Mpaf(cfg)
            | AttackSpec::Zheng(cfg) => cfg.validate(),
        }
    }
}

/// Seed triple: data generation, model init, and everything per-round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub round: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 1,
            init: 2,
            round: 3,
        }
    }
}

const DOMAIN_TRAIN: u64 = 1;
const DOMAIN_TRIM: u64 = 2;
const DOMAIN_RANDOM: u64 = 3;
const DOMAIN_SHUFFLE: u64 = 4;
const DOMAIN_SERVER: u64 = 5;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derivation; every independent random stream in a run
/// gets its own (master, parts) path.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[16] = 0x5f;
    let mut rng = ChaCha8Rng::from_seed(key);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Everything `run_round` needs that is constant across rounds.
pub struct SimSetup<'a> {
    pub arch: &'a ModelArch,
    /// Base hyperparameters; the seed field is replaced per (BS, round).
    pub train: &'a TrainConfig,
    pub fleet: &'a FleetConfig,
    pub attack: &'a AttackSpec,
    pub rule: &'a Rule,
    /// Indexed by bs_id: benign BSs first, then compromised BSs if the
    /// attack controls real ones. Fake BSs have no entry.
    pub train_sets: &'a [WindowedDataset],
    pub test_sets: &'a [WindowedDataset],
    /// Server-held clean data, required by FLTrust.
    pub server_set: Option<&'a WindowedDataset>,
    pub round_seed: u64,
}

impl SimSetup<'_> {
    fn effective_adversaries(&self) -> usize {
        if self.attack.is_none() {
            0
        } else {
            self.fleet.n_adversarial
        }
    }

    fn train_cfg(&self, round: usize, bs_id: u64) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.round_seed, &[round as u64, bs_id, DOMAIN_TRAIN]),
            ..*self.train
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub global: ParamVector,
    pub record: RoundRecord,
    /// Flags in presented order, [D x presented].
    pub flags: Vec<Vec<bool>>,
    /// Ground truth in presented order.
    pub adversarial: Vec<bool>,
}

/// One protocol round: broadcast the current global (the last entry of
/// `history`), gather benign and adversarial updates, shuffle the
/// presentation order, aggregate, evaluate.
pub fn run_round(
    setup: &SimSetup,
    round: usize,
    history: &[ParamVector],
    agg_state: &mut AggState,
) -> Result<RoundResult> {
    let current = history.last().ok_or_else(|| Error::EmptyInput {
        context: "run_round global history".into(),
    })?;
    let prev = (history.len() >= 2).then(|| &history[history.len() - 2]);
    let n = setup.fleet.n_benign;
    let m = setup.effective_adversaries();
    let dim = current.len();

    let mut updates: Vec<LocalUpdate> = Vec::with_capacity(n + m);
    for bs in 0..n as u64 {
        let data = &setup.train_sets[bs as usize];
        let trained = local_train(setup.arch, current, data, &setup.train_cfg(round, bs))
            .map_err(|e| e.in_round(round))?;
        updates.push(LocalUpdate::new(bs, round, trained, Truth::Benign));
    }

    let mut eta_final = None;
    if m > 0 {
        let adv_ids: Vec<u64> = (n as u64..(n + m) as u64).collect();
        match setup.attack {
            AttackSpec::None => unreachable!("m is zero when the attack is none"),
            AttackSpec::Fti(cfg) => {
                let craft = fti_craft(current, cfg).map_err(|e| e.in_round(round))?;
                eta_final = Some(craft.eta_final);
                for &bs in &adv_ids {
                    updates.push(LocalUpdate::new(
                        bs,
                        round,
                        craft.fake_params.clone(),
                        Truth::Fake,
                    ));
                }
            }
            AttackSpec::Trim(cfg) => {
                let known: Vec<ParamVector> = adv_ids
                    .iter()
                    .map(|&bs| {
                        local_train(
                            setup.arch,
                            current,
                            &setup.train_sets[bs as usize],
                            &setup.train_cfg(round, bs),
                        )
                    })
                    .collect::<Result<_>>()
                    .map_err(|e| e.in_round(round))?;
                let seed = derive_seed(setup.round_seed, &[round as u64, DOMAIN_TRIM]);
                let crafted =
                    trim_attack(&known, current, cfg, m, seed).map_err(|e| e.in_round(round))?;
                for (&bs, params) in adv_ids.iter().zip(crafted) {
                    updates.push(LocalUpdate::new(bs, round, params, Truth::Compromised));
                }
            }
            AttackSpec::History(cfg) => {
                let view = AttackerView::new(history[0].clone(), history.to_vec());
                let fake = history_attack(&view, cfg).map_err(|e| e.in_round(round))?;
                for &bs in &adv_ids {
                    updates.push(LocalUpdate::new(bs, round, fake.clone(), Truth::Fake));
                }
            }
            AttackSpec::Random(cfg) => {
                for &bs in &adv_ids {
                    let seed = derive_seed(setup.round_seed, &[round as u64, bs, DOMAIN_RANDOM]);
                    let fake = random_attack(dim, cfg, seed).map_err(|e| e.in_round(round))?;
                    updates.push(LocalUpdate::new(bs, round, fake, Truth::Fake));
                }
            }
            AttackSpec::Mpaf(cfg) => {
                let view = AttackerView::new(history[0].clone(), history.to_vec());
                let fake = mpaf_attack(&view, cfg).map_err(|e| e.in_round(round))?;
                for &bs in &adv_ids {
                    updates.push(LocalUpdate::new(bs, round, fake.clone(), Truth::Fake));
                }
            }
            AttackSpec::Zheng(cfg) => {
                let compromised: Vec<(&WindowedDataset, TrainConfig)> = adv_ids
                    .iter()
                    .map(|&bs| (&setup.train_sets[bs as usize], setup.train_cfg(round, bs)))
                    .collect();
                let crafted = zheng_attack(setup.arch, &compromised, current, prev, cfg)
                    .map_err(|e| e.in_round(round))?;
                for (&bs, params) in adv_ids.iter().zip(crafted) {
                    updates.push(LocalUpdate::new(bs, round, params, Truth::Compromised));
                }
            }
        }
    }

    shuffle(
        &mut updates,
        derive_seed(setup.round_seed, &[round as u64, DOMAIN_SHUFFLE]),
    );

    let server_update = match setup.rule {
        Rule::FlTrust => {
            let data = setup.server_set.ok_or_else(|| {
                Error::Config("fltrust requires server-held clean data".into())
            })?;
            let cfg = TrainConfig {
                seed: derive_seed(setup.round_seed, &[round as u64, DOMAIN_SERVER]),
                ..*setup.train
            };
            Some(
                local_train(setup.arch, current, data, &cfg)
                    .map_err(|e| e.in_round(round))?,
            )
        }
        _ => None,
    };

    let submissions: Vec<Submission> = updates.iter().map(|u| u.submission()).collect();
    let ctx = AggContext {
        current_global: current,
        prev_global: prev,
        server_update: server_update.as_ref(),
    };
    let outcome =
        aggregate(setup.rule, &submissions, &ctx, agg_state).map_err(|e| e.in_round(round))?;

    let mut mae_sum = 0.0;
    let mut mse_sum = 0.0;
    for data in &setup.test_sets[..n] {
        let (mae, mse) = evaluate(setup.arch, &outcome.global, data)?;
        mae_sum += mae;
        mse_sum += mse;
    }
    let mae_raw = mae_sum / n as f64;
    let mse_raw = mse_sum / n as f64;

    let flags_summary: Vec<(u64, usize)> = updates
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let count = outcome.flags.iter().filter(|row| row[i]).count();
            (u.bs_id, count)
        })
        .collect();
    let adversarial: Vec<bool> = updates.iter().map(|u| u.is_adversarial()).collect();

    Ok(RoundResult {
        global: outcome.global,
        record: RoundRecord {
            round,
            mae_raw,
            mse_raw,
            mae_capped: cap_metric(mae_raw),
            mse_capped: cap_metric(mse_raw),
            broken: false,
            eta_final,
            flags_summary,
        },
        flags: outcome.flags,
        adversarial,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub detection: Option<DetectionReport>,
    pub initial_global: ParamVector,
    pub final_global: ParamVector,
    pub broken: bool,
}

impl ExperimentResult {
    pub fn final_record(&self) -> Option<&RoundRecord> {
        self.records.last()
    }
}

/// Run a full experiment from a validated config: build the data once, seed
/// the initial model, then iterate rounds. Deterministic for a fixed config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let fleet = cfg.fleet.resolve();
    let attack = &cfg.attack;
    let rule = cfg.aggregator.resolve(&fleet);

    // compromised BSs hold data; fake BSs do not. One extra series feeds the
    // FLTrust server so benign data is identical across aggregation rules.
    let with_data = fleet.n_benign
        + if attack.uses_compromised() {
            fleet.n_adversarial
        } else {
            0
        };
    let series = cfg.data.load(with_data + 1, cfg.seeds.data)?;
    let mut train_sets = Vec::with_capacity(with_data);
    let mut test_sets = Vec::with_capacity(with_data);
    for s in &series[..with_data] {
        let (train, test) = build_windows(s, &cfg.window, cfg.split)?;
        train_sets.push(train);
        test_sets.push(test);
    }
    let (server_train, _) = build_windows(&series[with_data], &cfg.window, cfg.split)?;

    let arch = ModelArch {
        input_dim: cfg.window.input_dim(),
        hidden_dims: cfg.model.hidden_dims.clone(),
        activation: cfg.model.activation,
    };
    arch.validate()?;
    let train = cfg.train.to_train_config();

    let initial = init_model(&arch, cfg.seeds.init);
    let setup = SimSetup {
        arch: &arch,
        train: &train,
        fleet: &fleet,
        attack,
        rule: &rule,
        train_sets: &train_sets,
        test_sets: &test_sets,
        server_set: Some(&server_train),
        round_seed: cfg.seeds.round,
    };

    let mut history = vec![initial.clone()];
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut agg_state = AggState::default();
    let mut detector = DetectionAccumulator::default();
    let mut streak = 0usize;
    let mut broken = false;

    for round in 0..cfg.rounds {
        let mut result = run_round(&setup, round, &history, &mut agg_state)?;
        if result.record.mae_capped >= METRIC_CAP {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= BROKEN_STREAK {
            result.record.broken = true;
            broken = true;
        }
        if setup.effective_adversaries() > 0 {
            detector.observe(&result.flags, &result.adversarial)?;
        }
        records.push(result.record);
        history.push(result.global);
    }

    Ok(ExperimentResult {
        records,
        detection: (!detector.is_empty()).then(|| detector.report()),
        initial_global: initial,
        final_global: history.last().cloned().unwrap(),
        broken,
    })
}
