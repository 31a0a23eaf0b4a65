//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! C1-C3 and C9-C10 are exact property checks. C4-C8 are directional
//! reproductions of the reference evaluation on synthetic data (100 BSs,
//! 20% adversarial, 50 rounds, default architecture); experiment results
//! are cached so criteria sharing a cell do not recompute it.

use fedwtp_core::aggregate::{aggregate, AggContext, AggState, Rule, Submission};
use fedwtp_core::attacks::{fti_craft, BaselineAttackConfig, FtiConfig};
use fedwtp_core::glid::{agg_glid, GlidConfig, GlidEstimator};
use fedwtp_core::metrics::{rounds_csv, METRIC_CAP};
use fedwtp_core::model::{loss_gradient, predict, quadratic_loss, ModelArch};
use fedwtp_core::{
    run_experiment, AggregatorSpec, AttackSpec, DataSpec, ExperimentConfig, ExperimentResult,
    ParamVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

fn report(name: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("{name}: PASS");
    } else {
        println!("{name}: FAIL");
        for f in &failures {
            println!("  {f}");
        }
        panic!("{name} failed:\n{}", failures.join("\n"));
    }
}

fn check(failures: &mut Vec<String>, ok: bool, detail: String) {
    if !ok {
        failures.push(detail);
    }
}

// ---------------------------------------------------------------------------
// Shared experiment cells

fn attack_spec(name: &str) -> AttackSpec {
    match name {
        "none" => AttackSpec::None,
        "fti" => AttackSpec::Fti(FtiConfig::default()),
        "trim" => AttackSpec::Trim(BaselineAttackConfig::default()),
        "history" => AttackSpec::History(BaselineAttackConfig::default()),
        "random" => AttackSpec::Random(BaselineAttackConfig::default()),
        "mpaf" => AttackSpec::Mpaf(BaselineAttackConfig::default()),
        "zheng" => AttackSpec::Zheng(BaselineAttackConfig::default()),
        other => panic!("unknown attack {other}"),
    }
}

fn cell_config(
    rule: &str,
    estimator: Option<GlidEstimator>,
    attack: &str,
    pct: f64,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.fleet.adversarial_pct = pct;
    cfg.aggregator = AggregatorSpec::named(rule).expect("known rule");
    if let Some(est) = estimator {
        cfg.aggregator.glid.estimator = est;
    }
    cfg.attack = attack_spec(attack);
    cfg
}

fn cell(
    rule: &str,
    estimator: Option<GlidEstimator>,
    attack: &str,
    pct: f64,
) -> Arc<ExperimentResult> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<ExperimentResult>>>> = OnceLock::new();
    let key = format!("{rule}|{estimator:?}|{attack}|{pct}");
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Arc::clone(hit);
    }
    let cfg = cell_config(rule, estimator, attack, pct);
    let result = Arc::new(run_experiment(&cfg).expect("experiment cell"));
    cache
        .lock()
        .unwrap()
        .insert(key, Arc::clone(&result));
    result
}

fn final_mae(result: &ExperimentResult) -> f64 {
    result.records.last().expect("rounds").mae_capped
}

// ---------------------------------------------------------------------------
// C1: mean / median / trimmed-mean vs brute-force per-dimension oracles

fn pv(values: Vec<f64>) -> ParamVector {
    ParamVector::new(values).unwrap()
}

fn subs(rows: &[Vec<f64>]) -> Vec<Submission> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| Submission {
            bs_id: i as u64,
            params: pv(r.clone()),
        })
        .collect()
}

#[test]
fn c1_oracle_equivalence() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ctx_global = ParamVector::zeros(1);

    for instance in 0..1000 {
        let n = rng.gen_range(2..=64usize);
        let d = rng.gen_range(1..=32usize);
        let beta = rng.gen_range(0.0..0.5f64);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-100.0..100.0)).collect())
            .collect();
        let s = subs(&rows);
        let ctx = AggContext {
            current_global: &ctx_global,
            prev_global: None,
            server_update: None,
        };

        // per-dimension columns sorted ascending; summation in that order is
        // the normal form both sides use, so equality is exact
        let mut columns: Vec<Vec<f64>> = (0..d)
            .map(|dim| rows.iter().map(|r| r[dim]).collect())
            .collect();
        for c in &mut columns {
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }

        let g = (beta * n as f64).floor() as usize;
        let checks: [(Rule, Box<dyn Fn(&[f64]) -> f64>); 3] = [
            (
                Rule::Mean,
                Box::new(move |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64),
            ),
            (
                Rule::Median,
                Box::new(|c: &[f64]| {
                    let mid = c.len() / 2;
                    if c.len() % 2 == 0 {
                        0.5 * (c[mid - 1] + c[mid])
                    } else {
                        c[mid]
                    }
                }),
            ),
            (
                Rule::TrimmedMean {
                    trim_fraction: beta,
                },
                Box::new(move |c: &[f64]| {
                    let kept = &c[g..c.len() - g];
                    kept.iter().sum::<f64>() / kept.len() as f64
                }),
            ),
        ];

        for (rule, oracle) in &checks {
            let mut state = AggState::default();
            let out = aggregate(rule, &s, &ctx, &mut state).unwrap();
            for dim in 0..d {
                let want = oracle(&columns[dim]);
                let got = out.global.get(dim);
                if got != want {
                    failures.push(format!(
                        "instance {instance} rule {} dim {dim}: {got} != {want}",
                        rule.label()
                    ));
                }
            }
        }
        if failures.len() > 5 {
            break;
        }
    }

    let elapsed = started.elapsed();
    check(
        &mut failures,
        elapsed.as_secs_f64() < 10.0,
        format!("runtime {elapsed:?} exceeds 10 s"),
    );
    report("C1 oracle equivalence", failures);
}

// ---------------------------------------------------------------------------
// C2: GLID degenerate suite

#[test]
fn c2_glid_degenerate_suite() {
    let mut failures = Vec::new();

    // all-identical updates: identity output, zero flags
    let u = pv(vec![0.4, -1.25, 7.0]);
    let out = agg_glid(&[u.clone(), u.clone(), u.clone(), u.clone()], &GlidConfig::default())
        .unwrap();
    check(
        &mut failures,
        out.global == u,
        format!("identical updates changed: {:?}", out.global),
    );
    check(
        &mut failures,
        out.flags.iter().flatten().all(|&f| !f),
        "identical updates raised flags".into(),
    );

    // fixed pair (0, 100): equals the deviation-inverse weighted mean
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let rows: Vec<Vec<f64>> = (0..9)
        .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let updates: Vec<ParamVector> = rows.iter().map(|r| pv(r.clone())).collect();
    let cfg = GlidConfig {
        estimator: GlidEstimator::default(),
        fixed_pair: Some((0.0, 100.0)),
    };
    let out = agg_glid(&updates, &cfg).unwrap();
    for dim in 0..4 {
        let values: Vec<f64> = rows.iter().map(|r| r[dim]).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / values.len() as f64)
            .sqrt();
        let mut num = 0.0;
        let mut den = 0.0;
        for &v in &values {
            let a = std / (v - mean).abs().max(1e-12);
            num += a * v;
            den += a;
        }
        let want = num / den;
        let got = out.global.get(dim);
        check(
            &mut failures,
            (got - want).abs() <= 1e-9 * want.abs().max(1.0),
            format!("fixed pair dim {dim}: {got} vs weighted mean {want}"),
        );
    }

    // 1000 random instances: per-dimension output within survivor range
    for instance in 0..1000 {
        let n = rng.gen_range(2..=20usize);
        let d = rng.gen_range(1..=8usize);
        let updates: Vec<ParamVector> = (0..n)
            .map(|_| pv((0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()))
            .collect();
        let out = agg_glid(&updates, &GlidConfig::default()).unwrap();
        for dim in 0..d {
            let survivors: Vec<f64> = updates
                .iter()
                .enumerate()
                .filter(|(i, _)| !out.flags[dim][*i])
                .map(|(_, u)| u.get(dim))
                .collect();
            let pool = if survivors.is_empty() {
                updates.iter().map(|u| u.get(dim)).collect()
            } else {
                survivors
            };
            let lo = pool.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = pool.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let got = out.global.get(dim);
            if !(got >= lo - 1e-9 && got <= hi + 1e-9) {
                failures.push(format!(
                    "instance {instance} dim {dim}: {got} outside [{lo}, {hi}]"
                ));
            }
        }
        if failures.len() > 5 {
            break;
        }
    }

    report("C2 GLID degenerate suite", failures);
}

// ---------------------------------------------------------------------------
// C3: FTI mechanics

#[test]
fn c3_fti_mechanics() {
    let mut failures = Vec::new();
    let global = pv(vec![1.0, -2.0, 0.5]);
    let base = vec![0.25, 0.5, -1.0];

    // halving search trace for eta0 = 10, R = 5: eta after each adjustment
    let craft = fti_craft(
        &global,
        &FtiConfig {
            base_model: Some(base.clone()),
            eta0: 10.0,
            refinement_iters: 5,
        },
    )
    .unwrap();
    let want_etas = [15.0, 17.5, 18.75, 19.375, 19.6875];
    let got_etas: Vec<f64> = craft.trace.iter().map(|&(eta, _)| eta).collect();
    check(
        &mut failures,
        got_etas == want_etas,
        format!("trace etas {got_etas:?} != {want_etas:?}"),
    );

    // step after r iterations is eta0 * 2^-r exactly: consecutive eta moves
    // are half the current step
    let mut prev = 10.0;
    for (r, &eta) in got_etas.iter().enumerate() {
        let want_move = 10.0 * 0.5f64.powi(r as i32 + 1);
        if (eta - prev).abs() != want_move {
            failures.push(format!(
                "iteration {}: eta moved {} expected {want_move}",
                r + 1,
                (eta - prev).abs()
            ));
        }
        prev = eta;
    }
    check(
        &mut failures,
        (craft.eta_final - 10.0).abs() < 10.0,
        format!("eta_final {} drifted by >= eta0", craft.eta_final),
    );

    // returned model is the final candidate: eta from the start of the last
    // iteration (19.375) blended per the update rule
    let eta = 19.375;
    for i in 0..3 {
        let want = eta * base[i] + (1.0 - eta) * global.get(i);
        let got = craft.fake_params.get(i);
        if got != want {
            failures.push(format!("fake dim {i}: {got} != {want}"));
        }
    }

    // eta = 1 with no refinement returns the base model
    let craft = fti_craft(
        &global,
        &FtiConfig {
            base_model: Some(base.clone()),
            eta0: 1.0,
            refinement_iters: 0,
        },
    )
    .unwrap();
    check(
        &mut failures,
        craft.fake_params == pv(base.clone()),
        "eta=1, R=0 did not return the base model".into(),
    );

    // eta = 0 returns the current global unchanged
    let craft = fti_craft(
        &global,
        &FtiConfig {
            base_model: Some(base),
            eta0: 0.0,
            refinement_iters: 0,
        },
    )
    .unwrap();
    check(
        &mut failures,
        craft.fake_params == global,
        "eta=0 did not return the global model".into(),
    );

    report("C3 FTI mechanics", failures);
}

// ---------------------------------------------------------------------------
// C4: attack efficacy, directional

#[test]
fn c4_attack_efficacy() {
    let mut failures = Vec::new();

    let med_no = final_mae(&cell("median", None, "none", 20.0));
    let med_fti = final_mae(&cell("median", None, "fti", 20.0));
    check(
        &mut failures,
        med_fti >= 10.0 * med_no,
        format!("median under FTI: {med_fti:.4} < 10 x no-attack {med_no:.4}"),
    );

    for attack in ["random", "mpaf", "history"] {
        let mae = final_mae(&cell("mean", None, attack, 20.0));
        check(
            &mut failures,
            mae >= METRIC_CAP,
            format!("mean under {attack}: {mae:.4} below the cap"),
        );
    }

    report("C4 attack efficacy", failures);
}

// ---------------------------------------------------------------------------
// C5: defense efficacy, directional

#[test]
fn c5_defense_efficacy() {
    let mut failures = Vec::new();

    let glid_no = final_mae(&cell("glid", None, "none", 20.0));
    for attack in ["trim", "history", "random", "mpaf"] {
        let mae = final_mae(&cell("glid", None, attack, 20.0));
        check(
            &mut failures,
            (mae - glid_no).abs() <= 0.10 * glid_no,
            format!(
                "glid under {attack}: {mae:.4} not within 10% of no-attack {glid_no:.4}"
            ),
        );
    }

    let glid_fti = final_mae(&cell("glid", None, "fti", 20.0));
    let med_fti = final_mae(&cell("median", None, "fti", 20.0));
    check(
        &mut failures,
        glid_fti < med_fti,
        format!("glid under FTI {glid_fti:.4} not below median {med_fti:.4}"),
    );

    report("C5 defense efficacy", failures);
}

// ---------------------------------------------------------------------------
// C6: fake-percentage trend

#[test]
fn c6_fake_percentage_trend() {
    let mut failures = Vec::new();
    let baseline = final_mae(&cell("median", None, "none", 20.0));

    for pct in [5.0, 10.0] {
        let mae = final_mae(&cell("median", None, "fti", pct));
        check(
            &mut failures,
            (mae - baseline).abs() <= 0.25 * baseline,
            format!("{pct}% fakes: {mae:.4} not within 25% of {baseline:.4}"),
        );
    }
    for pct in [30.0, 40.0] {
        let mae = final_mae(&cell("median", None, "fti", pct));
        check(
            &mut failures,
            mae >= METRIC_CAP,
            format!("{pct}% fakes: {mae:.4} below the cap"),
        );
    }

    report("C6 fake-percentage trend", failures);
}

// ---------------------------------------------------------------------------
// C7: detection rates

#[test]
fn c7_detection_rates() {
    let mut failures = Vec::new();

    let rates = |attack: &str| -> (f64, f64) {
        let result = cell("glid", None, attack, 20.0);
        let det = result.detection.as_ref().expect("detection report");
        (det.fpr.unwrap_or(0.0), det.fnr.unwrap_or(1.0))
    };

    let (_, fnr_random) = rates("random");
    for attack in ["random", "trim"] {
        let (fpr, fnr) = rates(attack);
        check(
            &mut failures,
            fpr <= 0.05,
            format!("{attack}: FPR {fpr:.4} > 0.05"),
        );
        check(
            &mut failures,
            fnr <= 0.05,
            format!("{attack}: FNR {fnr:.4} > 0.05"),
        );
    }

    let (_, fnr_fti) = rates("fti");
    check(
        &mut failures,
        fnr_fti >= fnr_random + 0.10,
        format!("FTI FNR {fnr_fti:.4} does not exceed Random FNR {fnr_random:.4} by 0.10"),
    );

    report("C7 detection rates", failures);
}

// ---------------------------------------------------------------------------
// C8: estimator comparison

#[test]
fn c8_estimator_comparison() {
    let mut failures = Vec::new();
    let attacks = ["trim", "history", "random", "mpaf", "zheng", "fti"];
    let backends: [(&str, GlidEstimator); 4] = [
        ("sd", GlidEstimator::Sd { k: 3.0 }),
        ("iqr", GlidEstimator::Iqr { k_iqr: 1.5 }),
        ("z_score", GlidEstimator::ZScore { k_z: 2.0 }),
        (
            "one_class_svm",
            GlidEstimator::OneClassSvm {
                nu: 0.2,
                bandwidth: None,
            },
        ),
    ];

    let worst = |est: &GlidEstimator| -> f64 {
        attacks
            .iter()
            .map(|attack| final_mae(&cell("glid", Some(est.clone()), attack, 20.0)))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let sd_worst = worst(&backends[0].1);
    for (name, est) in &backends[1..] {
        let other = worst(est);
        check(
            &mut failures,
            sd_worst <= other,
            format!("SD worst {sd_worst:.4} exceeds {name} worst {other:.4}"),
        );
    }

    report("C8 estimator comparison", failures);
}

// ---------------------------------------------------------------------------
// C9: gradient correctness

#[test]
fn c9_gradient_correctness() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(909);

    for pair in 0..100 {
        let input_dim = rng.gen_range(1..=6usize);
        let n_hidden = rng.gen_range(1..=2usize);
        let hidden: Vec<usize> = (0..n_hidden).map(|_| rng.gen_range(1..=6)).collect();
        let arch = ModelArch {
            input_dim,
            hidden_dims: hidden,
            activation: fedwtp_core::Activation::Tanh,
        };
        let params = pv((0..arch.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect());
        let input: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = rng.gen_range(-1.0..1.0);

        let batch: Vec<(&[f64], f64)> = vec![(input.as_slice(), target)];
        let grad = loss_gradient(&arch, &params, &batch).unwrap();

        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = params.values().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let f = |p: Vec<f64>| {
                let pred = predict(&arch, &pv(p), &input).unwrap();
                quadratic_loss(pred, target)
            };
            let fd = (f(plus) - f(minus)) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1.0);
            if (grad[i] - fd).abs() > 1e-4 * scale {
                failures.push(format!(
                    "pair {pair} param {i}: backprop {} vs fd {fd}",
                    grad[i]
                ));
            }
        }
        if failures.len() > 5 {
            break;
        }
    }

    let elapsed = started.elapsed();
    check(
        &mut failures,
        elapsed.as_secs_f64() < 5.0,
        format!("runtime {elapsed:?} exceeds 5 s"),
    );
    report("C9 gradient correctness", failures);
}

// ---------------------------------------------------------------------------
// C10: determinism

#[test]
fn c10_determinism() {
    let mut failures = Vec::new();

    let mut cfg = ExperimentConfig::default();
    cfg.rounds = 3;
    cfg.data = DataSpec::Synthetic {
        length: 60,
        period: 12,
        noise_std: 1.0,
    };
    cfg.window.r = 3;
    cfg.window.s = 1;
    cfg.window.omega = 12;
    cfg.fleet.fleet_size = 6;
    cfg.fleet.adversarial_pct = 34.0;
    cfg.attack = attack_spec("mpaf");
    cfg.aggregator = AggregatorSpec::named("median").unwrap();

    let first = rounds_csv(&run_experiment(&cfg).unwrap().records);

    // an unrelated run in between must not influence the repeat
    let mut other = cfg.clone();
    other.aggregator = AggregatorSpec::named("glid").unwrap();
    run_experiment(&other).unwrap();

    let second = rounds_csv(&run_experiment(&cfg).unwrap().records);
    check(
        &mut failures,
        first == second,
        "rounds.csv differs between identical executions".into(),
    );
    check(
        &mut failures,
        !first.is_empty(),
        "rounds.csv is empty".into(),
    );

    report("C10 determinism", failures);
}
