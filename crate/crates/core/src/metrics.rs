//! Reported metrics with the capping convention, detection-quality rates,
//! and persistent run records.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const METRIC_CAP: f64 = 100.0;

/// Reporting cap: raw values are stored alongside so nothing is lost.
pub fn cap_metric(x: f64) -> f64 {
    x.min(METRIC_CAP)
}

/// One round of an experiment as persisted to rounds.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mae_raw: f64,
    pub mse_raw: f64,
    pub mae_capped: f64,
    pub mse_capped: f64,
    /// True once test MAE has sat at the cap long enough to call the run
    /// broken; only ever true on capped rounds.
    pub broken: bool,
    /// Final blend weight of the FTI search; absent for other attacks.
    pub eta_final: Option<f64>,
    /// Flagged-dimension count per presented BS, keyed by bs_id.
    pub flags_summary: Vec<(u64, usize)>,
}

/// Per-dimension confusion counts; positives are adversarial senders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DimCounts {
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
    pub tn: u64,
}

/// Detection quality averaged across dimensions. Rates with no defined
/// dimension (zero denominator everywhere) are absent, not zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub per_dimension: Vec<DimCounts>,
}

impl DetectionReport {
    fn from_counts(per_dimension: Vec<DimCounts>) -> Self {
        let mut fpr_sum = 0.0;
        let mut fpr_n = 0usize;
        let mut fnr_sum = 0.0;
        let mut fnr_n = 0usize;
        for c in &per_dimension {
            if c.fp + c.tn > 0 {
                fpr_sum += c.fp as f64 / (c.fp + c.tn) as f64;
                fpr_n += 1;
            }
            if c.fn_ + c.tp > 0 {
                fnr_sum += c.fn_ as f64 / (c.fn_ + c.tp) as f64;
                fnr_n += 1;
            }
        }
        DetectionReport {
            fpr: (fpr_n > 0).then(|| fpr_sum / fpr_n as f64),
            fnr: (fnr_n > 0).then(|| fnr_sum / fnr_n as f64),
            per_dimension,
        }
    }
}

/// Confusion rates for one flag matrix against ground truth.
pub fn detection_metrics(flags: &[Vec<bool>], adversarial: &[bool]) -> Result<DetectionReport> {
    let mut acc = DetectionAccumulator::default();
    acc.observe(flags, adversarial)?;
    Ok(acc.report())
}

/// Sums confusion counts per dimension across rounds.
#[derive(Debug, Clone, Default)]
pub struct DetectionAccumulator {
    per_dimension: Vec<DimCounts>,
}

impl DetectionAccumulator {
    pub fn observe(&mut self, flags: &[Vec<bool>], adversarial: &[bool]) -> Result<()> {
        if self.per_dimension.is_empty() {
            self.per_dimension = vec![DimCounts::default(); flags.len()];
        }
        if self.per_dimension.len() != flags.len() {
            return Err(Error::DimensionMismatch {
                left: self.per_dimension.len(),
                right: flags.len(),
            });
        }
        for (d, row) in flags.iter().enumerate() {
            if row.len() != adversarial.len() {
                return Err(Error::DimensionMismatch {
                    left: row.len(),
                    right: adversarial.len(),
                });
            }
            let c = &mut self.per_dimension[d];
            for (&flagged, &is_adv) in row.iter().zip(adversarial) {
                match (is_adv, flagged) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fn_ += 1,
                    (false, true) => c.fp += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.per_dimension.is_empty()
    }

    pub fn report(&self) -> DetectionReport {
        DetectionReport::from_counts(self.per_dimension.clone())
    }
}

/// Held while writing into an out_dir; a second writer fails to create the
/// lock file and errors out before touching anything.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(DirLock { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(contents.as_bytes()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from("round,mae_raw,mse_raw,mae_capped,mse_capped,broken,eta_final\n");
    for r in records {
        let eta = r.eta_final.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.round, r.mae_raw, r.mse_raw, r.mae_capped, r.mse_capped, r.broken, eta
        ));
    }
    out
}

pub fn detection_csv(report: Option<&DetectionReport>) -> String {
    let mut out = String::from("dimension,fp,fn,tp,tn\n");
    if let Some(rep) = report {
        let mut total = DimCounts::default();
        for (d, c) in rep.per_dimension.iter().enumerate() {
            out.push_str(&format!("{},{},{},{},{}\n", d, c.fp, c.fn_, c.tp, c.tn));
            total.fp += c.fp;
            total.fn_ += c.fn_;
            total.tp += c.tp;
            total.tn += c.tn;
        }
        out.push_str(&format!(
            "all,{},{},{},{}\n",
            total.fp, total.fn_, total.tp, total.tn
        ));
    }
    out
}

/// Per-round flag export for detection audits.
pub fn flags_csv(rows: &[(usize, usize, u64, bool)]) -> String {
    let mut out = String::from("round,dimension,bs_id,flagged\n");
    for (round, dim, bs_id, flagged) in rows {
        out.push_str(&format!("{round},{dim},{bs_id},{flagged}\n"));
    }
    out
}

/// Write rounds.csv, detection.csv, config.json, and manifest.json into
/// `out_dir`; returns the manifest path. `config_json` must be the fully
/// resolved config so the run can be reproduced from it alone.
pub fn persist_run(
    records: &[RoundRecord],
    detection: Option<&DetectionReport>,
    config_json: &str,
    out_dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let _lock = DirLock::acquire(out_dir)?;

    write_file(&out_dir.join("rounds.csv"), &rounds_csv(records))?;
    write_file(&out_dir.join("detection.csv"), &detection_csv(detection))?;
    write_file(&out_dir.join("config.json"), config_json)?;

    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    let config_hash = format!("{:x}", hasher.finalize());
    let created_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "config_hash": config_hash,
        "files": ["rounds.csv", "detection.csv", "config.json"],
        "created_at": created_at,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "units": "normalized traffic (min-max per BS, fitted on train split)",
    });
    let manifest_path = out_dir.join("manifest.json");
    write_file(
        &manifest_path,
        &format!("{:#}\n", manifest),
    )?;
    Ok(manifest_path)
}

/// Fixed attack column order matching the paper's tables.
pub const ATTACK_COLUMNS: [&str; 7] =
    ["none", "trim", "history", "random", "mpaf", "zheng", "fti"];

const COLUMN_HEADERS: [&str; 7] = ["NO", "Trim", "History", "Random", "MPAF", "Zheng", "FTI"];

/// Final capped metrics of one matrix cell, or a marker that the cell's run
/// failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellOutcome {
    Metrics { mae_capped: f64, mse_capped: f64 },
    Failed,
}

fn fmt_metric(x: f64) -> String {
    if x >= METRIC_CAP {
        "100.0".to_string()
    } else {
        format!("{x:.3}")
    }
}

/// Render the attack x aggregator matrix as aligned text and as CSV.
/// Rows follow `rule_order`; columns are fixed regardless of run order.
pub fn summary_table(
    rule_order: &[String],
    cells: &BTreeMap<(String, String), CellOutcome>,
) -> (String, String) {
    let metric_cell = |rule: &str, attack: &str, want_mae: bool| -> String {
        match cells.get(&(rule.to_string(), attack.to_string())) {
            Some(CellOutcome::Metrics {
                mae_capped,
                mse_capped,
            }) => fmt_metric(if want_mae { *mae_capped } else { *mse_capped }),
            Some(CellOutcome::Failed) => "ERR".to_string(),
            None => "-".to_string(),
        }
    };

    let mut csv = String::from("rule,metric,no,trim,history,random,mpaf,zheng,fti\n");
    let mut text = String::new();
    text.push_str(&format!("{:<14}{:<6}", "rule", "metric"));
    for h in COLUMN_HEADERS {
        text.push_str(&format!("{h:>10}"));
    }
    text.push('\n');
    for rule in rule_order {
        for (metric, want_mae) in [("MAE", true), ("MSE", false)] {
            text.push_str(&format!("{rule:<14}{metric:<6}"));
            csv.push_str(&format!("{rule},{}", metric.to_lowercase()));
            for attack in ATTACK_COLUMNS {
                let cell = metric_cell(rule, attack, want_mae);
                text.push_str(&format!("{cell:>10}"));
                csv.push(',');
                csv.push_str(&cell);
            }
            text.push('\n');
            csv.push('\n');
        }
    }
    (text, csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn cap_passes_small_values() {
        assert_eq!(cap_metric(0.211), 0.211);
        assert_eq!(cap_metric(72.383), 72.383);
        assert_eq!(cap_metric(4.7e6), 100.0);
    }

    #[test]
    fn cap_idempotent_monotone() {
        for x in [0.0, 1.0, 99.9, 100.0, 1e9] {
            assert_eq!(cap_metric(cap_metric(x)), cap_metric(x));
        }
        assert!(cap_metric(5.0) <= cap_metric(6.0));
        assert!(cap_metric(99.0) <= cap_metric(101.0));
    }

    #[test]
    fn detection_perfect_flags() {
        // 3 BSs, last adversarial, 2 dims, flags exactly right
        let flags = vec![vec![false, false, true], vec![false, false, true]];
        let rep = detection_metrics(&flags, &[false, false, true]).unwrap();
        assert_eq!(rep.fpr, Some(0.0));
        assert_eq!(rep.fnr, Some(0.0));
    }

    #[test]
    fn detection_all_false_flags() {
        let flags = vec![vec![false, false, false]];
        let rep = detection_metrics(&flags, &[false, false, true]).unwrap();
        assert_eq!(rep.fpr, Some(0.0));
        assert_eq!(rep.fnr, Some(1.0));
    }

    #[test]
    fn detection_confusion_arithmetic() {
        // 10 BSs (8 benign, 2 fake), D=1, one fake and one benign flagged
        let mut adversarial = vec![false; 10];
        adversarial[8] = true;
        adversarial[9] = true;
        let mut row = vec![false; 10];
        row[9] = true;
        row[0] = true;
        let rep = detection_metrics(&[row], &adversarial).unwrap();
        assert_eq!(rep.fpr, Some(1.0 / 8.0));
        assert_eq!(rep.fnr, Some(0.5));
    }

    #[test]
    fn detection_all_benign_fnr_absent() {
        let flags = vec![vec![false, true]];
        let rep = detection_metrics(&flags, &[false, false]).unwrap();
        assert_eq!(rep.fnr, None);
        assert_eq!(rep.fpr, Some(0.5));
    }

    #[test]
    fn detection_accumulates_across_rounds() {
        let mut acc = DetectionAccumulator::default();
        let adv = [false, true];
        acc.observe(&[vec![false, true]], &adv).unwrap();
        acc.observe(&[vec![false, false]], &adv).unwrap();
        let rep = acc.report();
        assert_eq!(rep.per_dimension[0].tp, 1);
        assert_eq!(rep.per_dimension[0].fn_, 1);
        assert_eq!(rep.fnr, Some(0.5));
    }

    fn record(round: usize, mae: f64) -> RoundRecord {
        RoundRecord {
            round,
            mae_raw: mae,
            mse_raw: mae * mae,
            mae_capped: cap_metric(mae),
            mse_capped: cap_metric(mae * mae),
            broken: false,
            eta_final: None,
            flags_summary: vec![],
        }
    }

    #[test]
    fn persist_writes_all_files() {
        let dir = tempdir().unwrap();
        let records = [record(0, 0.5), record(1, 0.4)];
        let manifest = persist_run(&records, None, "{\"a\":1}", dir.path()).unwrap();
        assert!(manifest.ends_with("manifest.json"));
        for f in ["rounds.csv", "detection.csv", "config.json", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        let rounds = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        assert!(rounds.starts_with(
            "round,mae_raw,mse_raw,mae_capped,mse_capped,broken,eta_final\n"
        ));
        assert_eq!(rounds.lines().count(), 3);
        // lock released after the write
        assert!(!dir.path().join(".lock").exists());
    }

    #[test]
    fn persist_empty_records_headers_only() {
        let dir = tempdir().unwrap();
        persist_run(&[], None, "{}", dir.path()).unwrap();
        let rounds = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        assert_eq!(rounds.lines().count(), 1);
    }

    #[test]
    fn persist_respects_existing_lock() {
        let dir = tempdir().unwrap();
        std::fs::write(dir.path().join(".lock"), "").unwrap();
        assert!(persist_run(&[], None, "{}", dir.path()).is_err());
    }

    #[test]
    fn manifest_hash_tracks_config_changes() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let dir_c = tempdir().unwrap();
        persist_run(&[], None, "{\"seed\":1}", dir_a.path()).unwrap();
        persist_run(&[], None, "{\"seed\":2}", dir_b.path()).unwrap();
        persist_run(&[], None, "{\"seed\":1}", dir_c.path()).unwrap();
        let hash = |d: &Path| {
            let m = std::fs::read_to_string(d.join("manifest.json")).unwrap();
            let v: serde_json::Value = serde_json::from_str(&m).unwrap();
            v["config_hash"].as_str().unwrap().to_string()
        };
        assert_ne!(hash(dir_a.path()), hash(dir_b.path()));
        assert_eq!(hash(dir_a.path()), hash(dir_c.path()));
    }

    #[test]
    fn summary_single_cell() {
        let mut cells = BTreeMap::new();
        cells.insert(
            ("glid".to_string(), "none".to_string()),
            CellOutcome::Metrics {
                mae_capped: 0.211,
                mse_capped: 0.086,
            },
        );
        let (text, csv) = summary_table(&["glid".to_string()], &cells);
        assert!(text.contains("0.211"));
        assert!(text.contains("0.086"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn summary_caps_render_and_column_order() {
        let mut cells = BTreeMap::new();
        cells.insert(
            ("mean".to_string(), "fti".to_string()),
            CellOutcome::Metrics {
                mae_capped: 100.0,
                mse_capped: 100.0,
            },
        );
        cells.insert(
            ("mean".to_string(), "trim".to_string()),
            CellOutcome::Failed,
        );
        let (_, csv) = summary_table(&["mean".to_string()], &cells);
        let mae_line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = mae_line.split(',').collect();
        // rule, metric, then the seven fixed columns ending in fti
        assert_eq!(fields[0], "mean");
        assert_eq!(fields[3], "ERR");
        assert_eq!(fields[8], "100.0");
    }
}
