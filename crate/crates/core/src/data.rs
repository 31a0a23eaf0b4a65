//! Traffic data ingestion, synthetic generation, and sliding-window
//! sample construction.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

/// Per-cell traffic load series at a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    pub bs_id: u64,
    pub values: Vec<f64>,
    pub interval_minutes: u32,
}

/// Sliding-window layout: `r` recent lags plus `s` seasonal lags at period
/// `omega` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    #[serde(default = "default_window_r")]
    pub r: usize,
    #[serde(default = "default_window_s")]
    pub s: usize,
    #[serde(default = "default_window_omega")]
    pub omega: usize,
}

fn default_window_r() -> usize {
    6
}
fn default_window_s() -> usize {
    1
}
fn default_window_omega() -> usize {
    144
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            r: default_window_r(),
            s: default_window_s(),
            omega: default_window_omega(),
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r < 1 {
            return Err(Error::InvalidParameter("window r must be >= 1".into()));
        }
        if self.s >= 1 && self.omega <= self.r {
            return Err(Error::InvalidParameter(
                "seasonal period omega must exceed r when s >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of lag features per sample.
    pub fn input_dim(&self) -> usize {
        self.r + self.s
    }

    /// Deepest lag a target index must reach back to.
    pub fn deepest_lag(&self) -> usize {
        if self.s >= 1 {
            self.omega * self.s
        } else {
            self.r
        }
    }
}

/// One regression sample: lag inputs and the one-step-ahead target.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub input: Vec<f64>,
    pub target: f64,
}

/// Windowed samples for one base station, already normalized.
///
/// `normalize(x) = (x - offset) / scale`; the same affine map is applied to
/// inputs and targets, fitted on the train split only.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub bs_id: u64,
    pub pairs: Vec<SamplePair>,
    pub scale: f64,
    pub offset: f64,
}

impl WindowedDataset {
    /// Undo normalization for a single value.
    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }
}

/// Load grid-cell traffic from a Milan/Trentino-layout CSV.
///
/// Rows are `cell_id <sep> timestamp_ms <sep> value...` with `\t` or `,` as
/// separator. Activity is summed per cell per fixed-length bucket;
/// `value_columns` indexes (0-based) into the value columns, `None` sums all
/// of them. Buckets with no record are zero-filled, and all returned series
/// share one time axis so they stay aligned across cells.
pub fn load_grid_csv(
    path: &Path,
    selected_cells: &[u64],
    interval_minutes: u32,
    value_columns: Option<&[usize]>,
) -> Result<Vec<TrafficSeries>> {
    if selected_cells.is_empty() {
        return Err(Error::EmptySelection {
            path: path.display().to_string(),
        });
    }
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let path_str = path.display().to_string();

    let mut selected: Vec<u64> = selected_cells.to_vec();
    selected.sort_unstable();
    selected.dedup();

    // cell -> bucket -> summed activity
    let mut buckets: BTreeMap<u64, BTreeMap<i64, f64>> =
        selected.iter().map(|&c| (c, BTreeMap::new())).collect();
    let interval_ms = i64::from(interval_minutes) * 60_000;
    let mut ts_range: Option<(i64, i64)> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path_str.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
        if fields.len() < 3 {
            return Err(Error::MalformedRow {
                path: path_str.clone(),
                line: line_no,
                detail: format!("expected at least 3 columns, found {}", fields.len()),
            });
        }
        let cell_id: u64 = fields[0].parse().map_err(|_| Error::MalformedRow {
            path: path_str.clone(),
            line: line_no,
            detail: format!("cell id `{}` is not an integer", fields[0]),
        })?;
        let ts_ms: i64 = fields[1].parse().map_err(|_| Error::MalformedRow {
            path: path_str.clone(),
            line: line_no,
            detail: format!("timestamp `{}` is not an integer", fields[1]),
        })?;
        let value_fields = &fields[2..];
        let mut activity = 0.0;
        match value_columns {
            Some(cols) => {
                for &c in cols {
                    let raw = value_fields.get(c).ok_or_else(|| Error::MalformedRow {
                        path: path_str.clone(),
                        line: line_no,
                        detail: format!("value column {c} out of range"),
                    })?;
                    // Absent activity is encoded as an empty field in the
                    // Telecom Italia dumps; treat it as zero.
                    if !raw.is_empty() {
                        activity += parse_value(raw, &path_str, line_no)?;
                    }
                }
            }
            None => {
                for raw in value_fields {
                    if !raw.is_empty() {
                        activity += parse_value(raw, &path_str, line_no)?;
                    }
                }
            }
        }

        ts_range = Some(match ts_range {
            None => (ts_ms, ts_ms),
            Some((lo, hi)) => (lo.min(ts_ms), hi.max(ts_ms)),
        });
        if let Some(cell) = buckets.get_mut(&cell_id) {
            let bucket = ts_ms.div_euclid(interval_ms);
            *cell.entry(bucket).or_insert(0.0) += activity;
        }
    }

    let (ts_lo, ts_hi) = ts_range.ok_or_else(|| Error::EmptyInput {
        context: format!("no rows in {path_str}"),
    })?;
    let first_bucket = ts_lo.div_euclid(interval_ms);
    let last_bucket = ts_hi.div_euclid(interval_ms);
    let len = usize::try_from(last_bucket - first_bucket + 1).expect("bucket range fits usize");

    let series = selected
        .into_iter()
        .map(|bs_id| {
            let mut values = vec![0.0; len];
            for (&bucket, &v) in &buckets[&bs_id] {
                values[usize::try_from(bucket - first_bucket).unwrap()] = v.max(0.0);
            }
            TrafficSeries {
                bs_id,
                values,
                interval_minutes,
            }
        })
        .collect();
    Ok(series)
}

fn parse_value(raw: &str, path: &str, line_no: usize) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| Error::MalformedRow {
        path: path.to_string(),
        line: line_no,
        detail: format!("value `{raw}` is not numeric"),
    })?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            path: path.to_string(),
            line: line_no,
            detail: format!("value `{raw}` is not finite"),
        });
    }
    Ok(v)
}

/// Parameters of one synthetic diurnal series.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticShape {
    pub base: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Synthetic stand-in for diurnal cellular traffic: a sinusoid over `period`
/// intervals plus Gaussian noise, clamped at zero. Fully determined by the
/// seed; series `i` draws its shape and noise from a stream keyed on
/// `(seed, i)`.
pub fn generate_synthetic(
    count: usize,
    length: usize,
    period: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<TrafficSeries>> {
    if count < 1 {
        return Err(Error::InvalidParameter("synthetic count must be >= 1".into()));
    }
    if period == 0 || length < 2 * period {
        return Err(Error::InvalidParameter(
            "synthetic length must be at least 2 * period".into(),
        ));
    }
    if noise_std < 0.0 {
        return Err(Error::InvalidParameter("noise_std must be >= 0".into()));
    }
    (0..count)
        .map(|i| {
            let mut rng = series_rng(seed, i as u64);
            let shape = SyntheticShape {
                base: rng.gen_range(20.0..80.0),
                amplitude: rng.gen_range(5.0..40.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            };
            Ok(synthetic_series(
                i as u64, length, period, shape, noise_std, &mut rng,
            ))
        })
        .collect()
}

/// Build one synthetic series from explicit shape parameters.
///
/// Exposed so tests can force degenerate shapes (e.g. zero amplitude).
pub fn synthetic_series(
    bs_id: u64,
    length: usize,
    period: usize,
    shape: SyntheticShape,
    noise_std: f64,
    rng: &mut impl Rng,
) -> TrafficSeries {
    let values = (0..length)
        .map(|t| {
            let angle = std::f64::consts::TAU * t as f64 / period as f64 + shape.phase;
            let noise = if noise_std > 0.0 {
                gaussian(rng) * noise_std
            } else {
                0.0
            };
            (shape.base + shape.amplitude * angle.sin() + noise).max(0.0)
        })
        .collect();
    TrafficSeries {
        bs_id,
        values,
        interval_minutes: 10,
    }
}

fn series_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Standard normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout independent of the rng's float internals.
pub(crate) fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Build one-step-ahead samples from a series and split them
/// chronologically. Inputs are the `r` most recent lags (most recent first)
/// followed by the `s` seasonal lags; min-max normalization is fitted on the
/// train split and applied to both splits.
pub fn build_windows(
    series: &TrafficSeries,
    cfg: &WindowConfig,
    split: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&split) || split <= 0.0 {
        return Err(Error::InvalidParameter(
            "train split must lie in (0, 1)".into(),
        ));
    }
    let m_total = series.values.len();
    let deepest = cfg.deepest_lag();
    if m_total <= deepest {
        return Err(Error::InsufficientHistory {
            bs_id: series.bs_id,
            len: m_total,
            needed: deepest,
        });
    }

    let raw_pairs: Vec<(Vec<f64>, f64)> = (deepest..m_total)
        .map(|m| {
            let mut input = Vec::with_capacity(cfg.input_dim());
            for lag in 1..=cfg.r {
                input.push(series.values[m - lag]);
            }
            for j in 1..=cfg.s {
                input.push(series.values[m - cfg.omega * j]);
            }
            (input, series.values[m])
        })
        .collect();

    let z = raw_pairs.len();
    let n_train = (split * z as f64).floor() as usize;
    if n_train == 0 || n_train == z {
        return Err(Error::InsufficientHistory {
            bs_id: series.bs_id,
            len: m_total,
            needed: deepest + 2,
        });
    }

    // min-max over everything the train split sees
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (input, target) in raw_pairs.iter().take(n_train) {
        for &v in input {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        lo = lo.min(*target);
        hi = hi.max(*target);
    }
    let offset = lo;
    let scale = if hi > lo { hi - lo } else { 1.0 };

    let normalize = |pairs: &[(Vec<f64>, f64)]| -> Vec<SamplePair> {
        pairs
            .iter()
            .map(|(input, target)| SamplePair {
                input: input.iter().map(|v| (v - offset) / scale).collect(),
                target: (target - offset) / scale,
            })
            .collect()
    };

    let train = WindowedDataset {
        bs_id: series.bs_id,
        pairs: normalize(&raw_pairs[..n_train]),
        scale,
        offset,
    };
    let test = WindowedDataset {
        bs_id: series.bs_id,
        pairs: normalize(&raw_pairs[n_train..]),
        scale,
        offset,
    };
    Ok((train, test))
}
