//! Data-layer pipeline: outlier removal, missing-value filling,
//! normalization, feature extraction, and windowing into supervised samples.

use crate::datagen::{RecordKind, RecordSet};
use crate::types::{RiskSet, RiskType};
use chrono::NaiveDate;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("z threshold must be positive (got {0})")]
    NonPositiveThreshold(f64),
    #[error("feature `{0}` is entirely missing")]
    AllMissing(String),
    #[error("training range is empty")]
    EmptyTrainRange,
    #[error("training range {start}..{end} out of bounds for {rows} rows")]
    TrainRangeOutOfBounds { start: usize, end: usize, rows: usize },
    #[error("matrix has {rows} rows but the longest rolling window needs more than {window}")]
    TooFewRows { rows: usize, window: usize },
    #[error("not enough rows for one sample: {rows} rows, lookback {lookback} + horizon {horizon}")]
    InsufficientRows { rows: usize, lookback: usize, horizon: usize },
    #[error("lookback and horizon must be >= 1")]
    BadWindowing,
    #[error("feature name mismatch: expected {expected}, got {got}")]
    FeatureMismatch { expected: String, got: String },
    #[error("record set is empty")]
    EmptyRecords,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> PreprocessError {
    PreprocessError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// FeatureMatrix
// ---------------------------------------------------------------------------

/// Dense time-by-feature matrix with an explicit missingness mask.
///
/// Invariants: `values.nrows() == timestamps.len()`,
/// `values.ncols() == feature_names.len()`, timestamps strictly increasing,
/// and `values` is finite wherever `missing` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub timestamps: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    pub values: Array2<f64>,
    pub missing: Array2<bool>,
}

impl FeatureMatrix {
    pub fn new(
        timestamps: Vec<NaiveDate>,
        feature_names: Vec<String>,
        values: Array2<f64>,
        missing: Array2<bool>,
    ) -> Self {
        assert_eq!(values.nrows(), timestamps.len());
        assert_eq!(values.ncols(), feature_names.len());
        assert_eq!(values.dim(), missing.dim());
        debug_assert!(timestamps.windows(2).all(|w| w[0] < w[1]));
        FeatureMatrix {
            timestamps,
            feature_names,
            values,
            missing,
        }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|m| *m)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// New matrix keeping only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix, PreprocessError> {
        let mut idx = Vec::with_capacity(names.len());
        for n in names {
            idx.push(self.column_index(n).ok_or_else(|| PreprocessError::FeatureMismatch {
                expected: n.clone(),
                got: "absent".to_string(),
            })?);
        }
        let values = self.values.select(Axis(1), &idx);
        let missing = self.missing.select(Axis(1), &idx);
        Ok(FeatureMatrix::new(
            self.timestamps.clone(),
            names.to_vec(),
            values,
            missing,
        ))
    }

    /// Columns whose names start with any of the prefixes.
    pub fn select_prefixes(&self, prefixes: &[&str]) -> Result<FeatureMatrix, PreprocessError> {
        let names: Vec<String> = self
            .feature_names
            .iter()
            .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
            .cloned()
            .collect();
        self.select(&names)
    }

    /// Writes as CSV with a `timestamp` column and empty cells for missing.
    pub fn write_csv(&self, path: &Path) -> Result<(), PreprocessError> {
        let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "timestamp,{}", self.feature_names.join(",")).map_err(|e| io_err(path, e))?;
        for (i, ts) in self.timestamps.iter().enumerate() {
            let mut cells = Vec::with_capacity(self.ncols() + 1);
            cells.push(ts.to_string());
            for j in 0..self.ncols() {
                if self.missing[(i, j)] {
                    cells.push(String::new());
                } else {
                    cells.push(format!("{}", self.values[(i, j)]));
                }
            }
            writeln!(w, "{}", cells.join(",")).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix, PreprocessError> {
        let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, message: String| PreprocessError::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let header = match lines.next() {
            Some((_, Ok(l))) => l,
            Some((_, Err(e))) => return Err(io_err(path, e)),
            None => return Err(parse_err(1, "empty file".to_string())),
        };
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"timestamp") {
            return Err(parse_err(1, "first column must be `timestamp`".to_string()));
        }
        let feature_names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| io_err(path, e))?;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != cols.len() {
                return Err(parse_err(line_no, format!("expected {} cells, found {}", cols.len(), cells.len())));
            }
            timestamps.push(
                cells[0]
                    .parse()
                    .map_err(|e| parse_err(line_no, format!("bad timestamp: {e}")))?,
            );
            for cell in &cells[1..] {
                if cell.is_empty() {
                    values.push(0.0);
                    missing.push(true);
                } else {
                    let v: f64 = cell
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("bad value `{cell}`: {e}")))?;
                    values.push(v);
                    missing.push(false);
                }
            }
        }
        let rows = timestamps.len();
        let ncols = feature_names.len();
        Ok(FeatureMatrix::new(
            timestamps,
            feature_names,
            Array2::from_shape_vec((rows, ncols), values).expect("shape"),
            Array2::from_shape_vec((rows, ncols), missing).expect("shape"),
        ))
    }
}

// ---------------------------------------------------------------------------
// Cleaning
// ---------------------------------------------------------------------------

const MAD_CONSISTENCY: f64 = 1.4826;
const MEAN_AD_CONSISTENCY: f64 = 1.2533;

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Marks cells whose robust z-score exceeds `z_threshold` as missing.
///
/// The scale is 1.4826 x MAD; when the MAD is zero it falls back to
/// 1.2533 x mean absolute deviation, and when that is also zero (constant
/// column) the column is skipped.
pub fn clean_outliers(m: &FeatureMatrix, z_threshold: f64) -> Result<FeatureMatrix, PreprocessError> {
    if !(z_threshold > 0.0) {
        return Err(PreprocessError::NonPositiveThreshold(z_threshold));
    }
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let observed: Vec<f64> = (0..m.nrows())
            .filter(|&i| !m.missing[(i, j)])
            .map(|i| m.values[(i, j)])
            .collect();
        if observed.is_empty() {
            continue;
        }
        let mut sorted = observed.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = median(&sorted);
        let mut abs_dev: Vec<f64> = observed.iter().map(|v| (v - med).abs()).collect();
        abs_dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = median(&abs_dev);
        let scale = if mad > 0.0 {
            MAD_CONSISTENCY * mad
        } else {
            let mean_ad = abs_dev.iter().sum::<f64>() / abs_dev.len() as f64;
            if mean_ad > 0.0 {
                MEAN_AD_CONSISTENCY * mean_ad
            } else {
                continue; // constant column
            }
        };
        for i in 0..m.nrows() {
            if !m.missing[(i, j)] && ((m.values[(i, j)] - med) / scale).abs() > z_threshold {
                out.missing[(i, j)] = true;
                out.values[(i, j)] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Forward-fills then backward-fills each feature; the output has no
/// missing cells. Errors if a feature has no observed value at all.
pub fn fill_missing(m: &FeatureMatrix) -> Result<FeatureMatrix, PreprocessError> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let mut last: Option<f64> = None;
        for i in 0..m.nrows() {
            if out.missing[(i, j)] {
                if let Some(v) = last {
                    out.values[(i, j)] = v;
                    out.missing[(i, j)] = false;
                }
            } else {
                last = Some(out.values[(i, j)]);
            }
        }
        if last.is_none() {
            return Err(PreprocessError::AllMissing(m.feature_names[j].clone()));
        }
        let mut next: Option<f64> = None;
        for i in (0..m.nrows()).rev() {
            if out.missing[(i, j)] {
                let v = next.expect("bounded by the forward pass");
                out.values[(i, j)] = v;
                out.missing[(i, j)] = false;
            } else {
                next = Some(out.values[(i, j)]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-feature z-score parameters fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero training-range variance; they map to 0.
    pub constant: Vec<bool>,
}

/// Fits means and (population) standard deviations on `train_rows`.
/// Requires a fully filled matrix.
pub fn fit_normalizer(m: &FeatureMatrix, train_rows: Range<usize>) -> Result<NormalizationParams, PreprocessError> {
    if train_rows.is_empty() {
        return Err(PreprocessError::EmptyTrainRange);
    }
    if train_rows.end > m.nrows() {
        return Err(PreprocessError::TrainRangeOutOfBounds {
            start: train_rows.start,
            end: train_rows.end,
            rows: m.nrows(),
        });
    }
    let n = train_rows.len() as f64;
    let mut mean = Vec::with_capacity(m.ncols());
    let mut std = Vec::with_capacity(m.ncols());
    let mut constant = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mu = train_rows.clone().map(|i| m.values[(i, j)]).sum::<f64>() / n;
        let var = train_rows.clone().map(|i| (m.values[(i, j)] - mu).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        mean.push(mu);
        std.push(sd);
        constant.push(sd == 0.0);
    }
    Ok(NormalizationParams {
        feature_names: m.feature_names.clone(),
        mean,
        std,
        constant,
    })
}

/// Applies a fitted z-score transform; constant features map to 0.
pub fn apply_normalizer(m: &FeatureMatrix, p: &NormalizationParams) -> Result<FeatureMatrix, PreprocessError> {
    if m.feature_names != p.feature_names {
        return Err(PreprocessError::FeatureMismatch {
            expected: p.feature_names.join(","),
            got: m.feature_names.join(","),
        });
    }
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.values[(i, j)] = if p.constant[j] {
                0.0
            } else {
                (m.values[(i, j)] - p.mean[j]) / p.std[j]
            };
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Rolling-window settings for the fixed feature catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Robust z threshold applied to raw columns before derivation;
    /// `None` assumes the records were already cleaned.
    pub outlier_z: Option<f64>,
    pub volatility_window: usize,
    pub momentum_short: usize,
    pub momentum_long: usize,
    pub volume_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            outlier_z: Some(6.0),
            volatility_window: 20,
            momentum_short: 5,
            momentum_long: 20,
            volume_window: 20,
        }
    }
}

impl FeatureConfig {
    pub fn longest_window(&self) -> usize {
        self.volatility_window
            .max(self.momentum_long)
            .max(self.volume_window)
    }
}

/// Raw per-(instrument, field) columns on the daily trading grid; monthly
/// macro values appear on their anchor rows and are missing elsewhere.
pub fn raw_matrix(records: &RecordSet) -> Result<FeatureMatrix, PreprocessError> {
    if records.is_empty() {
        return Err(PreprocessError::EmptyRecords);
    }
    let mut dates: Vec<NaiveDate> = records
        .iter()
        .filter(|r| r.kind != RecordKind::Macro)
        .map(|r| r.timestamp)
        .collect();
    if dates.is_empty() {
        dates = records.iter().map(|r| r.timestamp).collect();
    }
    dates.sort();
    dates.dedup();
    let date_index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();

    let mut names: Vec<String> = Vec::new();
    for kind in RecordKind::ALL {
        for inst in records.instruments(kind) {
            for field in kind.field_catalog() {
                names.push(format!("{inst}.{field}"));
            }
        }
    }
    let col_index: BTreeMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

    let rows = dates.len();
    let cols = names.len();
    let mut values = Array2::zeros((rows, cols));
    let mut missing = Array2::from_elem((rows, cols), true);
    for r in records.iter() {
        let Some(&i) = date_index.get(&r.timestamp) else {
            continue; // macro anchor off the daily grid; forward fill covers it
        };
        for (field, value) in &r.fields {
            let j = col_index[&format!("{}.{field}", r.instrument)];
            if let Some(v) = value {
                values[(i, j)] = *v;
                missing[(i, j)] = false;
            }
        }
    }
    Ok(FeatureMatrix::new(dates, names, values, missing))
}

fn rolling_std(values: &[f64], end: usize, window: usize) -> f64 {
    let start = end.saturating_sub(window - 1);
    let slice = &values[start..=end];
    if slice.len() < 2 {
        return 0.0;
    }
    let n = slice.len() as f64;
    let mu = slice.iter().sum::<f64>() / n;
    (slice.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt()
}

/// The fixed derived-feature catalog, computed per stock instrument and for
/// the equal-weight aggregate:
///
/// - `log_return` — ln(close_t / close_{t-1})
/// - `mom_5d`, `mom_20d` — ln(close_t / close_{t-k})
/// - `vol_20d` — rolling std of log returns
/// - `volume_z` — rolling z-score of volume
///
/// plus `sentiment.mean` (daily mean sentiment score) and the eight
/// `macro.*` indicators forward-filled onto the daily grid. Output rows
/// start at the second trading day; rolling statistics use the available
/// history while it is shorter than their window.
pub fn extract_features(records: &RecordSet, cfg: &FeatureConfig) -> Result<FeatureMatrix, PreprocessError> {
    let raw = raw_matrix(records)?;
    let rows = raw.nrows();
    if rows <= cfg.longest_window() {
        return Err(PreprocessError::TooFewRows {
            rows,
            window: cfg.longest_window(),
        });
    }
    let cleaned = match cfg.outlier_z {
        Some(z) => clean_outliers(&raw, z)?,
        None => raw,
    };
    let filled = fill_missing(&cleaned)?;

    let instruments = records.instruments(RecordKind::Stock);
    if instruments.is_empty() {
        return Err(PreprocessError::EmptyRecords);
    }

    struct Series {
        closes: Vec<f64>,
        volumes: Vec<f64>,
    }
    let mut series = Vec::new();
    for inst in &instruments {
        let c = filled.column_index(&format!("{inst}.close")).expect("stock close column");
        let v = filled.column_index(&format!("{inst}.volume")).expect("stock volume column");
        series.push(Series {
            closes: filled.values.column(c).to_vec(),
            volumes: filled.values.column(v).to_vec(),
        });
    }
    // Equal-weight aggregate price and volume.
    let agg = Series {
        closes: (0..rows)
            .map(|i| series.iter().map(|s| s.closes[i]).sum::<f64>() / series.len() as f64)
            .collect(),
        volumes: (0..rows)
            .map(|i| series.iter().map(|s| s.volumes[i]).sum::<f64>() / series.len() as f64)
            .collect(),
    };

    let mut blocks: Vec<(String, &Series)> = vec![("agg".to_string(), &agg)];
    for (k, inst) in instruments.iter().enumerate() {
        blocks.push((inst.clone(), &series[k]));
    }

    let out_rows = rows - 1;
    let mut names: Vec<String> = Vec::new();
    for (prefix, _) in &blocks {
        for f in ["log_return", "mom_5d", "mom_20d", "vol_20d", "volume_z"] {
            names.push(format!("{prefix}.{f}"));
        }
    }
    let has_sentiment = records.by_kind(RecordKind::Sentiment).next().is_some();
    if has_sentiment {
        names.push("sentiment.mean".to_string());
    }
    let macro_cols: Vec<(String, usize)> = filled
        .feature_names
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            records
                .instruments(RecordKind::Macro)
                .iter()
                .any(|inst| n.starts_with(&format!("{inst}.")))
        })
        .map(|(j, n)| {
            let field = n.split('.').next_back().unwrap().to_string();
            (format!("macro.{field}"), j)
        })
        .collect();
    names.extend(macro_cols.iter().map(|(n, _)| n.clone()));

    let mut values = Array2::zeros((out_rows, names.len()));
    let missing = Array2::from_elem((out_rows, names.len()), false);

    for (b, (_, s)) in blocks.iter().enumerate() {
        let returns: Vec<f64> = (1..rows).map(|i| (s.closes[i] / s.closes[i - 1]).ln()).collect();
        for (row, t) in (1..rows).enumerate() {
            let base = b * 5;
            values[(row, base)] = returns[row];
            let lag_s = t.saturating_sub(cfg.momentum_short).max(0);
            values[(row, base + 1)] = (s.closes[t] / s.closes[lag_s]).ln();
            let lag_l = t.saturating_sub(cfg.momentum_long).max(0);
            values[(row, base + 2)] = (s.closes[t] / s.closes[lag_l]).ln();
            values[(row, base + 3)] = rolling_std(&returns, row, cfg.volatility_window);
            let vol_start = (t + 1).saturating_sub(cfg.volume_window);
            let window = &s.volumes[vol_start..=t];
            let n = window.len() as f64;
            let mu = window.iter().sum::<f64>() / n;
            let sd = (window.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            values[(row, base + 4)] = if sd > 0.0 { (s.volumes[t] - mu) / sd } else { 0.0 };
        }
    }

    let mut col = blocks.len() * 5;
    if has_sentiment {
        // Daily mean across sentiment series.
        let mut sums = vec![0.0f64; rows];
        let mut counts = vec![0usize; rows];
        for inst in records.instruments(RecordKind::Sentiment) {
            if let Some(j) = filled.column_index(&format!("{inst}.sentiment_score")) {
                for i in 0..rows {
                    sums[i] += filled.values[(i, j)];
                    counts[i] += 1;
                }
            }
        }
        for (row, t) in (1..rows).enumerate() {
            values[(row, col)] = if counts[t] > 0 { sums[t] / counts[t] as f64 } else { 0.0 };
        }
        col += 1;
    }
    for (_, j) in &macro_cols {
        for (row, t) in (1..rows).enumerate() {
            values[(row, col)] = filled.values[(t, *j)];
        }
        col += 1;
    }

    Ok(FeatureMatrix::new(
        filled.timestamps[1..].to_vec(),
        names,
        values,
        missing,
    ))
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/// Supervised windows: per anchor `t`, the input is the lookback rows ending
/// at `t` and the label marks risk types occurring in `(t, t+horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub feature_names: Vec<String>,
    pub lookback: usize,
    pub horizon: usize,
    pub inputs: Vec<Array2<f64>>,
    pub labels: Vec<RiskSet>,
    pub anchors: Vec<NaiveDate>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Copy of samples `range` as a standalone set.
    pub fn slice(&self, range: Range<usize>) -> SampleSet {
        SampleSet {
            feature_names: self.feature_names.clone(),
            lookback: self.lookback,
            horizon: self.horizon,
            inputs: self.inputs[range.clone()].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            anchors: self.anchors[range].to_vec(),
        }
    }

    /// Binary targets for one risk type, aligned with `inputs`.
    pub fn targets(&self, risk: RiskType) -> Vec<f64> {
        self.labels
            .iter()
            .map(|l| if l.contains(risk) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Anchor-row feature matrix (one row per sample: the most recent row of
    /// each input window) consumed by the tree models.
    pub fn anchor_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), self.n_features()));
        for (i, input) in self.inputs.iter().enumerate() {
            m.row_mut(i).assign(&input.row(input.nrows() - 1));
        }
        m
    }
}

/// Builds samples from a (normalized) feature matrix and per-date ground
/// truth. Sample count is `rows - lookback - horizon`.
pub fn make_samples(
    m: &FeatureMatrix,
    truth: &BTreeMap<NaiveDate, RiskSet>,
    lookback: usize,
    horizon: usize,
) -> Result<SampleSet, PreprocessError> {
    if lookback < 1 || horizon < 1 {
        return Err(PreprocessError::BadWindowing);
    }
    let rows = m.nrows();
    if rows <= lookback + horizon {
        return Err(PreprocessError::InsufficientRows {
            rows,
            lookback,
            horizon,
        });
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut anchors = Vec::new();
    for a in lookback..rows - horizon {
        let window = m.values.slice(ndarray::s![a + 1 - lookback..=a, ..]).to_owned();
        let mut label = RiskSet::empty();
        for t in a + 1..=a + horizon {
            if let Some(set) = truth.get(&m.timestamps[t]) {
                label = label.union(*set);
            }
        }
        inputs.push(window);
        labels.push(label);
        anchors.push(m.timestamps[a]);
    }
    Ok(SampleSet {
        feature_names: m.feature_names.clone(),
        lookback,
        horizon,
        inputs,
        labels,
        anchors,
    })
}

// ---------------------------------------------------------------------------
// Sample persistence (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    version: u32,
    feature_names: Vec<String>,
    lookback: usize,
    horizon: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    anchor: NaiveDate,
    labels: RiskSet,
    input: Vec<Vec<f64>>,
}

/// Writes a sample set as `meta.json` plus `samples.jsonl` under `dir`.
pub fn write_samples(samples: &SampleSet, dir: &Path) -> Result<(), PreprocessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta = SampleMeta {
        version: 1,
        feature_names: samples.feature_names.clone(),
        lookback: samples.lookback,
        horizon: samples.horizon,
    };
    let meta_path = dir.join("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("serialize"))
        .map_err(|e| io_err(&meta_path, e))?;
    let path = dir.join("samples.jsonl");
    let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for i in 0..samples.len() {
        let line = SampleLine {
            anchor: samples.anchors[i],
            labels: samples.labels[i],
            input: samples.inputs[i].outer_iter().map(|r| r.to_vec()).collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("serialize")).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

pub fn read_samples(dir: &Path) -> Result<SampleSet, PreprocessError> {
    let meta_path = dir.join("meta.json");
    let meta: SampleMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?,
    )
    .map_err(|e| PreprocessError::Parse {
        path: meta_path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let path = dir.join("samples.jsonl");
    let file = std::fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    let reader = BufReader::new(file);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut anchors = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.is_empty() {
            continue;
        }
        let parsed: SampleLine = serde_json::from_str(&line).map_err(|e| PreprocessError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let rows = parsed.input.len();
        let cols = meta.feature_names.len();
        let flat: Vec<f64> = parsed.input.into_iter().flatten().collect();
        let input = Array2::from_shape_vec((rows, cols), flat).map_err(|e| PreprocessError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        inputs.push(input);
        labels.push(parsed.labels);
        anchors.push(parsed.anchor);
    }
    Ok(SampleSet {
        feature_names: meta.feature_names,
        lookback: meta.lookback,
        horizon: meta.horizon,
        inputs,
        labels,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorSpec};

    fn matrix_from(cols: Vec<(&str, Vec<Option<f64>>)>) -> FeatureMatrix {
        let rows = cols[0].1.len();
        let names: Vec<String> = cols.iter().map(|(n, _)| n.to_string()).collect();
        let mut values = Array2::zeros((rows, cols.len()));
        let mut missing = Array2::from_elem((rows, cols.len()), false);
        for (j, (_, col)) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                match v {
                    Some(x) => values[(i, j)] = *x,
                    None => missing[(i, j)] = true,
                }
            }
        }
        let timestamps: Vec<NaiveDate> = (0..rows)
            .map(|i| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(i as i64))
            .collect();
        FeatureMatrix::new(timestamps, names, values, missing)
    }

    #[test]
    fn outlier_is_marked_missing() {
        // median 1, MAD 0 -> mean-absolute-deviation fallback:
        // scale = 1.2533 * 19.8, z(100) = 99 / 24.8 ≈ 3.99 > 3.
        let m = matrix_from(vec![("a", vec![Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(100.0)])]);
        let cleaned = clean_outliers(&m, 3.0).unwrap();
        assert!(cleaned.missing[(4, 0)]);
        for i in 0..4 {
            assert!(!cleaned.missing[(i, 0)]);
            assert_eq!(cleaned.values[(i, 0)], 1.0);
        }
    }

    #[test]
    fn constant_column_is_untouched() {
        let m = matrix_from(vec![("a", vec![Some(2.0); 6])]);
        let cleaned = clean_outliers(&m, 3.0).unwrap();
        assert_eq!(cleaned, m);
    }

    #[test]
    fn within_threshold_is_identity() {
        let m = matrix_from(vec![("a", vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)])]);
        let cleaned = clean_outliers(&m, 5.0).unwrap();
        assert_eq!(cleaned, m);
    }

    #[test]
    fn non_positive_threshold_rejected() {
        let m = matrix_from(vec![("a", vec![Some(1.0)])]);
        assert!(matches!(
            clean_outliers(&m, 0.0),
            Err(PreprocessError::NonPositiveThreshold(_))
        ));
    }

    #[test]
    fn fill_forward_then_backward() {
        let m = matrix_from(vec![("a", vec![Some(1.0), None, None, Some(4.0)])]);
        let filled = fill_missing(&m).unwrap();
        let got: Vec<f64> = filled.values.column(0).to_vec();
        assert_eq!(got, vec![1.0, 1.0, 1.0, 4.0]);
        assert!(!filled.has_missing());
    }

    #[test]
    fn leading_gap_backfilled() {
        let m = matrix_from(vec![("a", vec![None, Some(2.0), Some(3.0)])]);
        let filled = fill_missing(&m).unwrap();
        assert_eq!(filled.values.column(0).to_vec(), vec![2.0, 2.0, 3.0]);
    }

    #[test]
    fn all_missing_column_errors_with_name() {
        let m = matrix_from(vec![("a", vec![Some(1.0), Some(2.0)]), ("bad", vec![None, None])]);
        match fill_missing(&m) {
            Err(PreprocessError::AllMissing(name)) => assert_eq!(name, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fill_is_idempotent() {
        let m = matrix_from(vec![("a", vec![Some(1.0), None, Some(3.0), None])]);
        let once = fill_missing(&m).unwrap();
        let twice = fill_missing(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalizer_matches_hand_computation() {
        // train column [2,4]: mean 3, population std 1; value 5 -> 2.0
        let m = matrix_from(vec![("a", vec![Some(2.0), Some(4.0), Some(5.0)])]);
        let p = fit_normalizer(&m, 0..2).unwrap();
        assert_eq!(p.mean, vec![3.0]);
        assert_eq!(p.std, vec![1.0]);
        let z = apply_normalizer(&m, &p).unwrap();
        assert_eq!(z.values[(2, 0)], 2.0);
    }

    #[test]
    fn training_rows_have_zero_mean() {
        let m = matrix_from(vec![
            ("a", vec![Some(1.0), Some(5.0), Some(9.0), Some(2.0)]),
            ("b", vec![Some(-3.0), Some(4.0), Some(0.5), Some(8.0)]),
        ]);
        let p = fit_normalizer(&m, 0..3).unwrap();
        let z = apply_normalizer(&m, &p).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..3).map(|i| z.values[(i, j)]).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn constant_feature_flagged_and_zeroed() {
        let m = matrix_from(vec![("a", vec![Some(7.0), Some(7.0), Some(7.0)])]);
        let p = fit_normalizer(&m, 0..2).unwrap();
        assert!(p.constant[0]);
        let z = apply_normalizer(&m, &p).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalizer_ignores_held_out_rows() {
        // No-leakage: perturbing test rows does not change the transform of
        // other held-out values.
        let m1 = matrix_from(vec![("a", vec![Some(1.0), Some(2.0), Some(3.0), Some(10.0)])]);
        let m2 = matrix_from(vec![("a", vec![Some(1.0), Some(2.0), Some(3.0), Some(-40.0)])]);
        let p1 = fit_normalizer(&m1, 0..3).unwrap();
        let p2 = fit_normalizer(&m2, 0..3).unwrap();
        assert_eq!(p1, p2);
        let z1 = apply_normalizer(&m1, &p1).unwrap();
        for i in 0..3 {
            let z2 = apply_normalizer(&m2, &p2).unwrap();
            assert_eq!(z1.values[(i, 0)], z2.values[(i, 0)]);
        }
    }

    #[test]
    fn empty_train_range_rejected() {
        let m = matrix_from(vec![("a", vec![Some(1.0)])]);
        assert!(matches!(
            fit_normalizer(&m, 1..1),
            Err(PreprocessError::EmptyTrainRange)
        ));
    }

    fn feature_fixture(n_days_extra: i64) -> RecordSet {
        let spec = GeneratorSpec {
            n_instruments: 2,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(n_days_extra),
            event_rates: BTreeMap::new(),
            ..GeneratorSpec::default()
        }
        .clone();
        generate(&spec).unwrap()
    }

    #[test]
    fn log_return_on_second_day() {
        use crate::datagen::{Record, RecordKind};
        // Hand-built 25-day single-stock series whose first two closes are
        // 100 and 110.
        let mut records = Vec::new();
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(); // a Monday
        let days = crate::datagen::trading_days(start, start + chrono::Duration::days(40));
        for (i, d) in days.iter().enumerate() {
            let close = match i {
                0 => 100.0,
                1 => 110.0,
                _ => 110.0,
            };
            let mut fields = BTreeMap::new();
            for f in RecordKind::Stock.field_catalog() {
                fields.insert(f.to_string(), Some(1.0));
            }
            fields.insert("close".to_string(), Some(close));
            fields.insert("volume".to_string(), Some(1.0e6));
            records.push(Record {
                timestamp: *d,
                instrument: "S0001".to_string(),
                kind: RecordKind::Stock,
                fields,
                labels: RiskSet::empty(),
            });
        }
        let set = RecordSet::new(records);
        let cfg = FeatureConfig {
            outlier_z: None,
            ..FeatureConfig::default()
        };
        let m = extract_features(&set, &cfg).unwrap();
        let j = m.column_index("S0001.log_return").unwrap();
        assert!((m.values[(0, j)] - (1.1f64).ln()).abs() < 1e-12);
        // Constant after day 2: all later returns zero.
        assert_eq!(m.values[(5, j)], 0.0);
    }

    #[test]
    fn constant_prices_zero_features() {
        use crate::datagen::{Record, RecordKind};
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        let days = crate::datagen::trading_days(start, start + chrono::Duration::days(45));
        let mut records = Vec::new();
        for d in &days {
            let mut fields = BTreeMap::new();
            for f in RecordKind::Stock.field_catalog() {
                fields.insert(f.to_string(), Some(5.0));
            }
            records.push(Record {
                timestamp: *d,
                instrument: "S0001".to_string(),
                kind: RecordKind::Stock,
                fields,
                labels: RiskSet::empty(),
            });
        }
        let set = RecordSet::new(records);
        let m = extract_features(&set, &FeatureConfig::default()).unwrap();
        for f in ["log_return", "mom_5d", "mom_20d", "vol_20d", "volume_z"] {
            let j = m.column_index(&format!("S0001.{f}")).unwrap();
            assert!(m.values.column(j).iter().all(|v| *v == 0.0), "{f} not all zero");
        }
    }

    #[test]
    fn too_few_rows_errors() {
        let set = feature_fixture(13); // ~10 trading days
        let err = extract_features(&set, &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, PreprocessError::TooFewRows { .. }));
    }

    #[test]
    fn feature_layout_is_stable() {
        let set = feature_fixture(60);
        let m = extract_features(&set, &FeatureConfig::default()).unwrap();
        assert_eq!(&m.feature_names[0], "agg.log_return");
        assert!(m.feature_names.contains(&"S0001.vol_20d".to_string()));
        assert!(m.feature_names.contains(&"sentiment.mean".to_string()));
        assert!(m.feature_names.contains(&"macro.gdp_growth".to_string()));
        assert_eq!(m.nrows(), crate::datagen::trading_days(
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(60),
        ).len() - 1);
    }

    #[test]
    fn sample_count_formula() {
        // 100 rows, lookback 30, horizon 30 -> 40 samples
        let cols = vec![("a", (0..100).map(|i| Some(i as f64)).collect::<Vec<_>>())];
        let m = matrix_from(cols);
        let truth = BTreeMap::new();
        let s = make_samples(&m, &truth, 30, 30).unwrap();
        assert_eq!(s.len(), 40);
        assert_eq!(s.inputs[0].nrows(), 30);
        // First anchor is row index 30; window covers rows 1..=30.
        assert_eq!(s.inputs[0][(0, 0)], 1.0);
        assert_eq!(s.inputs[0][(29, 0)], 30.0);
    }

    #[test]
    fn no_events_all_zero_labels() {
        let m = matrix_from(vec![("a", (0..50).map(|i| Some(i as f64)).collect())]);
        let s = make_samples(&m, &BTreeMap::new(), 10, 10).unwrap();
        assert!(s.labels.iter().all(|l| l.is_empty()));
    }

    #[test]
    fn event_just_after_anchor_is_labeled() {
        let m = matrix_from(vec![("a", (0..50).map(|i| Some(i as f64)).collect())]);
        let mut truth = BTreeMap::new();
        // Event on row index 11 (anchor 10's first horizon day).
        truth.insert(m.timestamps[11], RiskSet::empty().with(RiskType::MarketCrash));
        let s = make_samples(&m, &truth, 10, 30).unwrap();
        assert_eq!(s.anchors[0], m.timestamps[10]);
        assert!(s.labels[0].contains(RiskType::MarketCrash));
        // Anchor 11 no longer sees it... it occurs at index 11 itself, which
        // is outside (11, 41]. The next anchor's label must not include it.
        assert!(!s.labels[1].contains(RiskType::MarketCrash));
    }

    #[test]
    fn insufficient_rows_for_samples() {
        let m = matrix_from(vec![("a", (0..20).map(|i| Some(i as f64)).collect())]);
        assert!(matches!(
            make_samples(&m, &BTreeMap::new(), 10, 10),
            Err(PreprocessError::InsufficientRows { .. })
        ));
    }

    #[test]
    fn samples_round_trip_through_jsonl() {
        let m = matrix_from(vec![
            ("a", (0..30).map(|i| Some(i as f64 * 0.1)).collect()),
            ("b", (0..30).map(|i| Some((i as f64).sin())).collect()),
        ]);
        let mut truth = BTreeMap::new();
        truth.insert(m.timestamps[15], RiskSet::empty().with(RiskType::Liquidity));
        let s = make_samples(&m, &truth, 5, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_samples(&s, dir.path()).unwrap();
        let back = read_samples(dir.path()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = matrix_from(vec![
            ("a", vec![Some(1.5), None, Some(0.25)]),
            ("b", vec![Some(-2.0), Some(3.125), None]),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        m.write_csv(&path).unwrap();
        let back = FeatureMatrix::read_csv(&path).unwrap();
        assert_eq!(m.timestamps, back.timestamps);
        assert_eq!(m.feature_names, back.feature_names);
        assert_eq!(m.missing, back.missing);
        for (a, b) in m.values.iter().zip(back.values.iter()) {
            assert_eq!(a, b);
        }
    }
}
