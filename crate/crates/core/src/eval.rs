//! Metrics, ROC/AUC, rolling-window backtesting, and k-fold tuning.

use crate::preprocess::SampleSet;
use crate::types::{RiskModel, RiskType};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty input")]
    Empty,
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("labels contain a single class; ROC needs both")]
    SingleClass,
    #[error("data span {samples} too small for train {train} + horizon {horizon}")]
    InsufficientSpan {
        samples: usize,
        train: usize,
        horizon: usize,
    },
    #[error("invalid backtest spec: {0}")]
    InvalidSpec(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("too few samples ({samples}) for {k} folds")]
    TooFewSamples { samples: usize, k: usize },
    #[error("k must be >= 2 (got {0})")]
    BadK(usize),
    #[error("no fold produced a usable validation score")]
    DegenerateFolds,
    #[error("model error: {0}")]
    Model(String),
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.r#fn + self.tn
    }
}

/// Accuracy/precision/recall/F1 at a threshold. When a denominator is zero
/// the metric is reported as 0 with its `*_defined` flag cleared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Thresholded confusion counts and the four headline metrics. Scores at or
/// above the threshold predict positive.
pub fn classify_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ClassMetrics, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let mut counts = ConfusionCounts::default();
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, *l) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.r#fn += 1,
            (false, false) => counts.tn += 1,
        }
    }
    let accuracy = (counts.tp + counts.tn) as f64 / counts.total() as f64;
    let precision_defined = counts.tp + counts.fp > 0;
    let precision = if precision_defined {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    } else {
        0.0
    };
    let recall_defined = counts.tp + counts.r#fn > 0;
    let recall = if recall_defined {
        counts.tp as f64 / (counts.tp + counts.r#fn) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassMetrics {
        counts,
        accuracy,
        precision,
        recall,
        f1,
        precision_defined,
        recall_defined,
    })
}

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from sweeping thresholds over descending distinct scores, with
/// AUC by trapezoidal integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut k = 0;
    while k < order.len() {
        // Group ties: one curve point per distinct score.
        let score = scores[order[k]];
        while k < order.len() && scores[order[k]] == score {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

// ---------------------------------------------------------------------------
// Rolling backtest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktestMode {
    /// Fixed-length training window that slides forward.
    Sliding,
    /// Training window anchored at the start and growing.
    Expanding,
}

/// Rolling-window protocol in units of samples (daily anchors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSpec {
    pub initial_train: usize,
    pub horizon: usize,
    pub step: usize,
    pub mode: BacktestMode,
}

impl Default for BacktestSpec {
    /// Five trading years of initial training, 30-day prediction windows,
    /// 30-day steps, sliding.
    fn default() -> Self {
        BacktestSpec {
            initial_train: 5 * 261,
            horizon: 30,
            step: 30,
            mode: BacktestMode::Sliding,
        }
    }
}

impl BacktestSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.initial_train == 0 || self.horizon == 0 || self.step == 0 {
            return Err(EvalError::InvalidSpec(
                "initial_train, horizon, and step must all be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Index ranges of one backtest window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub index: usize,
    pub train_start: usize,
    pub train_end: usize,
    pub test_start: usize,
    pub test_end: usize,
}

/// Window arithmetic: window k tests `[train_end_k, train_end_k + horizon)`
/// where `train_end_k = initial_train + k*step`, while it fits.
pub fn plan_windows(n_samples: usize, spec: &BacktestSpec) -> Result<Vec<WindowPlan>, EvalError> {
    spec.validate()?;
    if n_samples < spec.initial_train + spec.horizon {
        return Err(EvalError::InsufficientSpan {
            samples: n_samples,
            train: spec.initial_train,
            horizon: spec.horizon,
        });
    }
    let mut windows = Vec::new();
    let mut k = 0usize;
    loop {
        let train_end = spec.initial_train + k * spec.step;
        let test_end = train_end + spec.horizon;
        if test_end > n_samples {
            break;
        }
        let train_start = match spec.mode {
            BacktestMode::Sliding => train_end - spec.initial_train,
            BacktestMode::Expanding => 0,
        };
        windows.push(WindowPlan {
            index: k,
            train_start,
            train_end,
            test_start: train_end,
            test_end,
        });
        k += 1;
    }
    Ok(windows)
}

/// Per-risk-type outcome over one score/label series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub risk_type: RiskType,
    pub n: usize,
    pub positives: usize,
    pub metrics: ClassMetrics,
    /// Present when both classes appear in the labels.
    pub roc: Option<RocCurve>,
}

fn type_metrics(risk: RiskType, scores: &[f64], labels: &[bool], threshold: f64) -> Result<TypeMetrics, EvalError> {
    let metrics = classify_metrics(scores, labels, threshold)?;
    let roc = match roc_auc(scores, labels) {
        Ok(curve) => Some(curve),
        Err(EvalError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(TypeMetrics {
        risk_type: risk,
        n: scores.len(),
        positives: labels.iter().filter(|l| **l).count(),
        metrics,
        roc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub plan: WindowPlan,
    pub train_range: (NaiveDate, NaiveDate),
    pub test_range: (NaiveDate, NaiveDate),
    pub per_type: Vec<TypeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub spec: BacktestSpec,
    pub threshold: f64,
    pub windows: Vec<WindowResult>,
    /// Metrics over scores concatenated across all test windows.
    pub pooled: Vec<TypeMetrics>,
}

impl BacktestReport {
    pub fn pooled_auc(&self, risk: RiskType) -> Option<f64> {
        self.pooled
            .iter()
            .find(|t| t.risk_type == risk)
            .and_then(|t| t.roc.as_ref())
            .map(|r| r.auc)
    }
}

/// Runs the rolling backtest: the factory trains a model on each window's
/// training slice, the model scores the following horizon, and metrics are
/// reported per window plus pooled across windows.
pub fn rolling_backtest<E: fmt::Display>(
    factory: &mut dyn FnMut(&SampleSet) -> Result<Box<dyn RiskModel>, E>,
    samples: &SampleSet,
    spec: &BacktestSpec,
    threshold: f64,
) -> Result<BacktestReport, EvalError> {
    let plans = plan_windows(samples.len(), spec)?;
    let mut windows = Vec::with_capacity(plans.len());
    let mut pooled_scores: Vec<Vec<f64>> = vec![Vec::new(); RiskType::COUNT];
    let mut pooled_labels: Vec<Vec<bool>> = vec![Vec::new(); RiskType::COUNT];

    for plan in plans {
        let train = samples.slice(plan.train_start..plan.train_end);
        let test = samples.slice(plan.test_start..plan.test_end);
        let model = factory(&train).map_err(|e| EvalError::Model(e.to_string()))?;

        let mut scores: Vec<Vec<f64>> = vec![Vec::with_capacity(test.len()); RiskType::COUNT];
        let mut labels: Vec<Vec<bool>> = vec![Vec::with_capacity(test.len()); RiskType::COUNT];
        for i in 0..test.len() {
            let s = model
                .score_window(&test.inputs[i])
                .map_err(|e| EvalError::Model(e.to_string()))?;
            for risk in RiskType::ALL {
                scores[risk.index()].push(s[risk.index()]);
                labels[risk.index()].push(test.labels[i].contains(risk));
            }
        }
        let mut per_type = Vec::with_capacity(RiskType::COUNT);
        for risk in RiskType::ALL {
            let k = risk.index();
            per_type.push(type_metrics(risk, &scores[k], &labels[k], threshold)?);
            pooled_scores[k].extend_from_slice(&scores[k]);
            pooled_labels[k].extend_from_slice(&labels[k]);
        }
        windows.push(WindowResult {
            train_range: (train.anchors[0], *train.anchors.last().unwrap()),
            test_range: (test.anchors[0], *test.anchors.last().unwrap()),
            plan,
            per_type,
        });
    }

    let mut pooled = Vec::with_capacity(RiskType::COUNT);
    for risk in RiskType::ALL {
        let k = risk.index();
        pooled.push(type_metrics(risk, &pooled_scores[k], &pooled_labels[k], threshold)?);
    }
    Ok(BacktestReport {
        spec: spec.clone(),
        threshold,
        windows,
        pooled,
    })
}

// ---------------------------------------------------------------------------
// K-fold tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult<P> {
    pub best_index: usize,
    pub best: P,
    /// Mean validation AUC per grid cell, NaN where no fold was usable.
    pub cell_scores: Vec<f64>,
}

/// Grid search by k-fold cross-validation over contiguous, time-ordered
/// folds (no shuffling: samples are temporally dependent). Scores a cell by
/// the mean over folds of the mean AUC across risk types with both classes
/// present; ties keep the first cell in grid order.
pub fn kfold_tune<P: Clone, E: fmt::Display>(
    factory: &mut dyn FnMut(&P, &SampleSet) -> Result<Box<dyn RiskModel>, E>,
    samples: &SampleSet,
    grid: &[P],
    k: usize,
) -> Result<TuneResult<P>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if k < 2 {
        return Err(EvalError::BadK(k));
    }
    if samples.len() < k {
        return Err(EvalError::TooFewSamples {
            samples: samples.len(),
            k,
        });
    }
    let n = samples.len();
    let fold_bounds: Vec<(usize, usize)> = (0..k)
        .map(|f| (f * n / k, (f + 1) * n / k))
        .collect();

    let mut cell_scores = Vec::with_capacity(grid.len());
    for params in grid {
        let mut fold_scores = Vec::new();
        for &(start, end) in &fold_bounds {
            // Train on everything outside the fold, keeping time order.
            let mut train = samples.slice(0..start);
            let after = samples.slice(end..n);
            train.inputs.extend(after.inputs);
            train.labels.extend(after.labels);
            train.anchors.extend(after.anchors);
            let val = samples.slice(start..end);
            if train.is_empty() || val.is_empty() {
                continue;
            }
            let model = factory(params, &train).map_err(|e| EvalError::Model(e.to_string()))?;
            let mut aucs = Vec::new();
            for risk in RiskType::ALL {
                let mut scores = Vec::with_capacity(val.len());
                let mut labels = Vec::with_capacity(val.len());
                for i in 0..val.len() {
                    let s = model
                        .score_window(&val.inputs[i])
                        .map_err(|e| EvalError::Model(e.to_string()))?;
                    scores.push(s[risk.index()]);
                    labels.push(val.labels[i].contains(risk));
                }
                match roc_auc(&scores, &labels) {
                    Ok(curve) => aucs.push(curve.auc),
                    Err(EvalError::SingleClass) => {}
                    Err(e) => return Err(e),
                }
            }
            if !aucs.is_empty() {
                fold_scores.push(aucs.iter().sum::<f64>() / aucs.len() as f64);
            }
        }
        if fold_scores.is_empty() {
            cell_scores.push(f64::NAN);
        } else {
            cell_scores.push(fold_scores.iter().sum::<f64>() / fold_scores.len() as f64);
        }
    }

    let mut best_index = None;
    for (i, score) in cell_scores.iter().enumerate() {
        if score.is_nan() {
            continue;
        }
        match best_index {
            None => best_index = Some(i),
            Some(b) if *score > cell_scores[b] => best_index = Some(i),
            _ => {}
        }
    }
    let best_index = best_index.ok_or(EvalError::DegenerateFolds)?;
    Ok(TuneResult {
        best_index,
        best: grid[best_index].clone(),
        cell_scores,
    })
}
