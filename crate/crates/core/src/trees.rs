//! From-scratch CART decision trees, Random Forest, and Gradient Boosting
//! Trees, one binary ensemble per risk type.
//!
//! Classification trees split on Gini impurity, regression trees (the GBT
//! residual fit) on variance reduction. Split thresholds are midpoints
//! between consecutive distinct sorted values; ties break toward the lowest
//! feature index and smallest threshold, which makes exhaustive-enumeration
//! oracles exact.

use crate::preprocess::SampleSet;
use crate::types::{ModelKind, RiskModel, RiskScores, RiskType, ScoreError};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TreeError {
    #[error("empty training data")]
    EmptyData,
    #[error("targets and rows differ in length ({rows} rows, {targets} targets)")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("invalid tree params: {0}")]
    InvalidParams(String),
    #[error("feature width mismatch: ensemble expects {expected}, row has {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse error on {path}: {message}")]
    Malformed { path: String, message: String },
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Per-split feature sampling policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// All features considered at every split (gradient boosting).
    All,
    /// ceil(sqrt(p)) random candidate features per split (random forest).
    Sqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf_samples: usize,
    pub learning_rate: Option<f64>,
    pub feature_subsample: FeatureSubsample,
    pub seed: u64,
}

impl TreeParams {
    /// Random Forest defaults: 500 trees, depth 10, min leaf 5.
    pub fn random_forest() -> Self {
        TreeParams {
            n_trees: 500,
            max_depth: 10,
            min_leaf_samples: 5,
            learning_rate: None,
            feature_subsample: FeatureSubsample::Sqrt,
            seed: 42,
        }
    }

    /// Gradient boosting defaults: 200 trees, depth 6, min leaf 10, lr 0.1.
    pub fn gradient_boosting() -> Self {
        TreeParams {
            n_trees: 200,
            max_depth: 6,
            min_leaf_samples: 10,
            learning_rate: Some(0.1),
            feature_subsample: FeatureSubsample::All,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        let mut problems = Vec::new();
        if self.n_trees == 0 {
            problems.push("n_trees must be positive".to_string());
        }
        if self.max_depth == 0 {
            problems.push("max_depth must be positive".to_string());
        }
        if self.min_leaf_samples == 0 {
            problems.push("min_leaf_samples must be positive".to_string());
        }
        if let Some(lr) = self.learning_rate {
            if !lr.is_finite() || lr < 0.0 {
                problems.push(format!("learning_rate must be finite and >= 0 (got {lr})"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TreeError::InvalidParams(problems.join("; ")))
        }
    }
}

// ---------------------------------------------------------------------------
// Tree nodes
// ---------------------------------------------------------------------------

/// Binary CART node: split sends `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        /// Training rows that landed in this leaf.
        n_samples: usize,
    },
}

impl TreeNode {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn for_each_leaf(&self, f: &mut impl FnMut(f64, usize)) {
        match self {
            TreeNode::Leaf { value, n_samples } => f(*value, *n_samples),
            TreeNode::Split { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
        }
    }

    fn to_records(&self, out: &mut Vec<NodeRecord>) {
        match self {
            TreeNode::Leaf { value, n_samples } => out.push(NodeRecord::Leaf {
                value: *value,
                n: *n_samples,
            }),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                out.push(NodeRecord::Split {
                    feature: *feature,
                    threshold: *threshold,
                });
                left.to_records(out);
                right.to_records(out);
            }
        }
    }

    fn from_records(records: &[NodeRecord], pos: &mut usize) -> Result<TreeNode, String> {
        let record = records.get(*pos).ok_or("truncated node list")?;
        *pos += 1;
        match record {
            NodeRecord::Leaf { value, n } => Ok(TreeNode::Leaf {
                value: *value,
                n_samples: *n,
            }),
            NodeRecord::Split { feature, threshold } => {
                let left = TreeNode::from_records(records, pos)?;
                let right = TreeNode::from_records(records, pos)?;
                Ok(TreeNode::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
        }
    }
}

/// Flat pre-order node record used for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeRecord {
    Split { feature: usize, threshold: f64 },
    Leaf { value: f64, n: usize },
}

impl Serialize for TreeNode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut records = Vec::new();
        self.to_records(&mut records);
        records.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TreeNode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let records = Vec::<NodeRecord>::deserialize(deserializer)?;
        let mut pos = 0;
        let node = TreeNode::from_records(&records, &mut pos).map_err(serde::de::Error::custom)?;
        if pos != records.len() {
            return Err(serde::de::Error::custom("trailing node records"));
        }
        Ok(node)
    }
}

// ---------------------------------------------------------------------------
// CART construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitCriterion {
    Gini,
    Variance,
}

fn gini_impurity(n: f64, pos: f64) -> f64 {
    let p = pos / n;
    let q = (n - pos) / n;
    1.0 - p * p - q * q
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Scans one feature's sorted values for the best boundary. `order` holds
/// node-row indices sorted by this feature.
fn scan_feature(
    x: &Array2<f64>,
    y: &[f64],
    order: &[usize],
    feature: usize,
    criterion: SplitCriterion,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let n = order.len();
    let total_sum: f64 = order.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = order.iter().map(|&i| y[i] * y[i]).sum();
    let parent = match criterion {
        SplitCriterion::Gini => gini_impurity(n as f64, total_sum),
        SplitCriterion::Variance => {
            let mean = total_sum / n as f64;
            total_sq / n as f64 - mean * mean
        }
    };

    let mut best: Option<(f64, f64)> = None;
    let mut left_sum = 0.0;
    let mut left_sq = 0.0;
    for k in 0..n - 1 {
        let i = order[k];
        left_sum += y[i];
        left_sq += y[i] * y[i];
        let v = x[(i, feature)];
        let v_next = x[(order[k + 1], feature)];
        if v == v_next {
            continue;
        }
        let n_l = k + 1;
        let n_r = n - n_l;
        if n_l < min_leaf || n_r < min_leaf {
            continue;
        }
        let child = match criterion {
            SplitCriterion::Gini => {
                let imp_l = gini_impurity(n_l as f64, left_sum);
                let imp_r = gini_impurity(n_r as f64, total_sum - left_sum);
                (n_l as f64 / n as f64) * imp_l + (n_r as f64 / n as f64) * imp_r
            }
            SplitCriterion::Variance => {
                let mean_l = left_sum / n_l as f64;
                let var_l = left_sq / n_l as f64 - mean_l * mean_l;
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let mean_r = right_sum / n_r as f64;
                let var_r = right_sq / n_r as f64 - mean_r * mean_r;
                (n_l as f64 / n as f64) * var_l + (n_r as f64 / n as f64) * var_r
            }
        };
        let gain = parent - child;
        let mid = v + (v_next - v) / 2.0;
        // Guard against midpoint rounding onto the upper value, which would
        // move the partition boundary.
        let threshold = if mid < v_next { mid } else { v };
        // Strictly-greater comparison keeps the smallest threshold on ties.
        if best.map_or(gain > 0.0, |(bg, _)| gain > bg) {
            best = Some((gain, threshold));
        }
    }
    best.map(|(gain, threshold)| (threshold, gain))
}

struct TreeBuilder<'a, F: Fn(&[usize]) -> f64> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    criterion: SplitCriterion,
    max_depth: usize,
    min_leaf: usize,
    subsample: FeatureSubsample,
    leaf_value: F,
}

impl<F: Fn(&[usize]) -> f64> TreeBuilder<'_, F> {
    fn candidate_features(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let p = self.x.ncols();
        match self.subsample {
            FeatureSubsample::All => (0..p).collect(),
            FeatureSubsample::Sqrt => {
                let k = ((p as f64).sqrt().ceil() as usize).clamp(1, p);
                let mut feats: Vec<usize> = (0..p).collect();
                for i in 0..k {
                    let j = rng.gen_range(i..p);
                    feats.swap(i, j);
                }
                let mut chosen = feats[..k].to_vec();
                chosen.sort_unstable();
                chosen
            }
        }
    }

    fn leaf(&self, indices: &[usize]) -> TreeNode {
        TreeNode::Leaf {
            value: (self.leaf_value)(indices),
            n_samples: indices.len(),
        }
    }

    fn build(&self, indices: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        let pure = indices.windows(2).all(|w| self.y[w[0]] == self.y[w[1]]);
        if depth >= self.max_depth || indices.len() < 2 * self.min_leaf || pure {
            return self.leaf(indices);
        }
        let mut best: Option<BestSplit> = None;
        for feature in self.candidate_features(rng) {
            let mut order = indices.to_vec();
            order.sort_by(|&a, &b| {
                self.x[(a, feature)]
                    .partial_cmp(&self.x[(b, feature)])
                    .expect("finite feature values")
            });
            if let Some((threshold, gain)) =
                scan_feature(self.x, self.y, &order, feature, self.criterion, self.min_leaf)
            {
                if best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        let Some(split) = best else {
            return self.leaf(indices); // zero gain everywhere
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.x[(i, split.feature)] <= split.threshold);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.build(&left_idx, depth + 1, rng)),
            right: Box::new(self.build(&right_idx, depth + 1, rng)),
        }
    }
}

/// Builds one CART tree by greedy binary splits.
///
/// Classification (`Gini`) leaves hold the positive-class fraction;
/// regression (`Variance`) leaves hold whatever `leaf_value` computes from
/// the leaf's row indices (mean target, or the GBT Newton step).
pub fn build_tree(
    x: &Array2<f64>,
    y: &[f64],
    max_depth: usize,
    min_leaf: usize,
    criterion: SplitCriterion,
    subsample: FeatureSubsample,
    rng: &mut ChaCha8Rng,
    leaf_value: impl Fn(&[usize]) -> f64,
) -> Result<TreeNode, TreeError> {
    if x.nrows() == 0 {
        return Err(TreeError::EmptyData);
    }
    if x.nrows() != y.len() {
        return Err(TreeError::LengthMismatch {
            rows: x.nrows(),
            targets: y.len(),
        });
    }
    let builder = TreeBuilder {
        x,
        y,
        criterion,
        max_depth,
        min_leaf,
        subsample,
        leaf_value,
    };
    let indices: Vec<usize> = (0..x.nrows()).collect();
    Ok(builder.build(&indices, 0, rng))
}

fn mean_of(y: &[f64], indices: &[usize]) -> f64 {
    indices.iter().map(|&i| y[i]).sum::<f64>() / indices.len() as f64
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Which ensemble family a [`TreeEnsemble`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    RandomForest,
    GradientBoosting,
}

impl TreeKind {
    pub fn model_kind(self) -> ModelKind {
        match self {
            TreeKind::RandomForest => ModelKind::RandomForest,
            TreeKind::GradientBoosting => ModelKind::GradientBoosting,
        }
    }
}

/// A trained single-risk-type binary ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub kind: TreeKind,
    pub risk_type: RiskType,
    pub trees: Vec<TreeNode>,
    /// GBT initial log-odds; 0 for random forests.
    pub base_score: f64,
    pub params: TreeParams,
    pub n_features: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability of the positive class for one feature row.
pub fn predict(ensemble: &TreeEnsemble, x: &[f64]) -> Result<f64, TreeError> {
    if x.len() != ensemble.n_features {
        return Err(TreeError::WidthMismatch {
            expected: ensemble.n_features,
            got: x.len(),
        });
    }
    match ensemble.kind {
        TreeKind::RandomForest => {
            if ensemble.trees.is_empty() {
                return Ok(0.5);
            }
            let sum: f64 = ensemble.trees.iter().map(|t| t.eval(x)).sum();
            Ok(sum / ensemble.trees.len() as f64)
        }
        TreeKind::GradientBoosting => {
            let lr = ensemble.params.learning_rate.unwrap_or(0.1);
            let sum: f64 = ensemble.trees.iter().map(|t| t.eval(x)).sum();
            Ok(sigmoid(ensemble.base_score + lr * sum))
        }
    }
}

fn child_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Trains a random forest for one risk type: `n_trees` Gini trees, each on
/// a same-size bootstrap resample with sqrt-feature sampling per split.
/// Per-tree seeds derive from `(seed, tree index)`, so parallel training is
/// identical to sequential.
pub fn rf_train(samples: &SampleSet, risk: RiskType, params: &TreeParams) -> Result<TreeEnsemble, TreeError> {
    params.validate()?;
    if samples.is_empty() {
        return Err(TreeError::EmptyData);
    }
    let x = samples.anchor_matrix();
    let y = samples.targets(risk);
    let n = x.nrows();

    let trees: Vec<TreeNode> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = child_rng(params.seed, t as u64);
            let boot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let boot_y: Vec<f64> = boot.iter().map(|&i| y[i]).collect();
            let mut boot_x = Array2::zeros((n, x.ncols()));
            for (r, &i) in boot.iter().enumerate() {
                boot_x.row_mut(r).assign(&x.row(i));
            }
            build_tree(
                &boot_x,
                &boot_y,
                params.max_depth,
                params.min_leaf_samples,
                SplitCriterion::Gini,
                params.feature_subsample,
                &mut rng,
                |idx| mean_of(&boot_y, idx),
            )
            .expect("bootstrap sample is non-empty")
        })
        .collect();

    Ok(TreeEnsemble {
        kind: TreeKind::RandomForest,
        risk_type: risk,
        trees,
        base_score: 0.0,
        params: params.clone(),
        n_features: x.ncols(),
    })
}

const GBT_PROB_CLAMP: f64 = 1e-6;

/// Trains gradient-boosted trees for one risk type under logistic loss:
/// base score is the clamped log-odds of the positive rate, each iteration
/// fits a variance-criterion tree to residuals `y - p` with Newton-step
/// leaf values `sum(residual) / sum(p(1-p))`, scaled by the learning rate.
pub fn gbt_train(samples: &SampleSet, risk: RiskType, params: &TreeParams) -> Result<TreeEnsemble, TreeError> {
    params.validate()?;
    if samples.is_empty() {
        return Err(TreeError::EmptyData);
    }
    let lr = params.learning_rate.ok_or_else(|| {
        TreeError::InvalidParams("gradient boosting requires a learning_rate".to_string())
    })?;
    let x = samples.anchor_matrix();
    let y = samples.targets(risk);
    let n = x.nrows();

    let pos_rate = (y.iter().sum::<f64>() / n as f64).clamp(GBT_PROB_CLAMP, 1.0 - GBT_PROB_CLAMP);
    let base_score = (pos_rate / (1.0 - pos_rate)).ln();
    let mut scores = vec![base_score; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let p: Vec<f64> = scores.iter().map(|s| sigmoid(*s)).collect();
        let residuals: Vec<f64> = y.iter().zip(&p).map(|(yi, pi)| yi - pi).collect();
        let hessians: Vec<f64> = p.iter().map(|pi| pi * (1.0 - pi)).collect();
        let tree = build_tree(
            &x,
            &residuals,
            params.max_depth,
            params.min_leaf_samples,
            SplitCriterion::Variance,
            params.feature_subsample,
            &mut rng,
            |idx| {
                let num: f64 = idx.iter().map(|&i| residuals[i]).sum();
                let den: f64 = idx.iter().map(|&i| hessians[i]).sum();
                if den > 1e-12 {
                    num / den
                } else {
                    0.0
                }
            },
        )?;
        for i in 0..n {
            scores[i] += lr * tree.eval(x.row(i).as_slice().unwrap());
        }
        trees.push(tree);
    }

    Ok(TreeEnsemble {
        kind: TreeKind::GradientBoosting,
        risk_type: risk,
        trees,
        base_score,
        params: params.clone(),
        n_features: x.ncols(),
    })
}

/// Mean logistic loss after 0, 1, ..., n trees; entry 0 is the base score
/// alone. Used to inspect the GBT training curve.
pub fn staged_losses(ensemble: &TreeEnsemble, samples: &SampleSet, risk: RiskType) -> Result<Vec<f64>, TreeError> {
    let x = samples.anchor_matrix();
    let y = samples.targets(risk);
    let lr = ensemble.params.learning_rate.unwrap_or(0.1);
    let n = x.nrows();
    let mut scores = vec![ensemble.base_score; n];
    let logistic = |scores: &[f64]| -> f64 {
        scores
            .iter()
            .zip(&y)
            .map(|(s, yi)| {
                let p = sigmoid(*s).clamp(1e-12, 1.0 - 1e-12);
                -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n as f64
    };
    let mut losses = Vec::with_capacity(ensemble.trees.len() + 1);
    losses.push(logistic(&scores));
    for tree in &ensemble.trees {
        for i in 0..n {
            scores[i] += lr * tree.eval(x.row(i).as_slice().unwrap());
        }
        losses.push(logistic(&scores));
    }
    Ok(losses)
}

// ---------------------------------------------------------------------------
// Multi-label model set and checkpointing
// ---------------------------------------------------------------------------

/// One independent binary ensemble per risk type, presented as a single
/// multi-label model over the most recent window row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModelSet {
    pub kind: TreeKind,
    pub feature_names: Vec<String>,
    pub ensembles: Vec<TreeEnsemble>,
}

impl TreeModelSet {
    pub fn train(samples: &SampleSet, kind: TreeKind, params: &TreeParams) -> Result<Self, TreeError> {
        let mut ensembles = Vec::with_capacity(RiskType::COUNT);
        for risk in RiskType::ALL {
            let ensemble = match kind {
                TreeKind::RandomForest => rf_train(samples, risk, params)?,
                TreeKind::GradientBoosting => gbt_train(samples, risk, params)?,
            };
            ensembles.push(ensemble);
        }
        Ok(TreeModelSet {
            kind,
            feature_names: samples.feature_names.clone(),
            ensembles,
        })
    }
}

impl RiskModel for TreeModelSet {
    fn kind(&self) -> ModelKind {
        self.kind.model_kind()
    }

    fn score_window(&self, window: &Array2<f64>) -> Result<RiskScores, ScoreError> {
        if window.nrows() == 0 {
            return Err(ScoreError::EmptyWindow);
        }
        let row = window.row(window.nrows() - 1);
        let row = row.as_slice().expect("contiguous row");
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::NonFiniteInput);
        }
        let mut scores = [0.0; RiskType::COUNT];
        for (k, ensemble) in self.ensembles.iter().enumerate() {
            scores[k] = predict(ensemble, row).map_err(|e| match e {
                TreeError::WidthMismatch { expected, got } => {
                    ScoreError::WidthMismatch { expected, got }
                }
                _ => ScoreError::EmptyWindow,
            })?;
        }
        Ok(scores)
    }
}

#[derive(Serialize, Deserialize)]
struct TreeCheckpoint {
    version: u32,
    model: String,
    #[serde(flatten)]
    inner: TreeModelSet,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &TreeModelSet, path: &Path) -> Result<(), TreeError> {
    let ck = TreeCheckpoint {
        version: CHECKPOINT_VERSION,
        model: model.kind.model_kind().name().to_string(),
        inner: model.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ck).expect("serialize")).map_err(|e| TreeError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TreeModelSet, TreeError> {
    let body = std::fs::read_to_string(path).map_err(|e| TreeError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let ck: TreeCheckpoint = serde_json::from_str(&body).map_err(|e| TreeError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(TreeError::Malformed {
            path: path.display().to_string(),
            message: format!("unsupported checkpoint version {}", ck.version),
        });
    }
    Ok(ck.inner)
}
