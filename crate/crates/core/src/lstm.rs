//! From-scratch LSTM classifier.
//!
//! A single-layer LSTM over feature windows with a per-risk-type sigmoid
//! output head, trained with full backpropagation through time, mini-batch
//! Adam, gradient clipping, and early stopping. Everything is `f64` and
//! single-threaded so training is bit-for-bit reproducible.

use crate::preprocess::SampleSet;
use crate::types::{ModelKind, RiskModel, RiskScores, RiskSet, RiskType, ScoreError};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum LstmError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty sample set ({0})")]
    EmptySamples(&'static str),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
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
// Parameters and state
// ---------------------------------------------------------------------------

/// Gate weights over the concatenated `[h_{t-1}, x_t]` input, gate biases,
/// and the output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub hidden_size: usize,
    pub input_size: usize,
    pub w_f: Array2<f64>,
    pub w_i: Array2<f64>,
    pub w_o: Array2<f64>,
    pub w_c: Array2<f64>,
    pub b_f: Array1<f64>,
    pub b_i: Array1<f64>,
    pub b_o: Array1<f64>,
    pub b_c: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(hidden_size: usize, input_size: usize) -> Self {
        let width = hidden_size + input_size;
        LstmParams {
            hidden_size,
            input_size,
            w_f: Array2::zeros((hidden_size, width)),
            w_i: Array2::zeros((hidden_size, width)),
            w_o: Array2::zeros((hidden_size, width)),
            w_c: Array2::zeros((hidden_size, width)),
            b_f: Array1::zeros(hidden_size),
            b_i: Array1::zeros(hidden_size),
            b_o: Array1::zeros(hidden_size),
            b_c: Array1::zeros(hidden_size),
            w_out: Array2::zeros((RiskType::COUNT, hidden_size)),
            b_out: Array1::zeros(RiskType::COUNT),
        }
    }

    /// Uniform(-k, k) with k = 1/sqrt(hidden+input); forget-gate bias 1.
    pub fn init(hidden_size: usize, input_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(hidden_size, input_size);
        let k = 1.0 / ((hidden_size + input_size) as f64).sqrt();
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_o, &mut p.w_c] {
            w.iter_mut().for_each(|v| *v = rng.gen_range(-k..k));
        }
        p.b_f.fill(1.0);
        let k_out = 1.0 / (hidden_size as f64).sqrt();
        p.w_out.iter_mut().for_each(|v| *v = rng.gen_range(-k_out..k_out));
        p
    }

    fn flat(&self) -> [&[f64]; 10] {
        [
            self.w_f.as_slice().unwrap(),
            self.w_i.as_slice().unwrap(),
            self.w_o.as_slice().unwrap(),
            self.w_c.as_slice().unwrap(),
            self.b_f.as_slice().unwrap(),
            self.b_i.as_slice().unwrap(),
            self.b_o.as_slice().unwrap(),
            self.b_c.as_slice().unwrap(),
            self.w_out.as_slice().unwrap(),
            self.b_out.as_slice().unwrap(),
        ]
    }

    fn flat_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.w_f.as_slice_mut().unwrap(),
            self.w_i.as_slice_mut().unwrap(),
            self.w_o.as_slice_mut().unwrap(),
            self.w_c.as_slice_mut().unwrap(),
            self.b_f.as_slice_mut().unwrap(),
            self.b_i.as_slice_mut().unwrap(),
            self.b_o.as_slice_mut().unwrap(),
            self.b_c.as_slice_mut().unwrap(),
            self.w_out.as_slice_mut().unwrap(),
            self.b_out.as_slice_mut().unwrap(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for slice in self.flat_mut() {
            slice.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.flat()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Hidden and cell state of one LSTM step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            h: Array1::zeros(hidden_size),
            c: Array1::zeros(hidden_size),
        }
    }
}

/// Gate activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct GateCache {
    /// `[h_{t-1}, x_t]`
    pub z: Array1<f64>,
    pub f: Array1<f64>,
    pub i: Array1<f64>,
    pub o: Array1<f64>,
    /// tanh candidate
    pub g: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `target += d (outer) z`
fn accumulate_outer(target: &mut Array2<f64>, d: &Array1<f64>, z: &Array1<f64>) {
    let zs = z.as_slice().unwrap();
    for (r, dv) in d.iter().enumerate() {
        if *dv != 0.0 {
            let mut row = target.row_mut(r);
            let row = row.as_slice_mut().unwrap();
            for (c, zv) in zs.iter().enumerate() {
                row[c] += dv * zv;
            }
        }
    }
}

/// `dz += W^T d`
fn accumulate_t_dot(dz: &mut Array1<f64>, w: &Array2<f64>, d: &Array1<f64>) {
    let dzs = dz.as_slice_mut().unwrap();
    for (r, dv) in d.iter().enumerate() {
        if *dv != 0.0 {
            let row = w.row(r);
            let row = row.as_slice().unwrap();
            for (c, wv) in row.iter().enumerate() {
                dzs[c] += wv * dv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// One LSTM cell step:
/// f/i/o = sigmoid(W [h,x] + b), g = tanh(W_c [h,x] + b_c),
/// c_t = f . c_{t-1} + i . g, h_t = o . tanh(c_t).
pub fn cell_forward(
    params: &LstmParams,
    x: &Array1<f64>,
    prev: &LstmState,
) -> Result<(LstmState, GateCache), LstmError> {
    if x.len() != params.input_size {
        return Err(LstmError::ShapeMismatch(format!(
            "input width {} != {}",
            x.len(),
            params.input_size
        )));
    }
    if prev.h.len() != params.hidden_size || prev.c.len() != params.hidden_size {
        return Err(LstmError::ShapeMismatch("state width".to_string()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LstmError::NonFiniteInput);
    }
    let mut z = Array1::zeros(params.hidden_size + params.input_size);
    z.slice_mut(ndarray::s![..params.hidden_size]).assign(&prev.h);
    z.slice_mut(ndarray::s![params.hidden_size..]).assign(x);

    let f = (params.w_f.dot(&z) + &params.b_f).mapv(sigmoid);
    let i = (params.w_i.dot(&z) + &params.b_i).mapv(sigmoid);
    let o = (params.w_o.dot(&z) + &params.b_o).mapv(sigmoid);
    let g = (params.w_c.dot(&z) + &params.b_c).mapv(f64::tanh);
    let c = &f * &prev.c + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;

    let state = LstmState { h, c: c.clone() };
    let cache = GateCache {
        z,
        f,
        i,
        o,
        g,
        c_prev: prev.c.clone(),
        c,
        tanh_c,
    };
    Ok((state, cache))
}

/// Per-timestep caches plus the output-head results of one forward pass;
/// consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub caches: Vec<GateCache>,
    pub h_final: Array1<f64>,
    pub scores: RiskScores,
}

/// Runs the cell over a lookback x input sequence from a zero initial state
/// and maps the final hidden state through the sigmoid output head.
pub fn forward(params: &LstmParams, sequence: &Array2<f64>) -> Result<ForwardTrace, LstmError> {
    if sequence.nrows() == 0 {
        return Err(LstmError::EmptySequence);
    }
    if sequence.ncols() != params.input_size {
        return Err(LstmError::ShapeMismatch(format!(
            "sequence width {} != {}",
            sequence.ncols(),
            params.input_size
        )));
    }
    let mut state = LstmState::zeros(params.hidden_size);
    let mut caches = Vec::with_capacity(sequence.nrows());
    for row in sequence.outer_iter() {
        let (next, cache) = cell_forward(params, &row.to_owned(), &state)?;
        caches.push(cache);
        state = next;
    }
    let logits = params.w_out.dot(&state.h) + &params.b_out;
    let mut scores = [0.0; RiskType::COUNT];
    for (k, l) in logits.iter().enumerate() {
        scores[k] = sigmoid(*l);
    }
    Ok(ForwardTrace {
        caches,
        h_final: state.h,
        scores,
    })
}

const PROB_CLAMP: f64 = 1e-12;

/// Mean over risk types of binary cross-entropy, with probabilities clamped
/// `PROB_CLAMP` away from 0 and 1.
pub fn loss(scores: &RiskScores, labels: RiskSet) -> f64 {
    let y = labels.to_targets();
    let mut total = 0.0;
    for k in 0..RiskType::COUNT {
        let s = scores[k].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total += -(y[k] * s.ln() + (1.0 - y[k]) * (1.0 - s).ln());
    }
    total / RiskType::COUNT as f64
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Exact gradient of [`loss`] with respect to every parameter, accumulated
/// across timesteps, added into `grads`.
pub fn backward(
    params: &LstmParams,
    labels: RiskSet,
    trace: &ForwardTrace,
    grads: &mut LstmParams,
) -> Result<(), LstmError> {
    if trace.caches.is_empty() {
        return Err(LstmError::EmptySequence);
    }
    if grads.hidden_size != params.hidden_size || grads.input_size != params.input_size {
        return Err(LstmError::ShapeMismatch("gradient carrier".to_string()));
    }
    let hidden = params.hidden_size;
    let y = labels.to_targets();

    // Output head: dL/d logit_k = (s_k - y_k) / K.
    let mut du = Array1::zeros(RiskType::COUNT);
    for k in 0..RiskType::COUNT {
        du[k] = (trace.scores[k] - y[k]) / RiskType::COUNT as f64;
    }
    accumulate_outer(&mut grads.w_out, &du, &trace.h_final);
    grads.b_out += &du;

    let mut dh = Array1::zeros(hidden);
    accumulate_t_dot(&mut dh, &params.w_out, &du);
    let mut dc = Array1::<f64>::zeros(hidden);

    for cache in trace.caches.iter().rev() {
        // h = o . tanh(c)
        let do_ = &dh * &cache.tanh_c;
        let dc_total = &dc + &(&dh * &cache.o * cache.tanh_c.mapv(|t| 1.0 - t * t));
        let df = &dc_total * &cache.c_prev;
        let di = &dc_total * &cache.g;
        let dg = &dc_total * &cache.i;

        let df_pre = &df * &cache.f * cache.f.mapv(|v| 1.0 - v);
        let di_pre = &di * &cache.i * cache.i.mapv(|v| 1.0 - v);
        let do_pre = &do_ * &cache.o * cache.o.mapv(|v| 1.0 - v);
        let dg_pre = &dg * cache.g.mapv(|v| 1.0 - v * v);

        accumulate_outer(&mut grads.w_f, &df_pre, &cache.z);
        accumulate_outer(&mut grads.w_i, &di_pre, &cache.z);
        accumulate_outer(&mut grads.w_o, &do_pre, &cache.z);
        accumulate_outer(&mut grads.w_c, &dg_pre, &cache.z);
        grads.b_f += &df_pre;
        grads.b_i += &di_pre;
        grads.b_o += &do_pre;
        grads.b_c += &dg_pre;

        let mut dz = Array1::zeros(hidden + params.input_size);
        accumulate_t_dot(&mut dz, &params.w_f, &df_pre);
        accumulate_t_dot(&mut dz, &params.w_i, &di_pre);
        accumulate_t_dot(&mut dz, &params.w_o, &do_pre);
        accumulate_t_dot(&mut dz, &params.w_c, &dg_pre);

        dh = dz.slice(ndarray::s![..hidden]).to_owned();
        dc = &dc_total * &cache.f;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Training hyperparameters (64-batch Adam at 1e-3 over up to 100 epochs
/// with early stopping by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 128,
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LstmError> {
        let mut problems = Vec::new();
        if self.hidden_size == 0 {
            problems.push("hidden_size must be positive");
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            problems.push("learning_rate must be positive");
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be positive");
        }
        if self.patience >= self.max_epochs {
            problems.push("patience must be smaller than max_epochs");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            problems.push("betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            problems.push("epsilon must be positive");
        }
        if !(self.clip_norm > 0.0) {
            problems.push("clip_norm must be positive");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LstmError::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn mean_loss(params: &LstmParams, samples: &SampleSet) -> Result<f64, LstmError> {
    let mut total = 0.0;
    for (input, labels) in samples.inputs.iter().zip(&samples.labels) {
        let trace = forward(params, input)?;
        total += loss(&trace.scores, *labels);
    }
    Ok(total / samples.len() as f64)
}

/// Trains with seeded shuffling, returning the parameters of the best
/// validation epoch and the per-epoch loss history.
pub fn train(
    train_set: &SampleSet,
    cfg: &TrainConfig,
    validation: &SampleSet,
) -> Result<(LstmParams, TrainHistory), LstmError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(LstmError::EmptySamples("train"));
    }
    if validation.is_empty() {
        return Err(LstmError::EmptySamples("validation"));
    }
    let input_size = train_set.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = LstmParams::init(cfg.hidden_size, input_size, &mut rng);
    let mut adam_m = LstmParams::zeros(cfg.hidden_size, input_size);
    let mut adam_v = LstmParams::zeros(cfg.hidden_size, input_size);
    let mut step = 0u32;

    let mut history = TrainHistory::default();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.max_epochs {
        // Fisher-Yates over the sample order, seeded.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = LstmParams::zeros(cfg.hidden_size, input_size);
            let mut batch_loss = 0.0;
            for &s in batch {
                let trace = forward(&params, &train_set.inputs[s])?;
                batch_loss += loss(&trace.scores, train_set.labels[s]);
                backward(&params, train_set.labels[s], &trace, &mut grads)?;
            }
            let inv = 1.0 / batch.len() as f64;
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(LstmError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            grads.scale(inv);
            let norm = grads.l2_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            let p = params.flat_mut();
            let g = grads.flat();
            let m = adam_m.flat_mut();
            let v = adam_v.flat_mut();
            for (((ps, gs), ms), vs) in p.into_iter().zip(g).zip(m).zip(v) {
                for (((pv, gv), mv), vv) in
                    ps.iter_mut().zip(gs).zip(ms.iter_mut()).zip(vs.iter_mut())
                {
                    *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
                    *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
            epoch_loss += batch_loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches as f64;
        let val_loss = mean_loss(&params, validation)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best_params, history))
}

// ---------------------------------------------------------------------------
// Model wrapper and checkpointing
// ---------------------------------------------------------------------------

/// Trained LSTM plus the feature layout it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub params: LstmParams,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
}

impl RiskModel for LstmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
    }

    fn score_window(&self, window: &Array2<f64>) -> Result<RiskScores, ScoreError> {
        if window.ncols() != self.params.input_size {
            return Err(ScoreError::WidthMismatch {
                expected: self.params.input_size,
                got: window.ncols(),
            });
        }
        match forward(&self.params, window) {
            Ok(trace) => Ok(trace.scores),
            Err(LstmError::EmptySequence) => Err(ScoreError::EmptyWindow),
            Err(LstmError::NonFiniteInput) => Err(ScoreError::NonFiniteInput),
            Err(_) => Err(ScoreError::EmptyWindow),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LstmCheckpoint {
    version: u32,
    model: String,
    #[serde(flatten)]
    inner: LstmModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &LstmModel, path: &Path) -> Result<(), LstmError> {
    let ck = LstmCheckpoint {
        version: CHECKPOINT_VERSION,
        model: "lstm".to_string(),
        inner: model.clone(),
    };
    let body = serde_json::to_string(&ck).expect("serialize");
    std::fs::write(path, body).map_err(|e| LstmError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<LstmModel, LstmError> {
    let body = std::fs::read_to_string(path).map_err(|e| LstmError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let ck: LstmCheckpoint = serde_json::from_str(&body).map_err(|e| LstmError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if ck.version != CHECKPOINT_VERSION || ck.model != "lstm" {
        return Err(LstmError::Malformed {
            path: path.display().to_string(),
            message: format!(
                "unsupported checkpoint (version {}, model {})",
                ck.version, ck.model
            ),
        });
    }
    if !ck.inner.params.all_finite() {
        return Err(LstmError::Malformed {
            path: path.display().to_string(),
            message: "non-finite parameter".to_string(),
        });
    }
    Ok(ck.inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(v: &[f64]) -> Array1<f64> {
        Array1::from_vec(v.to_vec())
    }

    #[test]
    fn zero_params_fixpoint() {
        // All weights/biases zero: f=i=o=0.5, c=0.5*c0, h=0.5*tanh(0.5*c0).
        let p = LstmParams::zeros(3, 2);
        let c0 = arr(&[0.4, -0.2, 1.0]);
        let prev = LstmState {
            h: Array1::zeros(3),
            c: c0.clone(),
        };
        let (state, cache) = cell_forward(&p, &arr(&[5.0, -3.0]), &prev).unwrap();
        for k in 0..3 {
            assert_eq!(cache.f[k], 0.5);
            assert_eq!(cache.i[k], 0.5);
            assert_eq!(cache.o[k], 0.5);
            assert!((state.c[k] - 0.5 * c0[k]).abs() < 1e-15);
            assert!((state.h[k] - 0.5 * (0.5 * c0[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_reference_case() {
        // Scalar net, all weights 1, biases 0, x=1, prev=(0,0):
        // f=i=o=sigmoid(1), g=tanh(1), c=i*g, h=o*tanh(c).
        let mut p = LstmParams::zeros(1, 1);
        p.w_f.fill(1.0);
        p.w_i.fill(1.0);
        p.w_o.fill(1.0);
        p.w_c.fill(1.0);
        let prev = LstmState::zeros(1);
        let (state, cache) = cell_forward(&p, &arr(&[1.0]), &prev).unwrap();
        assert!((cache.f[0] - 0.7311).abs() < 1e-3);
        assert!((state.c[0] - 0.5568).abs() < 1e-3);
        assert!((state.h[0] - 0.3696).abs() < 1e-3);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        // b_f = +20 drives f to 1; zero weights make g = tanh(0) = 0, so the
        // input path contributes nothing and c passes through.
        let mut p = LstmParams::zeros(2, 2);
        p.b_f.fill(20.0);
        let c0 = arr(&[0.7, -0.3]);
        let prev = LstmState {
            h: Array1::zeros(2),
            c: c0.clone(),
        };
        let (state, _) = cell_forward(&p, &arr(&[0.0, 0.0]), &prev).unwrap();
        for k in 0..2 {
            assert!((state.c[k] - c0[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_params_forward_scores_half() {
        let p = LstmParams::zeros(4, 3);
        let seq = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let trace = forward(&p, &seq).unwrap();
        assert_eq!(trace.scores, [0.5; 4]);
    }

    #[test]
    fn probabilities_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut p = LstmParams::init(3, 2, &mut rng);
            p.scale(rng.gen_range(0.5..20.0));
            let seq = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-5.0..5.0));
            let trace = forward(&p, &seq).unwrap();
            for s in trace.scores {
                assert!(s > 0.0 && s < 1.0);
            }
        }
    }

    #[test]
    fn length_one_sequence_equals_cell_plus_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LstmParams::init(4, 3, &mut rng);
        let x = arr(&[0.3, -0.8, 1.2]);
        let (state, _) = cell_forward(&p, &x, &LstmState::zeros(4)).unwrap();
        let logits = p.w_out.dot(&state.h) + &p.b_out;
        let seq = x.clone().insert_axis(ndarray::Axis(0));
        let trace = forward(&p, &seq).unwrap();
        for k in 0..RiskType::COUNT {
            assert!((trace.scores[k] - sigmoid(logits[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let p = LstmParams::zeros(2, 2);
        let seq = Array2::zeros((0, 2));
        assert!(matches!(forward(&p, &seq), Err(LstmError::EmptySequence)));
    }

    #[test]
    fn loss_at_half_is_ln2() {
        let scores = [0.5; 4];
        let l = loss(&scores, RiskSet::empty().with(RiskType::Liquidity));
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_hand_case() {
        // Risk-type slots 0 and 1 carry (0.9, 0.1) with labels (1, 0); the
        // remaining slots are perfect so they contribute 0.
        let scores = [0.9, 0.1, 1.0, 1.0];
        let labels = RiskSet::empty()
            .with(RiskType::MarketCrash)
            .with(RiskType::Operational)
            .with(RiskType::Volatility);
        let l = loss(&scores, labels);
        let expected = (-(0.9f64.ln()) - (0.9f64.ln())) / 4.0;
        assert!((l - expected).abs() < 1e-9, "{l} vs {expected}");
    }

    #[test]
    fn perfect_scores_zero_loss() {
        let scores = [1.0, 0.0, 0.0, 0.0];
        let l = loss(&scores, RiskSet::empty().with(RiskType::MarketCrash));
        assert!(l.abs() < 1e-10);
    }

    /// Central finite differences over every parameter; the independent
    /// oracle for the analytic BPTT gradient.
    fn finite_difference_check(hidden: usize, input: usize, len: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = LstmParams::init(hidden, input, &mut rng);
        let seq = Array2::from_shape_fn((len, input), |_| rng.gen_range(-1.0..1.0));
        let labels: RiskSet = RiskType::ALL
            .into_iter()
            .filter(|_| rng.gen_bool(0.5))
            .collect();

        let trace = forward(&params, &seq).unwrap();
        let mut grads = LstmParams::zeros(hidden, input);
        backward(&params, labels, &trace, &mut grads).unwrap();

        let step = 1e-5;
        let mut max_rel = 0.0f64;
        let n_arrays = params.flat().len();
        for a in 0..n_arrays {
            let len_a = params.flat()[a].len();
            for idx in 0..len_a {
                let mut plus = params.clone();
                plus.flat_mut()[a][idx] += step;
                let lp = loss(&forward(&plus, &seq).unwrap().scores, labels);
                let mut minus = params.clone();
                minus.flat_mut()[a][idx] -= step;
                let lm = loss(&forward(&minus, &seq).unwrap().scores, labels);
                let numeric = (lp - lm) / (2.0 * step);
                let analytic = grads.flat()[a][idx];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                max_rel = max_rel.max((numeric - analytic).abs() / denom);
            }
        }
        max_rel
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let max_rel = finite_difference_check(4, 3, 5, 1234);
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = LstmParams::init(3, 2, &mut rng);
        let seq = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        let labels = RiskSet::empty().with(RiskType::MarketCrash);
        let trace = forward(&params, &seq).unwrap();

        let mut once = LstmParams::zeros(3, 2);
        backward(&params, labels, &trace, &mut once).unwrap();
        let mut twice = LstmParams::zeros(3, 2);
        backward(&params, labels, &trace, &mut twice).unwrap();
        backward(&params, labels, &trace, &mut twice).unwrap();

        let mut doubled = once.clone();
        doubled.scale(2.0);
        for (a, b) in doubled.flat().iter().zip(twice.flat().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn toy_samples(n: usize, seed: u64) -> SampleSet {
        // Planted signal: the label follows the sign of feature 0's level.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut anchors = Vec::new();
        for s in 0..n {
            let positive = rng.gen_bool(0.5);
            let shift = if positive { 1.0 } else { -1.0 };
            let input = Array2::from_shape_fn((6, 3), |(_, j)| {
                let noise = rng.gen_range(-0.3..0.3);
                if j == 0 {
                    shift + noise
                } else {
                    noise
                }
            });
            inputs.push(input);
            let mut l = RiskSet::empty();
            if positive {
                l.insert(RiskType::MarketCrash);
            }
            labels.push(l);
            anchors.push(
                chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
                    + chrono::Duration::days(s as i64),
            );
        }
        SampleSet {
            feature_names: vec!["f0".into(), "f1".into(), "f2".into()],
            lookback: 6,
            horizon: 1,
            inputs,
            labels,
            anchors,
        }
    }

    #[test]
    fn training_is_deterministic() {
        let train_set = toy_samples(40, 9);
        let val_set = toy_samples(16, 10);
        let cfg = TrainConfig {
            hidden_size: 4,
            batch_size: 8,
            max_epochs: 5,
            patience: 4,
            ..TrainConfig::default()
        };
        let (p1, h1) = train(&train_set, &cfg, &val_set).unwrap();
        let (p2, h2) = train(&train_set, &cfg, &val_set).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn training_reduces_validation_loss_on_planted_signal() {
        let train_set = toy_samples(120, 21);
        let val_set = toy_samples(40, 22);
        let cfg = TrainConfig {
            hidden_size: 8,
            batch_size: 16,
            learning_rate: 0.01,
            max_epochs: 30,
            patience: 29,
            ..TrainConfig::default()
        };
        let (_, history) = train(&train_set, &cfg, &val_set).unwrap();
        let first = history.epochs.first().unwrap().val_loss;
        let best = history.epochs[history.best_epoch].val_loss;
        assert!(
            best < first,
            "validation loss did not improve: first {first}, best {best}"
        );
    }

    #[test]
    fn patience_zero_stops_at_first_plateau() {
        let train_set = toy_samples(20, 5);
        // Validation labels flipped relative to the planted signal: fitting
        // the train set strictly worsens validation loss, so the first
        // post-improvement epoch is a guaranteed plateau.
        let mut val_set = toy_samples(8, 6);
        for l in &mut val_set.labels {
            *l = if l.contains(RiskType::MarketCrash) {
                RiskSet::empty()
            } else {
                RiskSet::empty().with(RiskType::MarketCrash)
            };
        }
        let cfg = TrainConfig {
            hidden_size: 3,
            batch_size: 4,
            learning_rate: 0.1,
            max_epochs: 50,
            patience: 0,
            ..TrainConfig::default()
        };
        let (_, history) = train(&train_set, &cfg, &val_set).unwrap();
        assert!(history.stopped_early, "{:?}", history.epochs);
        // Every epoch before the last strictly improved; the last did not.
        let losses: Vec<f64> = history.epochs.iter().map(|e| e.val_loss).collect();
        let mut best = f64::INFINITY;
        for (i, l) in losses.iter().enumerate() {
            if i + 1 < losses.len() {
                assert!(*l < best, "epoch {i} should have improved: {losses:?}");
                best = *l;
            } else {
                assert!(*l >= best, "last epoch improved but training stopped: {losses:?}");
            }
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let empty = SampleSet {
            feature_names: vec!["a".into()],
            lookback: 1,
            horizon: 1,
            inputs: vec![],
            labels: vec![],
            anchors: vec![],
        };
        let ok = toy_samples(4, 1);
        assert!(matches!(
            train(&empty, &TrainConfig::default(), &ok),
            Err(LstmError::EmptySamples("train"))
        ));
        assert!(matches!(
            train(&ok, &TrainConfig::default(), &empty),
            Err(LstmError::EmptySamples("validation"))
        ));
    }

    #[test]
    fn checkpoint_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = LstmModel {
            params: LstmParams::init(5, 3, &mut rng),
            config: TrainConfig::default(),
            feature_names: vec!["a".into(), "b".into(), "c".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lstm.json");
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn score_window_checks_width() {
        let model = LstmModel {
            params: LstmParams::zeros(2, 3),
            config: TrainConfig::default(),
            feature_names: vec![],
        };
        let window = Array2::zeros((4, 2));
        assert!(matches!(
            model.score_window(&window),
            Err(ScoreError::WidthMismatch {
                expected: 3,
                got: 2
            })
        ));
    }
}
