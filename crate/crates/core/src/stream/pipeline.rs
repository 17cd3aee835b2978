//! The scoring pipeline: ingest (dedup) -> windowed feature rows -> model
//! inference -> alert gating, with per-stage throughput and ingest-to-alert
//! latency percentiles.
//!
//! Events are partitioned by key across workers; per-key state is owned by
//! exactly one worker, and final outputs are canonically sorted, so a run
//! with N workers is identical to a run with one.

use super::window::{WindowEmission, WindowedAggregator};
use super::{StreamError, StreamEvent, Watermark, WatermarkTracker, WindowId, WindowSpec};
use crate::alert::{optimal_threshold, observe_scores, AlertEvent, AlertGate, BayesModel, CostSpec};
use crate::types::{RiskModel, RiskScores, ScoreError};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet, VecDeque};
use std::time::Instant;

/// Pipeline topology settings.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Feature window (lateness is ignored by the scoring stages; scores are
    /// computed from primary firings only).
    pub window: WindowSpec,
    /// Payload fields whose per-window means form the feature row.
    pub feature_fields: Vec<String>,
    /// Fired windows per key stacked into one model input.
    pub lookback: usize,
    /// Bounded out-of-orderness watermark delay.
    pub out_of_order_ms: i64,
    pub cost: CostSpec,
}

/// Model output for one (key, window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedScore {
    pub key: String,
    pub timestamp_ms: i64,
    pub scores: RiskScores,
    pub source_window: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub name: String,
    pub items: u64,
    pub wall_ms: f64,
    pub throughput_per_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub events_in: u64,
    pub duplicates_dropped: u64,
    pub late_events_dropped: u64,
    pub windows_fired: u64,
    pub scores_emitted: u64,
    pub alerts_emitted: u64,
    pub stages: Vec<StageMetrics>,
    /// Ingest-to-alert latency percentiles over emitted alerts.
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Joined per-window feature rows: (key, window, per-field means).
    pub feature_rows: Vec<(String, WindowId, Vec<f64>)>,
    pub scores: Vec<KeyedScore>,
    pub alerts: Vec<AlertEvent>,
    pub metrics: PipelineMetrics,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

pub(crate) fn latency_stats(samples: &mut Vec<f64>) -> LatencyStats {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    LatencyStats {
        p50_ms: percentile(samples, 0.50),
        p95_ms: percentile(samples, 0.95),
        p99_ms: percentile(samples, 0.99),
    }
}

/// Canonical duplicate identity: key, time, and exact payload bits.
fn dedup_key(e: &StreamEvent) -> (String, i64, Vec<(String, u64)>) {
    (
        e.key.clone(),
        e.event_time,
        e.payload.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect(),
    )
}

struct WorkerState<'a> {
    cfg: &'a PipelineConfig,
    model: &'a dyn RiskModel,
    bayes: &'a BayesModel,
    threshold: f64,
    seen: HashSet<(String, i64, Vec<(String, u64)>)>,
    aggregators: Vec<WindowedAggregator>,
    tracker: WatermarkTracker,
    buffers: BTreeMap<String, VecDeque<(WindowId, Vec<f64>)>>,
    gates: BTreeMap<String, AlertGate>,
    ingest_marks: BTreeMap<(String, WindowId), Instant>,
    feature_rows: Vec<(String, WindowId, Vec<f64>)>,
    scores: Vec<KeyedScore>,
    alerts: Vec<AlertEvent>,
    latencies: Vec<f64>,
    metrics: PipelineMetrics,
    ingest_wall: f64,
    feature_wall: f64,
    score_wall: f64,
    alert_wall: f64,
}

impl<'a> WorkerState<'a> {
    fn new(
        cfg: &'a PipelineConfig,
        model: &'a dyn RiskModel,
        bayes: &'a BayesModel,
        threshold: f64,
    ) -> Result<Self, StreamError> {
        let aggregators = cfg
            .feature_fields
            .iter()
            .map(|f| WindowedAggregator::new(cfg.window.clone(), f.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(WorkerState {
            cfg,
            model,
            bayes,
            threshold,
            seen: HashSet::new(),
            aggregators,
            tracker: WatermarkTracker::new(1, cfg.out_of_order_ms),
            buffers: BTreeMap::new(),
            gates: BTreeMap::new(),
            ingest_marks: BTreeMap::new(),
            feature_rows: Vec::new(),
            scores: Vec::new(),
            alerts: Vec::new(),
            latencies: Vec::new(),
            metrics: PipelineMetrics::default(),
            ingest_wall: 0.0,
            feature_wall: 0.0,
            score_wall: 0.0,
            alert_wall: 0.0,
        })
    }

    fn on_event(&mut self, event: &StreamEvent) -> Result<(), StreamError> {
        let t0 = Instant::now();
        if !self.seen.insert(dedup_key(event)) {
            self.metrics.duplicates_dropped += 1;
            self.ingest_wall += t0.elapsed().as_secs_f64() * 1e3;
            return Ok(());
        }
        self.metrics.events_in += 1;
        for agg in &mut self.aggregators {
            // Lateness is zero for the scoring pipeline, so no revisions.
            let _ = agg.on_event(event);
        }
        for window in super::assign_windows(event.event_time, &self.cfg.window) {
            self.ingest_marks.insert((event.key.clone(), window), t0);
        }
        self.ingest_wall += t0.elapsed().as_secs_f64() * 1e3;

        let wm = self.tracker.observe(0, event.event_time);
        self.advance(wm)
    }

    fn advance(&mut self, wm: Watermark) -> Result<(), StreamError> {
        let t0 = Instant::now();
        let mut joined: BTreeMap<(String, WindowId), Vec<f64>> = BTreeMap::new();
        for (field_idx, agg) in self.aggregators.iter_mut().enumerate() {
            let emissions: Vec<WindowEmission> = agg.advance(wm)?;
            for e in emissions {
                let row = joined
                    .entry((e.key, e.window))
                    .or_insert_with(|| vec![0.0; self.cfg.feature_fields.len()]);
                row[field_idx] = e.aggregate.mean;
            }
        }
        // Deterministic processing order: window end, then key, then start.
        let mut rows: Vec<((String, WindowId), Vec<f64>)> = joined.into_iter().collect();
        rows.sort_by(|a, b| {
            let ka = (a.0 .1 .1, &a.0 .0, a.0 .1 .0);
            let kb = (b.0 .1 .1, &b.0 .0, b.0 .1 .0);
            ka.cmp(&kb)
        });
        self.feature_wall += t0.elapsed().as_secs_f64() * 1e3;

        for ((key, window), row) in rows {
            self.metrics.windows_fired += 1;
            self.feature_rows.push((key.clone(), window, row.clone()));
            let buffer = self.buffers.entry(key.clone()).or_default();
            buffer.push_back((window, row));
            if buffer.len() > self.cfg.lookback {
                buffer.pop_front();
            }
            if buffer.len() == self.cfg.lookback {
                let t1 = Instant::now();
                let mut input = Array2::zeros((self.cfg.lookback, self.cfg.feature_fields.len()));
                for (r, (_, values)) in buffer.iter().enumerate() {
                    for (c, v) in values.iter().enumerate() {
                        input[(r, c)] = *v;
                    }
                }
                let scores = self
                    .model
                    .score_window(&input)
                    .map_err(|e| StreamError::Model(e.to_string()))?;
                let source_window = format!("{key}:{}-{}", window.0, window.1);
                self.scores.push(KeyedScore {
                    key: key.clone(),
                    timestamp_ms: window.1,
                    scores,
                    source_window: source_window.clone(),
                });
                self.metrics.scores_emitted += 1;
                self.score_wall += t1.elapsed().as_secs_f64() * 1e3;

                let t2 = Instant::now();
                let threshold = self.threshold;
                let gate = self
                    .gates
                    .entry(key.clone())
                    .or_insert_with(|| AlertGate::new(threshold));
                let alerts = observe_scores(gate, self.bayes, window.1, &scores, &source_window)?;
                if !alerts.is_empty() {
                    if let Some(mark) = self.ingest_marks.get(&(key.clone(), window)) {
                        self.latencies.push(mark.elapsed().as_secs_f64() * 1e3);
                    }
                }
                self.metrics.alerts_emitted += alerts.len() as u64;
                self.alerts.extend(alerts);
                self.alert_wall += t2.elapsed().as_secs_f64() * 1e3;
            }
            self.ingest_marks.remove(&(key, window));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<WorkerOutput, StreamError> {
        self.advance(Watermark(i64::MAX))?;
        self.metrics.late_events_dropped = self.aggregators.iter().map(|a| a.dropped_events()).max().unwrap_or(0);
        Ok(WorkerOutput {
            feature_rows: self.feature_rows,
            scores: self.scores,
            alerts: self.alerts,
            latencies: self.latencies,
            metrics: self.metrics,
            walls: [self.ingest_wall, self.feature_wall, self.score_wall, self.alert_wall],
        })
    }
}

struct WorkerOutput {
    feature_rows: Vec<(String, WindowId, Vec<f64>)>,
    scores: Vec<KeyedScore>,
    alerts: Vec<AlertEvent>,
    latencies: Vec<f64>,
    metrics: PipelineMetrics,
    walls: [f64; 4],
}

/// Replays a bounded event stream through ingest -> windowed features ->
/// model scoring -> alerting. `n_workers` > 1 partitions keys round-robin
/// over worker threads; outputs are identical for any worker count.
pub fn run_pipeline(
    events: &[StreamEvent],
    model: &dyn RiskModel,
    bayes: &BayesModel,
    cfg: &PipelineConfig,
    n_workers: usize,
) -> Result<PipelineOutput, StreamError> {
    cfg.window.validate()?;
    if cfg.lookback == 0 || cfg.feature_fields.is_empty() {
        return Err(StreamError::InvalidWindowSpec(
            "pipeline needs lookback >= 1 and at least one feature field".to_string(),
        ));
    }
    // Fail fast on model/feature width disagreement.
    let probe = Array2::zeros((cfg.lookback, cfg.feature_fields.len()));
    if let Err(ScoreError::WidthMismatch { expected, got }) = model.score_window(&probe) {
        return Err(StreamError::WidthMismatch { expected, got });
    }
    let threshold = optimal_threshold(&cfg.cost)?;

    let n_workers = n_workers.max(1);
    // Round-robin key partitioning over the sorted key set.
    let mut keys: Vec<&str> = events.iter().map(|e| e.key.as_str()).collect();
    keys.sort_unstable();
    keys.dedup();
    let assignment: BTreeMap<&str, usize> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (*k, i % n_workers))
        .collect();

    let mut outputs: Vec<WorkerOutput> = Vec::with_capacity(n_workers);
    if n_workers == 1 {
        let mut worker = WorkerState::new(cfg, model, bayes, threshold)?;
        for e in events {
            worker.on_event(e)?;
        }
        outputs.push(worker.finish()?);
    } else {
        let results: Vec<Result<WorkerOutput, StreamError>> = std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(n_workers);
            for w in 0..n_workers {
                let assignment = &assignment;
                let handle = scope.spawn(move || {
                    let mut worker = WorkerState::new(cfg, model, bayes, threshold)?;
                    for e in events {
                        if assignment[e.key.as_str()] == w {
                            worker.on_event(e)?;
                        }
                    }
                    worker.finish()
                });
                handles.push(handle);
            }
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for r in results {
            outputs.push(r?);
        }
    }

    // Canonical merge.
    let mut feature_rows = Vec::new();
    let mut scores = Vec::new();
    let mut alerts = Vec::new();
    let mut latencies = Vec::new();
    let mut metrics = PipelineMetrics::default();
    let mut walls = [0.0f64; 4];
    for out in outputs {
        feature_rows.extend(out.feature_rows);
        scores.extend(out.scores);
        alerts.extend(out.alerts);
        latencies.extend(out.latencies);
        metrics.events_in += out.metrics.events_in;
        metrics.duplicates_dropped += out.metrics.duplicates_dropped;
        metrics.late_events_dropped += out.metrics.late_events_dropped;
        metrics.windows_fired += out.metrics.windows_fired;
        metrics.scores_emitted += out.metrics.scores_emitted;
        metrics.alerts_emitted += out.metrics.alerts_emitted;
        for (w, add) in walls.iter_mut().zip(out.walls) {
            *w += add;
        }
    }
    feature_rows.sort_by(|a, b| (a.1 .1, &a.0, a.1 .0).cmp(&(b.1 .1, &b.0, b.1 .0)));
    scores.sort_by(|a, b| (a.timestamp_ms, &a.key).cmp(&(b.timestamp_ms, &b.key)));
    alerts.sort_by(|a, b| {
        (a.timestamp_ms, &a.source_window, a.risk_type.index()).cmp(&(
            b.timestamp_ms,
            &b.source_window,
            b.risk_type.index(),
        ))
    });

    let stage_names = ["ingest", "features", "scoring", "alerting"];
    let stage_items = [
        metrics.events_in + metrics.duplicates_dropped,
        metrics.windows_fired,
        metrics.scores_emitted,
        metrics.scores_emitted,
    ];
    metrics.stages = stage_names
        .iter()
        .zip(stage_items)
        .zip(walls)
        .map(|((name, items), wall_ms)| StageMetrics {
            name: name.to_string(),
            items,
            wall_ms,
            throughput_per_sec: if wall_ms > 0.0 {
                items as f64 / (wall_ms / 1e3)
            } else {
                0.0
            },
        })
        .collect();
    metrics.latency = latency_stats(&mut latencies);

    Ok(PipelineOutput {
        feature_rows,
        scores,
        alerts,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alert::{calibrate, RiskCalibration};
    use crate::types::{ModelKind, RiskType};

    /// Deterministic toy model: per-type score is a squashed weighted mean
    /// of the window.
    struct ToyModel {
        width: usize,
    }

    impl RiskModel for ToyModel {
        fn kind(&self) -> ModelKind {
            ModelKind::GradientBoosting
        }

        fn score_window(&self, window: &Array2<f64>) -> Result<RiskScores, ScoreError> {
            if window.ncols() != self.width {
                return Err(ScoreError::WidthMismatch {
                    expected: self.width,
                    got: window.ncols(),
                });
            }
            let mean = window.sum() / window.len() as f64;
            let mut scores = [0.0; RiskType::COUNT];
            for (k, s) in scores.iter_mut().enumerate() {
                *s = 1.0 / (1.0 + (-(mean + k as f64 * 0.1)).exp());
            }
            Ok(scores)
        }
    }

    fn toy_bayes() -> BayesModel {
        // Calibrated so that higher scores give higher posteriors.
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let s = i as f64 / 200.0;
            scores.push(s);
            labels.push(s > 0.6);
        }
        let cal: RiskCalibration = calibrate(&scores, &labels, 10).unwrap();
        BayesModel {
            per_type: RiskType::ALL.into_iter().map(|r| (r, cal.clone())).collect(),
        }
    }

    fn config() -> PipelineConfig {
        PipelineConfig {
            window: WindowSpec::tumbling(1000),
            feature_fields: vec!["v".to_string()],
            lookback: 3,
            out_of_order_ms: 2000,
            cost: CostSpec::default(),
        }
    }

    fn keyed_events(n_per_key: usize, keys: &[&str]) -> Vec<StreamEvent> {
        let mut events = Vec::new();
        for i in 0..n_per_key {
            for (k, key) in keys.iter().enumerate() {
                let v = if i > n_per_key / 2 { 2.0 } else { -1.0 } + k as f64 * 0.1;
                events.push(StreamEvent::new(i as i64 * 1000 + 100, *key).with("v", v));
            }
        }
        events
    }

    #[test]
    fn zero_events_zero_outputs() {
        let out = run_pipeline(&[], &ToyModel { width: 1 }, &toy_bayes(), &config(), 1).unwrap();
        assert!(out.scores.is_empty());
        assert!(out.alerts.is_empty());
        assert_eq!(out.metrics.events_in, 0);
        assert_eq!(out.metrics.windows_fired, 0);
    }

    #[test]
    fn duplicates_are_dropped() {
        let mut events = keyed_events(8, &["a"]);
        let dup = events[3].clone();
        events.insert(4, dup);
        let base = run_pipeline(&keyed_events(8, &["a"]), &ToyModel { width: 1 }, &toy_bayes(), &config(), 1).unwrap();
        let with_dup = run_pipeline(&events, &ToyModel { width: 1 }, &toy_bayes(), &config(), 1).unwrap();
        assert_eq!(with_dup.metrics.duplicates_dropped, 1);
        assert_eq!(base.feature_rows, with_dup.feature_rows);
        assert_eq!(base.scores, with_dup.scores);
        assert_eq!(base.alerts, with_dup.alerts);
    }

    #[test]
    fn width_mismatch_fails_fast() {
        let err = run_pipeline(&[], &ToyModel { width: 7 }, &toy_bayes(), &config(), 1).unwrap_err();
        assert!(matches!(err, StreamError::WidthMismatch { expected: 7, got: 1 }));
    }

    #[test]
    fn one_worker_equals_many() {
        let events = keyed_events(12, &["a", "b", "c", "d", "e"]);
        let model = ToyModel { width: 1 };
        let bayes = toy_bayes();
        let one = run_pipeline(&events, &model, &bayes, &config(), 1).unwrap();
        for workers in [2, 3, 5] {
            let many = run_pipeline(&events, &model, &bayes, &config(), workers).unwrap();
            assert_eq!(one.feature_rows, many.feature_rows, "workers={workers}");
            assert_eq!(one.scores, many.scores, "workers={workers}");
            assert_eq!(one.alerts, many.alerts, "workers={workers}");
        }
    }

    #[test]
    fn alerts_fire_on_rising_scores() {
        let events = keyed_events(12, &["a"]);
        let out = run_pipeline(&events, &ToyModel { width: 1 }, &toy_bayes(), &config(), 1).unwrap();
        assert!(out.metrics.scores_emitted > 0);
        assert!(!out.alerts.is_empty(), "expected alerts on the rising tail");
        assert!(out
            .alerts
            .windows(2)
            .all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
    }
}
