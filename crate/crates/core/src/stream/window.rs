//! Window assignment, watermark tracking, and incrementally aggregated
//! windows with exactly-once primary firing and allowed lateness.

use super::{StreamError, StreamEvent, Watermark, WindowId, WindowKind, WindowSpec};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Windows covering an event time. Tumbling: exactly one, aligned to
/// `floor(t/size)*size`. Sliding: every slide-aligned window containing `t`.
pub fn assign_windows(event_time: i64, spec: &WindowSpec) -> Vec<WindowId> {
    match spec.kind {
        WindowKind::Tumbling => {
            let start = event_time.div_euclid(spec.size_ms) * spec.size_ms;
            vec![(start, start + spec.size_ms)]
        }
        WindowKind::Sliding => {
            let mut windows = Vec::new();
            let last_start = event_time.div_euclid(spec.slide_ms) * spec.slide_ms;
            let mut start = last_start;
            while start + spec.size_ms > event_time {
                windows.push((start, start + spec.size_ms));
                start -= spec.slide_ms;
            }
            windows.reverse();
            windows
        }
    }
}

/// Bounded-out-of-orderness watermark over one or more sources: the minimum
/// over sources of (max observed event time - bound), clamped monotone.
#[derive(Debug, Clone)]
pub struct WatermarkTracker {
    bound_ms: i64,
    max_times: Vec<Option<i64>>,
    current: i64,
}

impl WatermarkTracker {
    pub fn new(n_sources: usize, bound_ms: i64) -> Self {
        assert!(n_sources >= 1, "at least one source");
        WatermarkTracker {
            bound_ms,
            max_times: vec![None; n_sources],
            current: i64::MIN,
        }
    }

    /// Observes an event time on a source and returns the (possibly
    /// unchanged) watermark.
    pub fn observe(&mut self, source: usize, event_time: i64) -> Watermark {
        let slot = &mut self.max_times[source];
        *slot = Some(slot.map_or(event_time, |m| m.max(event_time)));
        if self.max_times.iter().all(|m| m.is_some()) {
            let min_max = self.max_times.iter().map(|m| m.unwrap()).min().unwrap();
            self.current = self.current.max(min_max.saturating_sub(self.bound_ms));
        }
        Watermark(self.current)
    }

    pub fn current(&self) -> Watermark {
        Watermark(self.current)
    }
}

/// Streaming aggregate of one window: count, sum, mean, min, max, and
/// sample variance via Welford's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub count: u64,
    pub sum: f64,
    pub mean: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    count: u64,
    sum: f64,
    mean: f64,
    m2: f64,
    min: Option<f64>,
    max: Option<f64>,
}

impl Accumulator {
    fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
        self.min = Some(self.min.map_or(v, |m| m.min(v)));
        self.max = Some(self.max.map_or(v, |m| m.max(v)));
    }

    fn result(&self) -> AggregateResult {
        AggregateResult {
            count: self.count,
            sum: self.sum,
            mean: if self.count > 0 { self.mean } else { 0.0 },
            min: self.min,
            max: self.max,
            variance: if self.count > 1 {
                self.m2 / (self.count - 1) as f64
            } else {
                0.0
            },
        }
    }
}

/// One (possibly revised) window result.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEmission {
    pub key: String,
    pub window: WindowId,
    pub aggregate: AggregateResult,
    /// True for revisions triggered by events inside the lateness grace.
    pub late_update: bool,
}

/// Event-time windowed aggregation of one payload field, keyed by event key.
///
/// A window fires its primary emission exactly once, when the watermark
/// passes its end. Events arriving after the firing but within
/// `allowed_lateness_ms` yield an immediate revised emission flagged
/// `late_update`; events beyond the grace are counted as dropped.
#[derive(Debug)]
pub struct WindowedAggregator {
    spec: WindowSpec,
    field: String,
    emit_empty: bool,
    state: BTreeMap<(String, WindowId), Accumulator>,
    fired: BTreeSet<(String, WindowId)>,
    watermark: i64,
    dropped: u64,
}

impl WindowedAggregator {
    pub fn new(spec: WindowSpec, field: impl Into<String>) -> Result<Self, StreamError> {
        spec.validate()?;
        Ok(WindowedAggregator {
            spec,
            field: field.into(),
            emit_empty: false,
            state: BTreeMap::new(),
            fired: BTreeSet::new(),
            watermark: i64::MIN,
            dropped: 0,
        })
    }

    /// When set, windows registered via [`WindowedAggregator::ensure_window`]
    /// fire even with zero events; the default is to stay silent.
    pub fn emit_empty(mut self, yes: bool) -> Self {
        self.emit_empty = yes;
        self
    }

    pub fn dropped_events(&self) -> u64 {
        self.dropped
    }

    pub fn watermark(&self) -> Watermark {
        Watermark(self.watermark)
    }

    /// Registers a window without any event (for sources that know their
    /// window set up front).
    pub fn ensure_window(&mut self, key: &str, window: WindowId) {
        self.state
            .entry((key.to_string(), window))
            .or_default();
    }

    /// Ingests one event; returns immediate late-update revisions when the
    /// event lands in an already-fired window still within grace.
    pub fn on_event(&mut self, event: &StreamEvent) -> Vec<WindowEmission> {
        let Some(value) = event.payload.get(&self.field).copied() else {
            return Vec::new();
        };
        let mut revisions = Vec::new();
        for window in assign_windows(event.event_time, &self.spec) {
            let grace_end = window.1.saturating_add(self.spec.allowed_lateness_ms);
            if self.watermark >= grace_end {
                self.dropped += 1;
                continue;
            }
            let entry = self
                .state
                .entry((event.key.clone(), window))
                .or_default();
            entry.push(value);
            if self.fired.contains(&(event.key.clone(), window)) {
                revisions.push(WindowEmission {
                    key: event.key.clone(),
                    window,
                    aggregate: entry.result(),
                    late_update: true,
                });
            }
        }
        revisions
    }

    /// Advances the watermark, firing every unfired window whose end it
    /// passed (sorted by end, then key) and garbage-collecting windows whose
    /// lateness grace expired. Regressions are a hard failure.
    pub fn advance(&mut self, wm: Watermark) -> Result<Vec<WindowEmission>, StreamError> {
        if wm.0 < self.watermark {
            return Err(StreamError::WatermarkRegression {
                current: self.watermark,
                attempted: wm.0,
            });
        }
        self.watermark = wm.0;
        let mut due: Vec<(String, WindowId)> = self
            .state
            .keys()
            .filter(|(key, window)| {
                window.1 <= self.watermark && !self.fired.contains(&(key.clone(), *window))
            })
            .cloned()
            .collect();
        due.sort_by(|a, b| (a.1 .1, &a.0, a.1 .0).cmp(&(b.1 .1, &b.0, b.1 .0)));

        let mut emissions = Vec::new();
        for (key, window) in due {
            let acc = &self.state[&(key.clone(), window)];
            if acc.count == 0 && !self.emit_empty {
                self.fired.insert((key, window));
                continue;
            }
            emissions.push(WindowEmission {
                key: key.clone(),
                window,
                aggregate: acc.result(),
                late_update: false,
            });
            self.fired.insert((key, window));
        }

        // Drop state whose grace has fully expired.
        let lateness = self.spec.allowed_lateness_ms;
        let wm_now = self.watermark;
        self.state
            .retain(|(_, window), _| window.1.saturating_add(lateness) > wm_now);
        self.fired
            .retain(|(_, window)| window.1.saturating_add(lateness) > wm_now);
        Ok(emissions)
    }

    /// Fires everything still pending (end-of-stream flush).
    pub fn flush(&mut self) -> Result<Vec<WindowEmission>, StreamError> {
        self.advance(Watermark(i64::MAX))
    }
}
