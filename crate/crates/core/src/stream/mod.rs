//! In-process event-time stream core: window assignment, watermarks,
//! incremental aggregation with allowed lateness, pattern matching, and the
//! scoring pipeline that feeds live model output into alerting.
//!
//! The defining property of this module is stream/batch equivalence: for
//! any bounded input, windowed aggregates and the final alert set equal a
//! batch recomputation over the same event multiset.

mod pattern;
mod pipeline;
mod window;

pub use pattern::{match_pattern, CmpOp, Contiguity, PatternMatch, PatternSpec, PatternStep};
pub use pipeline::{
    run_pipeline, KeyedScore, LatencyStats, PipelineConfig, PipelineMetrics, PipelineOutput,
    StageMetrics,
};
pub use window::{
    assign_windows, AggregateResult, WatermarkTracker, WindowEmission, WindowedAggregator,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("watermark regression: {current} -> {attempted}")]
    WatermarkRegression { current: i64, attempted: i64 },
    #[error("invalid window spec: {0}")]
    InvalidWindowSpec(String),
    #[error("invalid pattern spec: {0}")]
    InvalidPatternSpec(String),
    #[error("model/feature width mismatch at startup: model expects {expected}, pipeline produces {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("pipeline model error: {0}")]
    Model(String),
    #[error("alerting error: {0}")]
    Alert(#[from] crate::alert::AlertError),
}

/// One keyed, timestamped payload flowing through the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    /// Event time in milliseconds.
    pub event_time: i64,
    pub key: String,
    pub payload: BTreeMap<String, f64>,
}

impl StreamEvent {
    pub fn new(event_time: i64, key: impl Into<String>) -> Self {
        StreamEvent {
            event_time,
            key: key.into(),
            payload: BTreeMap::new(),
        }
    }

    pub fn with(mut self, field: impl Into<String>, value: f64) -> Self {
        self.payload.insert(field.into(), value);
        self
    }
}

/// Half-open event-time interval `[start, end)`.
pub type WindowId = (i64, i64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Tumbling,
    Sliding,
}

/// Event-time window definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub kind: WindowKind,
    pub size_ms: i64,
    /// Only meaningful for sliding windows.
    pub slide_ms: i64,
    pub allowed_lateness_ms: i64,
}

impl WindowSpec {
    pub fn tumbling(size_ms: i64) -> Self {
        WindowSpec {
            kind: WindowKind::Tumbling,
            size_ms,
            slide_ms: size_ms,
            allowed_lateness_ms: 0,
        }
    }

    pub fn sliding(size_ms: i64, slide_ms: i64) -> Self {
        WindowSpec {
            kind: WindowKind::Sliding,
            size_ms,
            slide_ms,
            allowed_lateness_ms: 0,
        }
    }

    pub fn with_lateness(mut self, lateness_ms: i64) -> Self {
        self.allowed_lateness_ms = lateness_ms;
        self
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.size_ms <= 0 {
            return Err(StreamError::InvalidWindowSpec(format!(
                "size must be positive (got {})",
                self.size_ms
            )));
        }
        if self.kind == WindowKind::Sliding && !(self.slide_ms > 0 && self.slide_ms <= self.size_ms) {
            return Err(StreamError::InvalidWindowSpec(format!(
                "slide must lie in (0, size] (got {})",
                self.slide_ms
            )));
        }
        if self.allowed_lateness_ms < 0 {
            return Err(StreamError::InvalidWindowSpec(
                "allowed_lateness must be >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// Monotone event-time marker: no on-time event older than this remains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Watermark(pub i64);
