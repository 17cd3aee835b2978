//! riskwatch core: end-to-end market risk monitoring building blocks.
//!
//! The crate is organized as a pipeline:
//!
//! - [`datagen`] — deterministic synthetic market data with planted,
//!   labeled risk events
//! - [`preprocess`] — cleaning, normalization, feature extraction, and
//!   windowing into supervised samples
//! - [`lstm`] — from-scratch LSTM classifier trained with BPTT and Adam
//! - [`trees`] — from-scratch CART, Random Forest, and Gradient Boosting
//! - [`eval`] — metrics, ROC/AUC, rolling-window backtests, k-fold tuning
//! - [`alert`] — Bayesian posterior calibration and cost-optimal alerting
//! - [`stream`] — in-process event-time stream engine (windows, watermarks,
//!   pattern matching) feeding live scores into alerting

pub mod alert;
pub mod datagen;
pub mod eval;
pub mod lstm;
pub mod preprocess;
pub mod stream;
pub mod trees;
pub mod types;

pub use types::{ModelKind, RiskModel, RiskScores, RiskSet, RiskType, ScoreError};
