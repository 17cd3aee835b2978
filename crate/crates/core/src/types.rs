//! Domain types shared across the engine: risk categories, label sets,
//! model identities, and the common scoring interface.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The closed set of risk categories tracked by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskType {
    MarketCrash,
    Liquidity,
    Operational,
    Volatility,
}

impl RiskType {
    pub const COUNT: usize = 4;

    pub const ALL: [RiskType; Self::COUNT] = [
        RiskType::MarketCrash,
        RiskType::Liquidity,
        RiskType::Operational,
        RiskType::Volatility,
    ];

    pub fn index(self) -> usize {
        match self {
            RiskType::MarketCrash => 0,
            RiskType::Liquidity => 1,
            RiskType::Operational => 2,
            RiskType::Volatility => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<RiskType> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RiskType::MarketCrash => "market_crash",
            RiskType::Liquidity => "liquidity",
            RiskType::Operational => "operational",
            RiskType::Volatility => "volatility",
        }
    }
}

impl fmt::Display for RiskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown risk type `{0}` (expected one of market_crash, liquidity, operational, volatility)")]
pub struct ParseRiskTypeError(pub String);

impl FromStr for RiskType {
    type Err = ParseRiskTypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "market_crash" => Ok(RiskType::MarketCrash),
            "liquidity" => Ok(RiskType::Liquidity),
            "operational" => Ok(RiskType::Operational),
            "volatility" => Ok(RiskType::Volatility),
            other => Err(ParseRiskTypeError(other.to_string())),
        }
    }
}

/// A set of risk types, used as the per-record ground-truth label mask and
/// as the per-sample multi-label target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct RiskSet(u8);

impl RiskSet {
    pub fn empty() -> Self {
        RiskSet(0)
    }

    pub fn insert(&mut self, risk: RiskType) {
        self.0 |= 1 << risk.index();
    }

    pub fn with(mut self, risk: RiskType) -> Self {
        self.insert(risk);
        self
    }

    pub fn contains(self, risk: RiskType) -> bool {
        self.0 & (1 << risk.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: RiskSet) -> RiskSet {
        RiskSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = RiskType> {
        RiskType::ALL.into_iter().filter(move |r| self.contains(*r))
    }

    /// Target vector in `RiskType::ALL` order (1.0 for present, 0.0 otherwise).
    pub fn to_targets(self) -> [f64; RiskType::COUNT] {
        let mut t = [0.0; RiskType::COUNT];
        for r in self.iter() {
            t[r.index()] = 1.0;
        }
        t
    }

    /// Renders as `|`-separated names in `RiskType::ALL` order; empty set is "".
    pub fn to_pipe_string(self) -> String {
        self.iter().map(|r| r.name()).collect::<Vec<_>>().join("|")
    }

    /// Parses the `|`-separated form produced by [`RiskSet::to_pipe_string`].
    pub fn from_pipe_string(s: &str) -> Result<Self, ParseRiskTypeError> {
        let mut set = RiskSet::empty();
        if s.is_empty() {
            return Ok(set);
        }
        for part in s.split('|') {
            set.insert(part.parse()?);
        }
        Ok(set)
    }
}

impl FromIterator<RiskType> for RiskSet {
    fn from_iter<I: IntoIterator<Item = RiskType>>(iter: I) -> Self {
        let mut set = RiskSet::empty();
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl Serialize for RiskSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for RiskSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<RiskType>::deserialize(deserializer)?;
        Ok(items.into_iter().collect())
    }
}

/// The three model families compared by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lstm,
    RandomForest,
    GradientBoosting,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Lstm,
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoosting => "gradient_boosting",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(ModelKind::Lstm),
            "random_forest" | "rf" => Ok(ModelKind::RandomForest),
            "gradient_boosting" | "gbt" => Ok(ModelKind::GradientBoosting),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// Per-risk-type probabilities in `RiskType::ALL` order.
pub type RiskScores = [f64; RiskType::COUNT];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("feature width mismatch: model expects {expected}, window has {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("empty input window")]
    EmptyWindow,
    #[error("non-finite value in input window")]
    NonFiniteInput,
}

/// Common inference interface over the trained model families.
///
/// A window is a lookback x features matrix (rows ordered oldest to newest).
/// Sequence models consume the whole window; tree models consume the most
/// recent row, whose features already summarize the trailing window.
pub trait RiskModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    /// Scores one lookback window into per-risk-type probabilities.
    fn score_window(&self, window: &Array2<f64>) -> Result<RiskScores, ScoreError>;
}
