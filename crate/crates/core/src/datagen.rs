//! Deterministic synthetic market-data generator.
//!
//! Produces daily stock/forex/commodity/sentiment records and monthly
//! macro records with planted, labeled risk events, so that downstream
//! detection quality is verifiable by construction. Price dynamics are a
//! regime-switching geometric Brownian motion (calm/stressed); each planted
//! event perturbs the affected fields over its window and, ahead of the
//! window, leaves a precursor ramp in volatility, volume, and sentiment
//! that makes the labels learnable.

use crate::types::{ParseRiskTypeError, RiskSet, RiskType};
use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid generator spec:\n{}", problems.join("\n"))]
    InvalidSpec { problems: Vec<String> },
    #[error("date range shorter than 2 observations")]
    RangeTooShort,
    #[error("empty record set")]
    EmptyRecordSet,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl From<ParseRiskTypeError> for DatagenError {
    fn from(e: ParseRiskTypeError) -> Self {
        DatagenError::Parse {
            path: String::new(),
            line: 0,
            message: e.to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Record model
// ---------------------------------------------------------------------------

/// Kind of a market observation; determines granularity and field catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Stock,
    Forex,
    Commodity,
    Macro,
    Sentiment,
}

impl RecordKind {
    pub const ALL: [RecordKind; 5] = [
        RecordKind::Stock,
        RecordKind::Forex,
        RecordKind::Commodity,
        RecordKind::Macro,
        RecordKind::Sentiment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::Stock => "stock",
            RecordKind::Forex => "forex",
            RecordKind::Commodity => "commodity",
            RecordKind::Macro => "macro",
            RecordKind::Sentiment => "sentiment",
        }
    }

    /// Human-readable label used by summary tables.
    pub fn table_label(self) -> &'static str {
        match self {
            RecordKind::Stock => "Stock data",
            RecordKind::Forex => "Forex data",
            RecordKind::Commodity => "Commodity futures",
            RecordKind::Macro => "Macroeconomic indicators",
            RecordKind::Sentiment => "News sentiment",
        }
    }

    pub fn granularity(self) -> &'static str {
        match self {
            RecordKind::Macro => "Monthly",
            _ => "Daily",
        }
    }

    /// Fixed per-kind field catalog (sorted by name). Every record of a kind
    /// carries exactly these fields, each possibly missing.
    pub fn field_catalog(self) -> &'static [&'static str] {
        match self {
            RecordKind::Stock => &[
                "close",
                "high",
                "low",
                "market_cap",
                "open",
                "pe_ratio",
                "spread",
                "turnover",
                "volume",
                "vwap",
            ],
            RecordKind::Forex => &["close", "high", "low", "open", "spread", "volume"],
            RecordKind::Commodity => &["basis", "close", "inventory", "open_interest", "volume"],
            RecordKind::Macro => &[
                "bond_yield_10y",
                "consumer_confidence",
                "cpi_yoy",
                "gdp_growth",
                "m2_growth",
                "pmi",
                "policy_rate",
                "unemployment",
            ],
            RecordKind::Sentiment => &["article_count", "sentiment_score", "source_diversity"],
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stock" => Ok(RecordKind::Stock),
            "forex" => Ok(RecordKind::Forex),
            "commodity" => Ok(RecordKind::Commodity),
            "macro" => Ok(RecordKind::Macro),
            "sentiment" => Ok(RecordKind::Sentiment),
            other => Err(format!("unknown record kind `{other}`")),
        }
    }
}

/// One timestamped market observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub timestamp: NaiveDate,
    pub instrument: String,
    pub kind: RecordKind,
    /// Field name -> value; `None` marks an explicitly missing value.
    /// Keys always equal the kind's field catalog.
    pub fields: BTreeMap<String, Option<f64>>,
    /// Ground-truth risk types active at this timestamp.
    pub labels: RiskSet,
}

impl Record {
    pub fn field(&self, name: &str) -> Option<f64> {
        self.fields.get(name).copied().flatten()
    }
}

/// An ordered collection of records (by timestamp, kind, instrument).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordSet {
    pub records: Vec<Record>,
}

impl RecordSet {
    pub fn new(mut records: Vec<Record>) -> Self {
        records.sort_by(|a, b| {
            (a.timestamp, a.kind, &a.instrument).cmp(&(b.timestamp, b.kind, &b.instrument))
        });
        RecordSet { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Record> {
        self.records.iter()
    }

    pub fn by_kind(&self, kind: RecordKind) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Union of label masks per date — the ground truth consumed by
    /// sample construction.
    pub fn ground_truth(&self) -> BTreeMap<NaiveDate, RiskSet> {
        let mut truth: BTreeMap<NaiveDate, RiskSet> = BTreeMap::new();
        for r in &self.records {
            if !r.labels.is_empty() {
                let entry = truth.entry(r.timestamp).or_default();
                *entry = entry.union(r.labels);
            }
        }
        truth
    }

    /// Sorted distinct instrument names of a kind.
    pub fn instruments(&self, kind: RecordKind) -> Vec<String> {
        let mut names: Vec<String> = self
            .by_kind(kind)
            .map(|r| r.instrument.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        names.sort();
        names
    }
}

// ---------------------------------------------------------------------------
// Generator spec
// ---------------------------------------------------------------------------

/// Configuration of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_instruments: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// Daily log-return standard deviation in the calm regime.
    pub base_volatility: f64,
    /// Row-stochastic calm/stressed transition matrix.
    pub regime_transition: [[f64; 2]; 2],
    /// Expected planted events per year, per risk type. Missing types plant none.
    pub event_rates: BTreeMap<RiskType, f64>,
    /// Effect size per risk type (market_crash: total log-return shift,
    /// negative for a drop; others: intensity in (0, 1] except volatility
    /// which is a volatility multiplier increment).
    pub event_magnitude: BTreeMap<RiskType, f64>,
}

impl Default for GeneratorSpec {
    /// Desk-scale default: 10 instruments over 4 years.
    fn default() -> Self {
        let mut event_rates = BTreeMap::new();
        event_rates.insert(RiskType::MarketCrash, 2.0);
        event_rates.insert(RiskType::Liquidity, 1.5);
        event_rates.insert(RiskType::Operational, 2.0);
        event_rates.insert(RiskType::Volatility, 1.5);
        let mut event_magnitude = BTreeMap::new();
        event_magnitude.insert(RiskType::MarketCrash, -0.20);
        event_magnitude.insert(RiskType::Liquidity, 0.8);
        event_magnitude.insert(RiskType::Operational, 0.3);
        event_magnitude.insert(RiskType::Volatility, 1.0);
        GeneratorSpec {
            seed: 42,
            n_instruments: 10,
            start_date: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2021, 12, 31).unwrap(),
            base_volatility: 0.01,
            regime_transition: [[0.98, 0.02], [0.10, 0.90]],
            event_rates,
            event_magnitude,
        }
    }
}

impl GeneratorSpec {
    /// Validates every field, reporting all problems at once.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let mut problems = Vec::new();
        if self.start_date >= self.end_date {
            problems.push(format!(
                "start_date: must precede end_date ({} >= {})",
                self.start_date, self.end_date
            ));
        }
        if self.n_instruments < 1 {
            problems.push("n_instruments: must be >= 1".to_string());
        }
        if !self.base_volatility.is_finite() || self.base_volatility < 0.0 {
            problems.push(format!(
                "base_volatility: must be finite and >= 0 (got {})",
                self.base_volatility
            ));
        }
        for (i, row) in self.regime_transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                problems.push(format!("regime_transition: row {i} has a negative or non-finite entry"));
            } else if (sum - 1.0).abs() > 1e-12 {
                problems.push(format!(
                    "regime_transition: row {i} sums to {sum}, expected 1 within 1e-12"
                ));
            }
        }
        for (risk, rate) in &self.event_rates {
            if !rate.is_finite() || *rate < 0.0 {
                problems.push(format!("event_rates.{risk}: must be finite and >= 0 (got {rate})"));
            }
        }
        for (risk, mag) in &self.event_magnitude {
            if !mag.is_finite() {
                problems.push(format!("event_magnitude.{risk}: must be finite (got {mag})"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DatagenError::InvalidSpec { problems })
        }
    }

    fn magnitude(&self, risk: RiskType) -> f64 {
        let default = match risk {
            RiskType::MarketCrash => -0.20,
            RiskType::Liquidity => 0.8,
            RiskType::Operational => 0.3,
            RiskType::Volatility => 1.0,
        };
        *self.event_magnitude.get(&risk).unwrap_or(&default)
    }
}

/// Weekdays in `[start, end]`.
pub fn trading_days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let mut days = Vec::new();
    let mut d = start;
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d += Duration::days(1);
    }
    days
}

/// First trading day of every month wholly contained in `[start, end]`.
fn whole_month_anchors(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let mut anchors = Vec::new();
    let mut first = NaiveDate::from_ymd_opt(start.year(), start.month(), 1).unwrap();
    if first < start {
        first = next_month(first);
    }
    let mut m = first;
    while m <= end {
        let last_of_month = next_month(m) - Duration::days(1);
        if last_of_month > end {
            break;
        }
        let mut anchor = m;
        while matches!(anchor.weekday(), Weekday::Sat | Weekday::Sun) {
            anchor += Duration::days(1);
        }
        anchors.push(anchor);
        m = next_month(m);
    }
    anchors
}

fn next_month(d: NaiveDate) -> NaiveDate {
    if d.month() == 12 {
        NaiveDate::from_ymd_opt(d.year() + 1, 1, 1).unwrap()
    } else {
        NaiveDate::from_ymd_opt(d.year(), d.month() + 1, 1).unwrap()
    }
}

// ---------------------------------------------------------------------------
// Planted events
// ---------------------------------------------------------------------------

/// Trading days of leading precursor ramp ahead of each planted event.
/// Longer than the default prediction horizon so that every anchor whose
/// label window contains an event sees some precursor signal.
pub const EVENT_LEAD_DAYS: usize = 35;

/// Event window length in trading days, per risk type.
pub fn event_duration(risk: RiskType) -> usize {
    match risk {
        RiskType::MarketCrash => 5,
        RiskType::Liquidity => 10,
        RiskType::Operational => 3,
        RiskType::Volatility => 20,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub risk_type: RiskType,
    /// Trading-day index of the first event day.
    pub start: usize,
    /// Trading-day index one past the last event day.
    pub end: usize,
    pub magnitude: f64,
}

/// Per-day market-wide effect state accumulated over all planted events.
struct DayEffects {
    crash_drift: Vec<f64>,
    vol_mult: Vec<f64>,
    volume_mult: Vec<f64>,
    spread_mult: Vec<f64>,
    sentiment_shift: Vec<f64>,
    corruption_rate: Vec<f64>,
    forced_stressed: Vec<bool>,
    labels: Vec<RiskSet>,
}

impl DayEffects {
    fn new(n_days: usize) -> Self {
        DayEffects {
            crash_drift: vec![0.0; n_days],
            vol_mult: vec![1.0; n_days],
            volume_mult: vec![1.0; n_days],
            spread_mult: vec![1.0; n_days],
            sentiment_shift: vec![0.0; n_days],
            corruption_rate: vec![0.0; n_days],
            forced_stressed: vec![false; n_days],
            labels: vec![RiskSet::empty(); n_days],
        }
    }

    fn apply(&mut self, ev: &PlantedEvent) {
        let n = self.labels.len();
        let m = ev.magnitude;
        let intensity = m.abs();
        let lead_start = ev.start.saturating_sub(EVENT_LEAD_DAYS);
        for d in lead_start..ev.end.min(n) {
            // 0 over the lead window start, 1 from event start onward.
            let ramp = if d >= ev.start {
                1.0
            } else {
                (d - lead_start) as f64 / EVENT_LEAD_DAYS as f64
            };
            let during = d >= ev.start;
            match ev.risk_type {
                RiskType::MarketCrash => {
                    if during {
                        self.crash_drift[d] += m / (ev.end - ev.start) as f64;
                    }
                    self.vol_mult[d] *= 1.0 + 2.0 * intensity * ramp;
                    self.sentiment_shift[d] -= 2.0 * intensity * ramp;
                    self.volume_mult[d] *= 1.0 - (0.4 * intensity * ramp).min(0.95);
                }
                RiskType::Liquidity => {
                    if during {
                        self.volume_mult[d] *= (1.0 - intensity).max(0.02);
                        self.spread_mult[d] *= 1.0 + 5.0 * intensity;
                    } else {
                        self.volume_mult[d] *= 1.0 - (0.8 * intensity * ramp).min(0.95);
                        self.spread_mult[d] *= 1.0 + 3.0 * intensity * ramp;
                    }
                    self.sentiment_shift[d] -= 1.0 * intensity * ramp;
                }
                RiskType::Operational => {
                    if during {
                        self.corruption_rate[d] = self.corruption_rate[d].max(intensity.min(1.0));
                    }
                    // Weak precursor: operational trouble is the hardest
                    // signal, mirroring its bottom-ranked detectability.
                    self.volume_mult[d] *= 1.0 - (0.15 * intensity * ramp).min(0.9);
                    self.sentiment_shift[d] -= 0.2 * intensity * ramp;
                }
                RiskType::Volatility => {
                    if during {
                        self.forced_stressed[d] = true;
                    }
                    self.vol_mult[d] *= 1.0 + 2.0 * intensity * ramp;
                    self.sentiment_shift[d] -= 0.5 * intensity * ramp;
                }
            }
            if during {
                self.labels[d].insert(ev.risk_type);
            }
        }
    }
}

/// Samples non-overlapping (per type, including lead windows) event placements.
fn plant_events(spec: &GeneratorSpec, n_days: usize, rng: &mut ChaCha8Rng) -> Vec<PlantedEvent> {
    let years = (spec.end_date - spec.start_date).num_days() as f64 / 365.25;
    let mut events = Vec::new();
    for risk in RiskType::ALL {
        let rate = *spec.event_rates.get(&risk).unwrap_or(&0.0);
        let target = (rate * years).round() as usize;
        let duration = event_duration(risk);
        let mut placed: Vec<(usize, usize)> = Vec::new();
        for _ in 0..target {
            if n_days <= EVENT_LEAD_DAYS + duration {
                break;
            }
            for _attempt in 0..200 {
                let start = rng.gen_range(EVENT_LEAD_DAYS..n_days - duration);
                let span = (start - EVENT_LEAD_DAYS, start + duration);
                if placed.iter().all(|(s, e)| span.1 <= *s || span.0 >= *e) {
                    placed.push(span);
                    events.push(PlantedEvent {
                        risk_type: risk,
                        start,
                        end: start + duration,
                        magnitude: spec.magnitude(risk),
                    });
                    break;
                }
            }
        }
    }
    events.sort_by_key(|e| (e.start, e.risk_type.index()));
    events
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

const STRESSED_VOL_FACTOR: f64 = 3.0;
const DAILY_DRIFT: f64 = 0.0002;
const N_FOREX: usize = 3;
const N_COMMODITY: usize = 3;

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two fresh uniforms per draw keeps the stream order simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn child_rng(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Generates the full synthetic record set for a spec. Pure function of the
/// spec: identical specs produce byte-identical outputs.
pub fn generate(spec: &GeneratorSpec) -> Result<RecordSet, DatagenError> {
    spec.validate()?;
    let days = trading_days(spec.start_date, spec.end_date);
    if days.len() < 2 {
        return Err(DatagenError::RangeTooShort);
    }
    let n_days = days.len();

    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let regime_seed = master.next_u64();
    let event_seed = master.next_u64();
    let sentiment_seed = master.next_u64();
    let macro_seed = master.next_u64();
    let stock_seed = master.next_u64();
    let forex_seed = master.next_u64();
    let commodity_seed = master.next_u64();
    let corruption_seed = master.next_u64();

    // Market-wide regime chain.
    let mut regime_rng = ChaCha8Rng::seed_from_u64(regime_seed);
    let mut regimes = Vec::with_capacity(n_days);
    let mut state = 0usize;
    for _ in 0..n_days {
        regimes.push(state);
        let p_stay: f64 = spec.regime_transition[state][state];
        let u: f64 = regime_rng.gen();
        if u >= p_stay {
            state = 1 - state;
        }
    }

    // Planted events and their per-day effects.
    let mut event_rng = ChaCha8Rng::seed_from_u64(event_seed);
    let events = plant_events(spec, n_days, &mut event_rng);
    let mut effects = DayEffects::new(n_days);
    for ev in &events {
        effects.apply(ev);
    }

    let day_sigma: Vec<f64> = (0..n_days)
        .map(|d| {
            let stressed = regimes[d] == 1 || effects.forced_stressed[d];
            let regime_mult = if stressed { STRESSED_VOL_FACTOR } else { 1.0 };
            spec.base_volatility * regime_mult * effects.vol_mult[d]
        })
        .collect();

    let mut records = Vec::new();

    // Stocks: per-instrument GBM with shared market effects.
    let mut corruption_rng = ChaCha8Rng::seed_from_u64(corruption_seed);
    for i in 0..spec.n_instruments {
        let name = format!("S{:04}", i + 1);
        let mut rng = child_rng(stock_seed, i as u64);
        let shares = 1.0e8 * (1.0 + i as f64 / 10.0);
        let mut close = 50.0 + 10.0 * i as f64;
        for d in 0..n_days {
            let z_ret = standard_normal(&mut rng);
            let z_open = standard_normal(&mut rng);
            let z_high = standard_normal(&mut rng);
            let z_low = standard_normal(&mut rng);
            let z_vol = standard_normal(&mut rng);
            let z_spread = standard_normal(&mut rng);
            let z_pe = standard_normal(&mut rng);

            let prev_close = close;
            let log_ret = DAILY_DRIFT + day_sigma[d] * z_ret + effects.crash_drift[d];
            close = prev_close * log_ret.exp();

            let open = prev_close * (0.2 * day_sigma[d] * z_open).exp();
            let high = open.max(close) * (1.0 + 0.3 * day_sigma[d] * z_high.abs());
            let low = open.min(close) * (1.0 - 0.3 * day_sigma[d] * z_low.abs());
            let volume = 1.0e6 * (0.25 * z_vol).exp() * effects.volume_mult[d];
            let spread = 5.0e-4 * (1.0 + 0.5 * z_spread.abs()) * effects.spread_mult[d];
            let pe_ratio = 15.0 * (0.1 * z_pe).exp();

            let mut fields = BTreeMap::new();
            fields.insert("close".to_string(), Some(close));
            fields.insert("high".to_string(), Some(high));
            fields.insert("low".to_string(), Some(low));
            fields.insert("market_cap".to_string(), Some(close * shares));
            fields.insert("open".to_string(), Some(open));
            fields.insert("pe_ratio".to_string(), Some(pe_ratio));
            fields.insert("spread".to_string(), Some(spread));
            fields.insert("turnover".to_string(), Some(close * volume));
            fields.insert("volume".to_string(), Some(volume));
            fields.insert("vwap".to_string(), Some((open + high + low + close) / 4.0));

            // Operational bursts: corrupt one field to missing and one to an
            // outlier, per affected record.
            if effects.corruption_rate[d] > 0.0 {
                let u: f64 = corruption_rng.gen();
                let catalog = RecordKind::Stock.field_catalog();
                let miss_idx = corruption_rng.gen_range(0..catalog.len());
                let out_idx = corruption_rng.gen_range(0..catalog.len());
                if u < effects.corruption_rate[d] {
                    fields.insert(catalog[miss_idx].to_string(), None);
                    if out_idx != miss_idx {
                        let key = catalog[out_idx];
                        if let Some(Some(v)) = fields.get(key).copied() {
                            fields.insert(key.to_string(), Some(v * 25.0));
                        }
                    }
                }
            }

            records.push(Record {
                timestamp: days[d],
                instrument: name.clone(),
                kind: RecordKind::Stock,
                fields,
                labels: effects.labels[d],
            });
        }
    }

    // Forex: small-vol GBM, no planted effects.
    for i in 0..N_FOREX {
        let name = format!("FX{:03}", i + 1);
        let mut rng = child_rng(forex_seed, i as u64);
        let mut close = 1.0 + 0.1 * i as f64;
        for d in 0..n_days {
            let z_ret = standard_normal(&mut rng);
            let z_open = standard_normal(&mut rng);
            let z_range = standard_normal(&mut rng);
            let z_vol = standard_normal(&mut rng);
            let z_spread = standard_normal(&mut rng);
            let prev = close;
            close = prev * (0.006 * z_ret).exp();
            let open = prev * (0.001 * z_open).exp();
            let mut fields = BTreeMap::new();
            fields.insert("close".to_string(), Some(close));
            fields.insert("high".to_string(), Some(open.max(close) * (1.0 + 0.002 * z_range.abs())));
            fields.insert("low".to_string(), Some(open.min(close) * (1.0 - 0.002 * z_range.abs())));
            fields.insert("open".to_string(), Some(open));
            fields.insert("spread".to_string(), Some(1.0e-4 * (1.0 + 0.3 * z_spread.abs())));
            fields.insert("volume".to_string(), Some(5.0e8 * (0.2 * z_vol).exp()));
            records.push(Record {
                timestamp: days[d],
                instrument: name.clone(),
                kind: RecordKind::Forex,
                fields,
                labels: RiskSet::empty(),
            });
        }
    }

    // Commodity futures.
    for i in 0..N_COMMODITY {
        let name = format!("CM{:03}", i + 1);
        let mut rng = child_rng(commodity_seed, i as u64);
        let mut close = 60.0 + 20.0 * i as f64;
        let mut inv_level = 0.0f64;
        for d in 0..n_days {
            let z_ret = standard_normal(&mut rng);
            let z_basis = standard_normal(&mut rng);
            let z_inv = standard_normal(&mut rng);
            let z_oi = standard_normal(&mut rng);
            let z_vol = standard_normal(&mut rng);
            close *= (0.012 * z_ret).exp();
            inv_level = 0.95 * inv_level + 0.05 * z_inv;
            let mut fields = BTreeMap::new();
            fields.insert("basis".to_string(), Some(0.01 * z_basis));
            fields.insert("close".to_string(), Some(close));
            fields.insert("inventory".to_string(), Some(1.0e5 * (0.5 * inv_level).exp()));
            fields.insert("open_interest".to_string(), Some(5.0e4 * (0.2 * z_oi).exp()));
            fields.insert("volume".to_string(), Some(2.0e5 * (0.25 * z_vol).exp()));
            records.push(Record {
                timestamp: days[d],
                instrument: name.clone(),
                kind: RecordKind::Commodity,
                fields,
                labels: RiskSet::empty(),
            });
        }
    }

    // Macro indicators: monthly AR(1) series around stable bases.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(macro_seed);
        let anchors = whole_month_anchors(spec.start_date, spec.end_date);
        let catalog = RecordKind::Macro.field_catalog();
        let bases = [2.5, 95.0, 2.0, 2.5, 6.0, 52.0, 2.0, 4.5];
        let scales = [0.3, 4.0, 0.25, 0.3, 0.5, 2.0, 0.15, 0.2];
        debug_assert_eq!(catalog.len(), bases.len());
        let mut state = [0.0f64; 8];
        for anchor in anchors {
            let mut fields = BTreeMap::new();
            for (k, key) in catalog.iter().enumerate() {
                state[k] = 0.85 * state[k] + standard_normal(&mut rng);
                // AR(1) ordering differs from catalog order on purpose of
                // keeping names sorted; bases/scales are indexed by catalog.
                fields.insert((*key).to_string(), Some(bases[k] + scales[k] * 0.3 * state[k]));
            }
            records.push(Record {
                timestamp: anchor,
                instrument: "MACRO".to_string(),
                kind: RecordKind::Macro,
                fields,
                labels: RiskSet::empty(),
            });
        }
    }

    // News sentiment: one aggregate daily series carrying event precursors.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(sentiment_seed);
        let mut ar = 0.0f64;
        for d in 0..n_days {
            let z = standard_normal(&mut rng);
            let z_count = standard_normal(&mut rng);
            let z_div = standard_normal(&mut rng);
            ar = 0.9 * ar + 0.1 * z;
            let score = (0.3 * ar + effects.sentiment_shift[d]).clamp(-1.0, 1.0);
            let mut fields = BTreeMap::new();
            fields.insert("article_count".to_string(), Some((50.0 * (0.2 * z_count).exp()).round()));
            fields.insert("sentiment_score".to_string(), Some(score));
            fields.insert("source_diversity".to_string(), Some((0.7 + 0.05 * z_div).clamp(0.0, 1.0)));
            records.push(Record {
                timestamp: days[d],
                instrument: "NEWS".to_string(),
                kind: RecordKind::Sentiment,
                fields,
                labels: RiskSet::empty(),
            });
        }
    }

    Ok(RecordSet::new(records))
}

// ---------------------------------------------------------------------------
// Summary table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: RecordKind,
    pub sample_count: usize,
    pub feature_count: usize,
    pub granularity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

/// Per-kind sample/feature/granularity summary; kinds with no records are
/// omitted.
pub fn summarize(records: &RecordSet) -> Result<SummaryTable, DatagenError> {
    if records.is_empty() {
        return Err(DatagenError::EmptyRecordSet);
    }
    let mut rows = Vec::new();
    for kind in RecordKind::ALL {
        let mut count = 0usize;
        let mut names = std::collections::BTreeSet::new();
        for r in records.by_kind(kind) {
            count += 1;
            names.extend(r.fields.keys().cloned());
        }
        if count > 0 {
            rows.push(SummaryRow {
                kind,
                sample_count: count,
                feature_count: names.len(),
                granularity: kind.granularity().to_string(),
            });
        }
    }
    Ok(SummaryTable { rows })
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let bytes = digits.as_bytes();
    let mut out = String::new();
    for (i, b) in bytes.iter().enumerate() {
        if i > 0 && (bytes.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(*b as char);
    }
    out
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26} {:>14} {:>14} {:>18}", "Data Type", "Sample Count", "Feature Count", "Time Granularity")?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<26} {:>14} {:>14} {:>18}",
                row.kind.table_label(),
                group_thousands(row.sample_count),
                row.feature_count,
                row.granularity
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

fn io_err(path: &Path, source: std::io::Error) -> DatagenError {
    DatagenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Sorted union of field names over the kinds present.
fn header_fields(records: &RecordSet) -> Vec<&'static str> {
    let mut names = std::collections::BTreeSet::new();
    for kind in RecordKind::ALL {
        if records.by_kind(kind).next().is_some() {
            names.extend(kind.field_catalog().iter().copied());
        }
    }
    names.into_iter().collect()
}

/// Writes records as a single CSV file: header
/// `timestamp,instrument,kind,<field...>,labels`, missing values as empty
/// cells, labels `|`-separated.
pub fn write_records(records: &RecordSet, path: &Path) -> Result<(), DatagenError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let fields = header_fields(records);
    let mut header = vec!["timestamp", "instrument", "kind"];
    header.extend(fields.iter().copied());
    header.push("labels");
    writeln!(w, "{}", header.join(",")).map_err(|e| io_err(path, e))?;
    for r in &records.records {
        let mut cells = vec![r.timestamp.to_string(), r.instrument.clone(), r.kind.to_string()];
        for name in &fields {
            match r.fields.get(*name) {
                Some(Some(v)) => cells.push(format!("{v}")),
                _ => cells.push(String::new()),
            }
        }
        cells.push(r.labels.to_pipe_string());
        writeln!(w, "{}", cells.join(",")).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes one CSV file per kind present, named `<kind>.csv` under `dir`.
pub fn write_records_per_kind(records: &RecordSet, dir: &Path) -> Result<Vec<std::path::PathBuf>, DatagenError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for kind in RecordKind::ALL {
        let subset: Vec<Record> = records.by_kind(kind).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let path = dir.join(format!("{kind}.csv"));
        write_records(&RecordSet { records: subset }, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a CSV file written by [`write_records`] (combined or per-kind).
pub fn read_records(path: &Path) -> Result<RecordSet, DatagenError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let parse_err = |line: usize, message: String| DatagenError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };

    let header_line = match lines.next() {
        Some((_, Ok(l))) => l,
        Some((_, Err(e))) => return Err(io_err(path, e)),
        None => return Err(parse_err(1, "empty file, expected header".to_string())),
    };
    let header: Vec<&str> = header_line.split(',').collect();
    if header.len() < 4 || header[0] != "timestamp" || header[1] != "instrument" || header[2] != "kind" || *header.last().unwrap() != "labels" {
        return Err(parse_err(1, "header must be timestamp,instrument,kind,<field...>,labels".to_string()));
    }
    let field_names: Vec<String> = header[3..header.len() - 1].iter().map(|s| s.to_string()).collect();

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(parse_err(
                line_no,
                format!("expected {} cells, found {}", header.len(), cells.len()),
            ));
        }
        let timestamp: NaiveDate = cells[0]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad timestamp `{}`: {e}", cells[0])))?;
        let instrument = cells[1].to_string();
        let kind: RecordKind = cells[2]
            .parse()
            .map_err(|e| parse_err(line_no, format!("{e}")))?;
        let catalog = kind.field_catalog();
        let mut fields = BTreeMap::new();
        for (j, name) in field_names.iter().enumerate() {
            let cell = cells[3 + j];
            if catalog.contains(&name.as_str()) {
                if cell.is_empty() {
                    fields.insert(name.clone(), None);
                } else {
                    let v: f64 = cell
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("non-numeric {name} field `{cell}`: {e}")))?;
                    if !v.is_finite() {
                        return Err(parse_err(line_no, format!("non-finite {name} field `{cell}`")));
                    }
                    fields.insert(name.clone(), Some(v));
                }
            } else if !cell.is_empty() {
                return Err(parse_err(
                    line_no,
                    format!("field {name} is not in the {kind} catalog but has value `{cell}`"),
                ));
            }
        }
        for required in catalog {
            if !fields.contains_key(*required) {
                return Err(parse_err(
                    line_no,
                    format!("missing column `{required}` required by kind {kind}"),
                ));
            }
        }
        let labels = RiskSet::from_pipe_string(cells[header.len() - 1])
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        records.push(Record {
            timestamp,
            instrument,
            kind,
            fields,
            labels,
        });
    }
    Ok(RecordSet::new(records))
}
