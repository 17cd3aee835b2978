//! Per-key sequential pattern matching over time-ordered events.

use super::{StreamError, StreamEvent};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

/// One step predicate: a named comparison on a payload field. Events
/// without the field never match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStep {
    pub field: String,
    pub op: CmpOp,
    pub value: f64,
}

impl PatternStep {
    pub fn matches(&self, event: &StreamEvent) -> bool {
        event
            .payload
            .get(&self.field)
            .is_some_and(|v| self.op.holds(*v, self.value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contiguity {
    /// Steps must match consecutive events.
    Strict,
    /// Gaps allowed; each step takes the earliest matching later event.
    Relaxed,
}

/// A sequence of step predicates that must complete within a time budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub steps: Vec<PatternStep>,
    pub within_ms: i64,
    pub contiguity: Contiguity,
}

impl PatternSpec {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.steps.is_empty() {
            return Err(StreamError::InvalidPatternSpec(
                "pattern needs at least one step".to_string(),
            ));
        }
        if self.within_ms <= 0 {
            return Err(StreamError::InvalidPatternSpec(
                "within must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMatch {
    pub key: String,
    /// Event times of the matched steps, in order.
    pub event_times: Vec<i64>,
}

/// Finds every run of events satisfying the step predicates within the time
/// budget, per key. Overlapping matches are all reported; one match is
/// emitted per starting event at most (relaxed mode binds each later step
/// to the earliest eligible event).
pub fn match_pattern(events: &[StreamEvent], spec: &PatternSpec) -> Vec<PatternMatch> {
    if spec.validate().is_err() {
        return Vec::new();
    }
    let mut per_key: BTreeMap<&str, Vec<&StreamEvent>> = BTreeMap::new();
    for e in events {
        per_key.entry(&e.key).or_default().push(e);
    }
    let mut matches = Vec::new();
    for (key, mut seq) in per_key {
        seq.sort_by_key(|e| e.event_time);
        let n = seq.len();
        let len = spec.steps.len();
        for start in 0..n {
            if !spec.steps[0].matches(seq[start]) {
                continue;
            }
            let deadline = seq[start].event_time + spec.within_ms;
            let mut times = vec![seq[start].event_time];
            match spec.contiguity {
                Contiguity::Strict => {
                    if start + len > n {
                        continue;
                    }
                    let mut ok = true;
                    for (s, step) in spec.steps.iter().enumerate().skip(1) {
                        let e = seq[start + s];
                        if !step.matches(e) || e.event_time > deadline {
                            ok = false;
                            break;
                        }
                        times.push(e.event_time);
                    }
                    if ok {
                        matches.push(PatternMatch {
                            key: key.to_string(),
                            event_times: times,
                        });
                    }
                }
                Contiguity::Relaxed => {
                    let mut cursor = start;
                    let mut ok = true;
                    for step in spec.steps.iter().skip(1) {
                        let mut found = None;
                        for (j, e) in seq.iter().enumerate().skip(cursor + 1) {
                            if e.event_time > deadline {
                                break;
                            }
                            if step.matches(e) {
                                found = Some(j);
                                break;
                            }
                        }
                        match found {
                            Some(j) => {
                                times.push(seq[j].event_time);
                                cursor = j;
                            }
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok {
                        matches.push(PatternMatch {
                            key: key.to_string(),
                            event_times: times,
                        });
                    }
                }
            }
        }
    }
    matches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn returns(values: &[f64]) -> Vec<StreamEvent> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| StreamEvent::new(1000 * i as i64, "k").with("ret", *v))
            .collect()
    }

    fn three_negative() -> PatternSpec {
        PatternSpec {
            steps: vec![
                PatternStep {
                    field: "ret".to_string(),
                    op: CmpOp::Lt,
                    value: 0.0,
                };
                3
            ],
            within_ms: 10_000,
            contiguity: Contiguity::Strict,
        }
    }

    #[test]
    fn three_consecutive_negatives_single_match() {
        let events = returns(&[-1.0, -1.0, -1.0]);
        let matches = match_pattern(&events, &three_negative());
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].event_times, vec![0, 1000, 2000]);
    }

    #[test]
    fn four_negatives_two_overlapping_matches() {
        let events = returns(&[-1.0, -1.0, -1.0, -1.0]);
        let matches = match_pattern(&events, &three_negative());
        assert_eq!(matches.len(), 2);
        assert_eq!(matches[0].event_times, vec![0, 1000, 2000]);
        assert_eq!(matches[1].event_times, vec![1000, 2000, 3000]);
    }

    #[test]
    fn tight_time_budget_blocks_matches() {
        let mut spec = three_negative();
        spec.within_ms = 500; // events are 1000 ms apart
        let events = returns(&[-1.0, -1.0, -1.0]);
        assert!(match_pattern(&events, &spec).is_empty());
    }

    #[test]
    fn strict_requires_consecutive_events() {
        let events = returns(&[-1.0, 2.0, -1.0, -1.0]);
        assert!(match_pattern(&events, &three_negative()).is_empty());
    }

    #[test]
    fn relaxed_allows_gaps() {
        let mut spec = three_negative();
        spec.contiguity = Contiguity::Relaxed;
        let events = returns(&[-1.0, 2.0, -1.0, 5.0, -1.0]);
        let matches = match_pattern(&events, &spec);
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].event_times, vec![0, 2000, 4000]);
    }

    #[test]
    fn keys_are_independent() {
        let mut events = returns(&[-1.0, -1.0, -1.0]);
        let mut other: Vec<StreamEvent> = returns(&[-1.0, -1.0])
            .into_iter()
            .map(|mut e| {
                e.key = "other".to_string();
                e
            })
            .collect();
        events.append(&mut other);
        let matches = match_pattern(&events, &three_negative());
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].key, "k");
    }

    #[test]
    fn missing_field_never_matches() {
        let events = vec![StreamEvent::new(0, "k").with("other", -1.0)];
        let spec = PatternSpec {
            steps: vec![PatternStep {
                field: "ret".to_string(),
                op: CmpOp::Lt,
                value: 0.0,
            }],
            within_ms: 1000,
            contiguity: Contiguity::Strict,
        };
        assert!(match_pattern(&events, &spec).is_empty());
    }
}
