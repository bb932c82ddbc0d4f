//! Transactional testing sessions.
//!
//! A [`Session`] owns the protocol state and the outcome log. The only way
//! to get a p-value into it is through [`Session::test_hypothesis`] (or the
//! batch driver built on the same step), and that step always runs the
//! protocol update and transition check before anything is committed.
//!
//! Commit rules:
//!
//! * executor reports a failure: an `ExecutionFailed` outcome is logged and
//!   the protocol state is left as is (no time step, no wealth spent);
//! * executor reports a p-value: the successor state is computed from a
//!   copy, validated against the current state, and only then swapped in;
//! * the protocol rejects the step: the session halts for good, keeping the
//!   last valid state. Every later call returns [`ResearchError::SessionHalted`].

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{ProtocolError, StatisticalProtocol};
use crate::scaffold::Scaffold;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResearchError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(ProtocolError),
    #[error("session halted after an earlier error: {0}")]
    SessionHalted(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub test_index: u64,
    pub idea_label: String,
    pub p_value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeStatus {
    Tested {
        p_value: f64,
        threshold: f64,
        is_discovery: bool,
    },
    ExecutionFailed {
        reason: String,
    },
}

/// One logged attempt. For failed executions `test_index` is the slot the
/// test would have taken; it is not consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub test_index: u64,
    pub idea_label: String,
    pub status: OutcomeStatus,
}

impl TestOutcome {
    pub fn is_tested(&self) -> bool {
        matches!(self.status, OutcomeStatus::Tested { .. })
    }

    pub fn is_discovery(&self) -> bool {
        matches!(self.status, OutcomeStatus::Tested { is_discovery: true, .. })
    }

    pub fn threshold(&self) -> Option<f64> {
        match self.status {
            OutcomeStatus::Tested { threshold, .. } => Some(threshold),
            OutcomeStatus::ExecutionFailed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionStatus {
    Active,
    Halted(ResearchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace<S> {
    pub outcomes: Vec<TestOutcome>,
    pub final_state: S,
    pub status: SessionStatus,
}

impl<S> SessionTrace<S> {
    pub fn tested_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_tested()).count()
    }

    pub fn discovery_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_discovery()).count()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.outcomes.iter().filter_map(TestOutcome::threshold).collect()
    }

    pub fn is_halted(&self) -> bool {
        matches!(self.status, SessionStatus::Halted(_))
    }
}

#[derive(Debug, Clone)]
pub struct Session<S: StatisticalProtocol> {
    state: S,
    outcomes: Vec<TestOutcome>,
    status: SessionStatus,
}

impl<S: StatisticalProtocol> Session<S> {
    pub fn open(config: S::Config) -> Result<Self, ResearchError> {
        let state = S::initialize(config).map_err(ResearchError::ProtocolViolation)?;
        Ok(Self::from_state(state))
    }

    /// Starts a session from an already-initialized state.
    pub fn from_state(state: S) -> Self {
        Self {
            state,
            outcomes: Vec::new(),
            status: SessionStatus::Active,
        }
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn outcomes(&self) -> &[TestOutcome] {
        &self.outcomes
    }

    pub fn status(&self) -> &SessionStatus {
        &self.status
    }

    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    pub fn trace(&self) -> SessionTrace<S> {
        SessionTrace {
            outcomes: self.outcomes.clone(),
            final_state: self.state.clone(),
            status: self.status.clone(),
        }
    }

    pub fn into_trace(self) -> SessionTrace<S> {
        SessionTrace {
            outcomes: self.outcomes,
            final_state: self.state,
            status: self.status,
        }
    }

    fn ensure_active(&self) -> Result<(), ResearchError> {
        match &self.status {
            SessionStatus::Active => Ok(()),
            SessionStatus::Halted(err) => Err(ResearchError::SessionHalted(err.to_string())),
        }
    }

    /// Runs one experiment and accounts for it.
    ///
    /// `execute` crosses the trust boundary; it returns the p-value or a
    /// failure description. There is no way to observe the p-value without
    /// the protocol step below running.
    pub fn test_hypothesis<F>(
        &mut self,
        scaffold: &Scaffold,
        execute: F,
    ) -> Result<Option<Discovery>, ResearchError>
    where
        F: FnOnce(&Scaffold) -> Result<f64, String>,
    {
        self.ensure_active()?;
        let result = execute(scaffold);
        self.account(scaffold.idea_label(), result)
    }

    fn account(
        &mut self,
        label: &str,
        result: Result<f64, String>,
    ) -> Result<Option<Discovery>, ResearchError> {
        self.ensure_active()?;
        let slot = self.state.current_time() + 1;
        let p_value = match result {
            Ok(p) => p,
            Err(reason) => {
                self.outcomes.push(TestOutcome {
                    test_index: slot,
                    idea_label: label.to_owned(),
                    status: OutcomeStatus::ExecutionFailed { reason },
                });
                return Ok(None);
            }
        };

        let step = self
            .state
            .advance(p_value)
            .and_then(|step| self.state.validate_transition(&step.new_state).map(|()| step));
        let step = match step {
            Ok(step) => step,
            Err(err) => {
                let err = ResearchError::ProtocolViolation(err);
                self.status = SessionStatus::Halted(err.clone());
                return Err(err);
            }
        };

        let test_index = step.new_state.current_time();
        self.state = step.new_state;
        self.outcomes.push(TestOutcome {
            test_index,
            idea_label: label.to_owned(),
            status: OutcomeStatus::Tested {
                p_value,
                threshold: step.threshold,
                is_discovery: step.is_discovery,
            },
        });
        Ok(step.is_discovery.then(|| Discovery {
            test_index,
            idea_label: label.to_owned(),
            p_value,
            threshold: step.threshold,
        }))
    }

    /// Feeds known p-values through the same accounting step, labelling
    /// them `h1`, `h2`, ... by position. Stops at the first halt.
    pub fn run_protocol_sequence(&mut self, p_values: &[f64]) -> SessionTrace<S> {
        for (i, &p) in p_values.iter().enumerate() {
            if self.account(&format!("h{}", i + 1), Ok(p)).is_err() {
                break;
            }
        }
        self.trace()
    }

    /// Like [`run_protocol_sequence`](Self::run_protocol_sequence) with
    /// `None` entries standing for failed executions.
    pub fn run_attempts(&mut self, attempts: &[Option<f64>]) -> SessionTrace<S> {
        for (i, attempt) in attempts.iter().enumerate() {
            let result = attempt.ok_or_else(|| "execution failed".to_owned());
            if self.account(&format!("h{}", i + 1), result).is_err() {
                break;
            }
        }
        self.trace()
    }
}

// ---------------------------------------------------------------------------
// Trace export / replay
// ---------------------------------------------------------------------------

/// One line of the JSON-lines trace export.
///
/// ```text
/// {"index":1,"label":"RBF","status":"tested","p_value":9e-5,"threshold":0.00027,"discovery":true}
/// {"index":2,"label":"Scaling","status":"execution_failed","p_value":null,"threshold":null,"discovery":null,"reason":"..."}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: u64,
    pub label: String,
    pub status: RecordStatus,
    pub p_value: Option<f64>,
    pub threshold: Option<f64>,
    pub discovery: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Tested,
    ExecutionFailed,
}

impl From<&TestOutcome> for TraceRecord {
    fn from(o: &TestOutcome) -> Self {
        match &o.status {
            OutcomeStatus::Tested {
                p_value,
                threshold,
                is_discovery,
            } => Self {
                index: o.test_index,
                label: o.idea_label.clone(),
                status: RecordStatus::Tested,
                p_value: Some(*p_value),
                threshold: Some(*threshold),
                discovery: Some(*is_discovery),
                reason: None,
            },
            OutcomeStatus::ExecutionFailed { reason } => Self {
                index: o.test_index,
                label: o.idea_label.clone(),
                status: RecordStatus::ExecutionFailed,
                p_value: None,
                threshold: None,
                discovery: None,
                reason: Some(reason.clone()),
            },
        }
    }
}

pub fn write_trace<W: Write>(outcomes: &[TestOutcome], mut out: W) -> io::Result<()> {
    for o in outcomes {
        let line = serde_json::to_string(&TraceRecord::from(o))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TraceReadError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a JSON-lines trace; blank lines are skipped.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, TraceReadError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|source| TraceReadError::Parse { line: i + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayRow {
    pub p_value: f64,
    pub threshold: f64,
    pub claimed_discovery: bool,
}

impl ReplayRow {
    pub fn new(p_value: f64, threshold: f64, claimed_discovery: bool) -> Self {
        Self {
            p_value,
            threshold,
            claimed_discovery,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inconsistency {
    /// 1-based position in the replayed rows.
    pub row: usize,
    pub row_data: ReplayRow,
    pub expected_discovery: bool,
}

impl fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.row_data;
        write!(
            f,
            "row {}: p = {} vs threshold {} implies discovery = {}, trace claims {}",
            self.row, r.p_value, r.threshold, self.expected_discovery, r.claimed_discovery
        )
    }
}

/// Checks every recorded decision against `p <= threshold`. Thresholds are
/// taken as recorded, not recomputed.
pub fn replay_trace(rows: &[ReplayRow]) -> Result<(), Vec<Inconsistency>> {
    let bad: Vec<Inconsistency> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let expected = r.p_value <= r.threshold;
            (expected != r.claimed_discovery).then(|| Inconsistency {
                row: i + 1,
                row_data: *r,
                expected_discovery: expected,
            })
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

/// Tested records of an exported trace as replay rows. Records with a
/// missing field come back as errors naming the index.
pub fn replay_rows(records: &[TraceRecord]) -> Result<Vec<ReplayRow>, String> {
    records
        .iter()
        .filter(|r| r.status == RecordStatus::Tested)
        .map(|r| match (r.p_value, r.threshold, r.discovery) {
            (Some(p), Some(t), Some(d)) => Ok(ReplayRow::new(p, t, d)),
            _ => Err(format!("tested record {} is missing p_value/threshold/discovery", r.index)),
        })
        .collect()
}
