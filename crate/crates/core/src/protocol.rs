//! Sequential testing protocols.
//!
//! A protocol is a pure state machine over p-values. Each test reads the
//! current state, derives a significance threshold `alpha_t`, decides, and
//! returns a *new* state; the old one is never touched. Every protocol also
//! has to say which state pairs form a legal step (`validate_transition`),
//! which is how the session layer catches timing and history corruption.
//!
//! Two protocols ship:
//!
//! * [`LordState`]: LORD++ online FDR control. Wealth starts at `w0`, is
//!   spread over future tests by a discount schedule, and each rejection at
//!   time `tau_j` earns back wealth for later tests:
//!
//!   ```text
//!   alpha_t = gamma_t * w0
//!           + (alpha - w0) * gamma_{t - tau_1}
//!           + alpha * sum_{j >= 2} gamma_{t - tau_j}
//!   ```
//!
//!   with `gamma_k = 0` past the schedule horizon. A rejection at `t` only
//!   affects tests after `t`.
//! * [`NaiveState`]: a fixed threshold with no multiplicity correction,
//!   used as the comparator in simulations.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Horizon of the default discount schedule.
pub const DEFAULT_HORIZON: usize = 1_000_000;

/// Tolerance on the sum-to-one normalization of a schedule.
const SCHEDULE_SUM_TOL: f64 = 1e-9;

pub const TIMING_VIOLATION_MESSAGE: &str = "Time must advance sequentially.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolErrorKind {
    InvalidTransition,
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?}: {message}")]
pub struct ProtocolError {
    kind: ProtocolErrorKind,
    message: String,
}

impl ProtocolError {
    fn new(kind: ProtocolErrorKind, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.is_empty() {
            message = format!("{kind:?}");
        }
        Self { kind, message }
    }

    pub fn invalid_config(message: impl Into<String>) -> Self {
        Self::new(ProtocolErrorKind::InvalidConfig, message)
    }

    pub fn invalid_transition(message: impl Into<String>) -> Self {
        Self::new(ProtocolErrorKind::InvalidTransition, message)
    }

    pub fn kind(&self) -> ProtocolErrorKind {
        self.kind
    }

    pub fn message(&self) -> &str {
        &self.message
    }
}

/// Outcome of a single protocol step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvanceResult<S> {
    pub is_discovery: bool,
    pub threshold: f64,
    pub new_state: S,
}

/// A sequential statistical protocol.
///
/// Implementations are plain values: `advance` returns the successor state
/// and leaves `self` alone. `validate_transition` has no default on
/// purpose; each protocol must spell out its own legality rule.
pub trait StatisticalProtocol: Clone + PartialEq + fmt::Debug {
    type Config;

    fn initialize(config: Self::Config) -> Result<Self, ProtocolError>;

    /// Number of tests consumed so far.
    fn current_time(&self) -> u64;

    /// Threshold the next test (index `current_time() + 1`) will face.
    fn next_threshold(&self) -> Result<f64, ProtocolError>;

    fn advance(&self, p_value: f64) -> Result<AdvanceResult<Self>, ProtocolError>;

    fn validate_transition(&self, new: &Self) -> Result<(), ProtocolError>;

    /// Number of rejections recorded in the state.
    fn rejection_count(&self) -> usize;
}

fn check_p_value(p_value: f64) -> Result<(), ProtocolError> {
    if (0.0..=1.0).contains(&p_value) {
        Ok(())
    } else {
        Err(ProtocolError::invalid_config(format!(
            "p-value {p_value} outside [0, 1]"
        )))
    }
}

fn check_time_step(old: u64, new: u64) -> Result<(), ProtocolError> {
    if old.checked_add(1) == Some(new) {
        Ok(())
    } else {
        Err(ProtocolError::invalid_transition(TIMING_VIOLATION_MESSAGE))
    }
}

// ---------------------------------------------------------------------------
// Discount schedule
// ---------------------------------------------------------------------------

/// Non-increasing, strictly positive weights summing to one.
///
/// Weights are shared behind an `Arc`: states are cloned on every step and
/// the default schedule is a million entries long.
#[derive(Clone)]
pub struct GammaSchedule {
    weights: Arc<[f64]>,
}

impl GammaSchedule {
    /// Default schedule `gamma_j ∝ ln(max(j, 2)) / (j * exp(sqrt(ln j)))`,
    /// truncated at `horizon` and renormalized.
    pub fn new(horizon: usize) -> Result<Self, ProtocolError> {
        if horizon < 1 {
            return Err(ProtocolError::invalid_config(
                "schedule horizon must be at least 1",
            ));
        }
        let raw: Vec<f64> = (1..=horizon)
            .map(|j| {
                let j = j as f64;
                j.max(2.0).ln() / (j * j.ln().sqrt().exp())
            })
            .collect();
        let total = kahan_sum(&raw);
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        Self::from_weights(weights)
    }

    /// The default schedule at [`DEFAULT_HORIZON`], computed once per process.
    pub fn default_schedule() -> Self {
        static DEFAULT: OnceLock<GammaSchedule> = OnceLock::new();
        DEFAULT
            .get_or_init(|| Self::new(DEFAULT_HORIZON).expect("default horizon is positive"))
            .clone()
    }

    /// Wraps caller-provided weights after checking the schedule invariants.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, ProtocolError> {
        if weights.is_empty() {
            return Err(ProtocolError::invalid_config("schedule has no weights"));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ProtocolError::invalid_config(format!(
                "schedule weight {} is not strictly positive",
                i + 1
            )));
        }
        if let Some(i) = weights.windows(2).position(|w| w[1] > w[0]) {
            return Err(ProtocolError::invalid_config(format!(
                "schedule weights increase at index {}",
                i + 2
            )));
        }
        let total = kahan_sum(&weights);
        if (total - 1.0).abs() > SCHEDULE_SUM_TOL {
            return Err(ProtocolError::invalid_config(format!(
                "schedule weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            weights: weights.into(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `gamma_k` with 1-based `k`; zero past the horizon and for `k = 0`.
    pub fn gamma(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        usize::try_from(k - 1)
            .ok()
            .and_then(|i| self.weights.get(i))
            .copied()
            .unwrap_or(0.0)
    }
}

impl PartialEq for GammaSchedule {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.weights, &other.weights) || self.weights == other.weights
    }
}

impl fmt::Debug for GammaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GammaSchedule")
            .field("horizon", &self.horizon())
            .field("gamma_1", &self.weights[0])
            .finish()
    }
}

fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

// ---------------------------------------------------------------------------
// LORD++
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LordConfig {
    pub alpha: f64,
    pub w0: f64,
    pub schedule: GammaSchedule,
}

impl LordConfig {
    /// `w0 = alpha / 2` over the default schedule.
    pub fn with_defaults(alpha: f64) -> Self {
        Self {
            alpha,
            w0: alpha / 2.0,
            schedule: GammaSchedule::default_schedule(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let Self { alpha, w0, .. } = *self;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ProtocolError::invalid_config(format!(
                "alpha = {alpha} violates 0 < alpha < 1"
            )));
        }
        if w0.is_nan() || w0 <= 0.0 {
            return Err(ProtocolError::invalid_config(format!(
                "w0 = {w0} violates w0 > 0"
            )));
        }
        if w0 > alpha {
            return Err(ProtocolError::invalid_config(format!(
                "w0 = {w0} violates w0 <= alpha = {alpha}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LordState {
    config: LordConfig,
    current_time: u64,
    rejection_times: Vec<u64>,
}

impl LordState {
    pub fn config(&self) -> &LordConfig {
        &self.config
    }

    pub fn rejection_times(&self) -> &[u64] {
        &self.rejection_times
    }

    /// Builds a state directly, checking its internal invariants. Used for
    /// replaying recorded histories.
    pub fn from_parts(
        config: LordConfig,
        current_time: u64,
        rejection_times: Vec<u64>,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        if rejection_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProtocolError::invalid_config(
                "rejection times must be strictly increasing",
            ));
        }
        if rejection_times
            .iter()
            .any(|&tau| tau == 0 || tau > current_time)
        {
            return Err(ProtocolError::invalid_config(format!(
                "rejection times must lie in 1..={current_time}"
            )));
        }
        Ok(Self {
            config,
            current_time,
            rejection_times,
        })
    }

    /// LORD++ threshold for test `current_time + 1`. Always finite and
    /// below `alpha`; zero only once the schedule horizon is exhausted.
    pub fn threshold(&self) -> f64 {
        let t = self.current_time + 1;
        let LordConfig {
            alpha,
            w0,
            ref schedule,
        } = self.config;
        let mut value = schedule.gamma(t) * w0;
        if let Some((&first, rest)) = self.rejection_times.split_first() {
            value += (alpha - w0) * schedule.gamma(t - first);
            value += alpha * rest.iter().map(|&tau| schedule.gamma(t - tau)).sum::<f64>();
        }
        value
    }
}

impl StatisticalProtocol for LordState {
    type Config = LordConfig;

    fn initialize(config: LordConfig) -> Result<Self, ProtocolError> {
        config.validate()?;
        Ok(Self {
            config,
            current_time: 0,
            rejection_times: Vec::new(),
        })
    }

    fn current_time(&self) -> u64 {
        self.current_time
    }

    fn next_threshold(&self) -> Result<f64, ProtocolError> {
        let horizon = self.config.schedule.horizon() as u64;
        if self.current_time >= horizon {
            return Err(ProtocolError::invalid_config(format!(
                "schedule horizon {horizon} exhausted"
            )));
        }
        Ok(self.threshold())
    }

    fn advance(&self, p_value: f64) -> Result<AdvanceResult<Self>, ProtocolError> {
        check_p_value(p_value)?;
        let threshold = self.next_threshold()?;
        let is_discovery = p_value <= threshold;
        let mut new_state = self.clone();
        new_state.current_time += 1;
        if is_discovery {
            new_state.rejection_times.push(new_state.current_time);
        }
        Ok(AdvanceResult {
            is_discovery,
            threshold,
            new_state,
        })
    }

    fn validate_transition(&self, new: &Self) -> Result<(), ProtocolError> {
        check_time_step(self.current_time, new.current_time)?;
        let old = &self.rejection_times;
        let history_ok = match new.rejection_times.len() {
            n if n == old.len() => new.rejection_times == *old,
            n if n == old.len() + 1 => {
                new.rejection_times[..old.len()] == old[..]
                    && new.rejection_times[old.len()] == new.current_time
            }
            _ => false,
        };
        if history_ok {
            Ok(())
        } else {
            Err(ProtocolError::invalid_transition(
                "Rejection history must only grow by the current test.",
            ))
        }
    }

    fn rejection_count(&self) -> usize {
        self.rejection_times.len()
    }
}

// ---------------------------------------------------------------------------
// Naive fixed threshold
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveConfig {
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveState {
    alpha: f64,
    current_time: u64,
    rejections: usize,
}

impl NaiveState {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl StatisticalProtocol for NaiveState {
    type Config = NaiveConfig;

    fn initialize(config: NaiveConfig) -> Result<Self, ProtocolError> {
        let alpha = config.alpha;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ProtocolError::invalid_config(format!(
                "alpha = {alpha} violates 0 < alpha < 1"
            )));
        }
        Ok(Self {
            alpha,
            current_time: 0,
            rejections: 0,
        })
    }

    fn current_time(&self) -> u64 {
        self.current_time
    }

    fn next_threshold(&self) -> Result<f64, ProtocolError> {
        Ok(self.alpha)
    }

    fn advance(&self, p_value: f64) -> Result<AdvanceResult<Self>, ProtocolError> {
        check_p_value(p_value)?;
        let is_discovery = p_value <= self.alpha;
        Ok(AdvanceResult {
            is_discovery,
            threshold: self.alpha,
            new_state: Self {
                alpha: self.alpha,
                current_time: self.current_time + 1,
                rejections: self.rejections + usize::from(is_discovery),
            },
        })
    }

    fn validate_transition(&self, new: &Self) -> Result<(), ProtocolError> {
        check_time_step(self.current_time, new.current_time)?;
        if new.alpha != self.alpha {
            return Err(ProtocolError::invalid_transition(
                "Fixed threshold must not change.",
            ));
        }
        if new.rejections != self.rejections && new.rejections != self.rejections + 1 {
            return Err(ProtocolError::invalid_transition(
                "Rejection count must only grow by the current test.",
            ));
        }
        Ok(())
    }

    fn rejection_count(&self) -> usize {
        self.rejections
    }
}

// ---------------------------------------------------------------------------
// Runtime-selected protocol
// ---------------------------------------------------------------------------

/// Protocol chosen at run time (CLI, simulations comparing both).
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolConfig {
    Lord(LordConfig),
    Naive(NaiveConfig),
}

impl ProtocolConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Lord(_) => "LORD++",
            Self::Naive(_) => "naive",
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Self::Lord(c) => c.alpha,
            Self::Naive(c) => c.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolState {
    Lord(LordState),
    Naive(NaiveState),
}

impl ProtocolState {
    pub fn as_lord(&self) -> Option<&LordState> {
        match self {
            Self::Lord(s) => Some(s),
            Self::Naive(_) => None,
        }
    }
}

fn wrap<S>(r: AdvanceResult<S>, f: impl FnOnce(S) -> ProtocolState) -> AdvanceResult<ProtocolState> {
    AdvanceResult {
        is_discovery: r.is_discovery,
        threshold: r.threshold,
        new_state: f(r.new_state),
    }
}

impl StatisticalProtocol for ProtocolState {
    type Config = ProtocolConfig;

    fn initialize(config: ProtocolConfig) -> Result<Self, ProtocolError> {
        match config {
            ProtocolConfig::Lord(c) => LordState::initialize(c).map(Self::Lord),
            ProtocolConfig::Naive(c) => NaiveState::initialize(c).map(Self::Naive),
        }
    }

    fn current_time(&self) -> u64 {
        match self {
            Self::Lord(s) => s.current_time(),
            Self::Naive(s) => s.current_time(),
        }
    }

    fn next_threshold(&self) -> Result<f64, ProtocolError> {
        match self {
            Self::Lord(s) => s.next_threshold(),
            Self::Naive(s) => s.next_threshold(),
        }
    }

    fn advance(&self, p_value: f64) -> Result<AdvanceResult<Self>, ProtocolError> {
        match self {
            Self::Lord(s) => s.advance(p_value).map(|r| wrap(r, Self::Lord)),
            Self::Naive(s) => s.advance(p_value).map(|r| wrap(r, Self::Naive)),
        }
    }

    fn validate_transition(&self, new: &Self) -> Result<(), ProtocolError> {
        match (self, new) {
            (Self::Lord(a), Self::Lord(b)) => a.validate_transition(b),
            (Self::Naive(a), Self::Naive(b)) => a.validate_transition(b),
            _ => Err(ProtocolError::invalid_transition(
                "Protocol kind changed between states.",
            )),
        }
    }

    fn rejection_count(&self) -> usize {
        match self {
            Self::Lord(s) => s.rejection_count(),
            Self::Naive(s) => s.rejection_count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct double-precision summation of the unnormalized series for
    // H = 10^6 (numpy + math.fsum), frozen here.
    const GOLDEN_GAMMA_1: f64 = 0.10257321060881609;
    const GOLDEN_GAMMA_2: f64 = 0.022306430536176917;
    const GOLDEN_ALPHA_1: f64 = 0.0025643302652204026;

    fn lord(alpha: f64, w0: f64, horizon: usize) -> LordState {
        LordState::initialize(LordConfig {
            alpha,
            w0,
            schedule: GammaSchedule::new(horizon).unwrap(),
        })
        .unwrap()
    }

    #[test]
    fn single_weight_schedule() {
        let s = GammaSchedule::new(1).unwrap();
        assert_eq!(s.weights(), &[1.0]);
    }

    #[test]
    fn zero_horizon_rejected() {
        let err = GammaSchedule::new(0).unwrap_err();
        assert_eq!(err.kind(), ProtocolErrorKind::InvalidConfig);
    }

    #[test]
    fn default_schedule_matches_golden() {
        let s = GammaSchedule::default_schedule();
        assert_eq!(s.horizon(), DEFAULT_HORIZON);
        assert!((s.weights()[0] - GOLDEN_GAMMA_1).abs() < 1e-15);
        assert!((s.weights()[1] - GOLDEN_GAMMA_2).abs() < 1e-15);
        assert!((kahan_sum(s.weights()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn small_schedule_shape() {
        for h in [1, 2, 3, 10, 1000] {
            let s = GammaSchedule::new(h).unwrap();
            assert!((kahan_sum(s.weights()) - 1.0).abs() < 1e-9);
            assert!(s.weights().windows(2).all(|w| w[0] >= w[1]));
            assert!(s.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn from_weights_checks_invariants() {
        assert!(GammaSchedule::from_weights(vec![0.5, 0.5]).is_ok());
        assert!(GammaSchedule::from_weights(vec![0.4, 0.6]).is_err());
        assert!(GammaSchedule::from_weights(vec![1.0, 0.0]).is_err());
        assert!(GammaSchedule::from_weights(vec![0.5, 0.4]).is_err());
        assert!(GammaSchedule::from_weights(vec![]).is_err());
    }

    #[test]
    fn gamma_indexing() {
        let s = GammaSchedule::new(3).unwrap();
        assert_eq!(s.gamma(0), 0.0);
        assert_eq!(s.gamma(1), s.weights()[0]);
        assert_eq!(s.gamma(3), s.weights()[2]);
        assert_eq!(s.gamma(4), 0.0);
        assert_eq!(s.gamma(u64::MAX), 0.0);
    }

    #[test]
    fn config_bounds() {
        let sched = GammaSchedule::new(10).unwrap();
        let mk = |alpha, w0| LordConfig {
            alpha,
            w0,
            schedule: sched.clone(),
        };
        assert!(LordState::initialize(mk(0.05, 0.025)).is_ok());
        assert!(LordState::initialize(mk(0.05, 0.05)).is_ok());
        let err = LordState::initialize(mk(0.05, 0.06)).unwrap_err();
        assert_eq!(err.kind(), ProtocolErrorKind::InvalidConfig);
        assert!(err.message().contains("w0 <= alpha"));
        assert!(LordState::initialize(mk(0.05, 0.0)).is_err());
        assert!(LordState::initialize(mk(1.0, 0.5)).is_err());
        assert!(LordState::initialize(mk(0.0, 0.0)).is_err());
        assert!(LordState::initialize(mk(f64::NAN, 0.01)).is_err());
        assert!(NaiveState::initialize(NaiveConfig { alpha: 1.5 }).is_err());
    }

    #[test]
    fn fresh_state() {
        let s = LordState::initialize(LordConfig::with_defaults(0.05)).unwrap();
        assert_eq!(s.current_time(), 0);
        assert!(s.rejection_times().is_empty());
        assert_eq!(s.config().w0, 0.025);
    }

    #[test]
    fn first_threshold_is_gamma1_w0() {
        let s = LordState::initialize(LordConfig::with_defaults(0.05)).unwrap();
        assert!((s.threshold() - GOLDEN_ALPHA_1).abs() < 1e-15);
        let small = lord(0.05, 0.02, 10);
        assert_eq!(small.threshold(), small.config().schedule.gamma(1) * 0.02);
    }

    #[test]
    fn threshold_after_one_rejection() {
        let s = lord(0.05, 0.02, 10);
        let r = s.advance(0.0).unwrap();
        assert!(r.is_discovery);
        let g = &s.config().schedule;
        let expected = g.gamma(2) * 0.02 + (0.05 - 0.02) * g.gamma(1);
        assert!((r.new_state.threshold() - expected).abs() < 1e-15);
        assert_eq!(r.new_state.rejection_times(), &[1]);
    }

    #[test]
    fn threshold_with_two_rejections() {
        let g = GammaSchedule::new(10).unwrap();
        let cfg = LordConfig {
            alpha: 0.1,
            w0: 0.04,
            schedule: g.clone(),
        };
        let s = LordState::from_parts(cfg, 5, vec![2, 4]).unwrap();
        let expected = g.gamma(6) * 0.04 + 0.06 * g.gamma(4) + 0.1 * g.gamma(2);
        assert!((s.threshold() - expected).abs() < 1e-15);
    }

    #[test]
    fn p_one_never_discovers() {
        let s = lord(0.05, 0.025, 100);
        let r = s.advance(1.0).unwrap();
        assert!(!r.is_discovery);
        assert_eq!(r.threshold, s.config().schedule.gamma(1) * 0.025);
        assert_eq!(r.new_state.current_time(), 1);
        assert!(r.new_state.rejection_times().is_empty());
    }

    #[test]
    fn boundary_p_equal_threshold_is_discovery() {
        let s = lord(0.05, 0.025, 100);
        let t = s.threshold();
        assert!(s.advance(t).unwrap().is_discovery);
    }

    #[test]
    fn out_of_range_p_rejected() {
        let s = lord(0.05, 0.025, 100);
        for p in [-0.1, 1.01, f64::NAN] {
            let err = s.advance(p).unwrap_err();
            assert_eq!(err.kind(), ProtocolErrorKind::InvalidConfig);
        }
    }

    #[test]
    fn horizon_exhaustion_is_an_error() {
        let s = lord(0.05, 0.025, 2);
        let s = s.advance(0.5).unwrap().new_state;
        let s = s.advance(0.5).unwrap().new_state;
        assert!(s.advance(0.5).is_err());
    }

    #[test]
    fn naive_fixed_threshold() {
        let s = NaiveState::initialize(NaiveConfig { alpha: 0.05 }).unwrap();
        let r = s.advance(0.01).unwrap();
        assert!(r.is_discovery);
        assert_eq!(r.threshold, 0.05);
        assert_eq!(r.new_state.current_time(), 1);
    }

    #[test]
    fn table2_row_two_is_not_a_discovery() {
        let g = GammaSchedule::from_weights(vec![1.0]).unwrap();
        let s = LordState::initialize(LordConfig {
            alpha: 0.00494,
            w0: 0.00247,
            schedule: g,
        })
        .unwrap();
        assert_eq!(s.threshold(), 0.00247);
        assert!(!s.advance(0.04784).unwrap().is_discovery);
    }

    #[test]
    fn transitions() {
        let g = GammaSchedule::new(10).unwrap();
        let cfg = LordConfig {
            alpha: 0.05,
            w0: 0.025,
            schedule: g,
        };
        let st = |t, r: Vec<u64>| LordState::from_parts(cfg.clone(), t, r).unwrap();

        assert!(st(3, vec![1]).validate_transition(&st(4, vec![1])).is_ok());
        assert!(st(3, vec![1]).validate_transition(&st(4, vec![1, 4])).is_ok());

        let err = st(3, vec![]).validate_transition(&st(5, vec![])).unwrap_err();
        assert_eq!(err.kind(), ProtocolErrorKind::InvalidTransition);
        assert_eq!(err.message(), TIMING_VIOLATION_MESSAGE);
        assert!(st(3, vec![]).validate_transition(&st(3, vec![])).is_err());

        let err = st(3, vec![1, 3])
            .validate_transition(&st(4, vec![1, 4]))
            .unwrap_err();
        assert_eq!(err.kind(), ProtocolErrorKind::InvalidTransition);
        assert_ne!(err.message(), TIMING_VIOLATION_MESSAGE);
        assert!(st(3, vec![1, 3]).validate_transition(&st(4, vec![1])).is_err());
        assert!(st(3, vec![1])
            .validate_transition(&st(4, vec![1, 2, 4]))
            .is_err());
    }

    #[test]
    fn from_parts_checks_history() {
        let cfg = LordConfig::with_defaults(0.05);
        assert!(LordState::from_parts(cfg.clone(), 3, vec![2, 1]).is_err());
        assert!(LordState::from_parts(cfg.clone(), 3, vec![4]).is_err());
        assert!(LordState::from_parts(cfg.clone(), 3, vec![0]).is_err());
        assert!(LordState::from_parts(cfg, 3, vec![1, 3]).is_ok());
    }

    #[test]
    fn dynamic_dispatch_matches_concrete() {
        let cfg = LordConfig::with_defaults(0.05);
        let a = LordState::initialize(cfg.clone()).unwrap();
        let b = ProtocolState::initialize(ProtocolConfig::Lord(cfg)).unwrap();
        let ra = a.advance(0.001).unwrap();
        let rb = b.advance(0.001).unwrap();
        assert_eq!(ra.threshold, rb.threshold);
        assert_eq!(ra.is_discovery, rb.is_discovery);
        assert_eq!(rb.new_state.as_lord(), Some(&ra.new_state));

        let n = ProtocolState::initialize(ProtocolConfig::Naive(NaiveConfig { alpha: 0.05 }))
            .unwrap();
        let advanced = n.advance(0.5).unwrap().new_state;
        assert!(b.validate_transition(&advanced).is_err());
    }
}
