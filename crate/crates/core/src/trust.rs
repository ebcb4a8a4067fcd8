//! Trust scoring: metric blending, inactivity decay, bounded recovery,
//! per-round smoothing, and rehabilitation capping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NodeId;

/// Weights on the four trust metrics (accuracy, consistency, data quality,
/// frequency). Must be non-negative and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for TrustWeights {
    fn default() -> Self {
        TrustWeights {
            alpha: 0.4,
            beta: 0.3,
            gamma: 0.2,
            delta: 0.1,
        }
    }
}

impl TrustWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.alpha, self.beta, self.gamma, self.delta];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("trust weights must be non-negative".into()));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "trust weights must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// The four normalized metrics feeding the blended trust score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub accuracy: f64,
    pub consistency: f64,
    pub data_quality: f64,
    pub frequency: f64,
}

impl MetricVector {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("consistency", self.consistency),
            ("data_quality", self.data_quality),
            ("frequency", self.frequency),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange(format!("metric {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Deployment parameters of the trust engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustParams {
    /// Decay rate per inactive round.
    pub lambda: f64,
    /// Recovery rate toward `t_max`.
    pub eta: f64,
    /// Maximum attainable trust.
    pub t_max: f64,
    /// Per-round blend smoothing: 1 replaces trust by the blended score.
    pub sigma: f64,
    /// Consistency smoothing factor.
    pub rho: f64,
    /// Trailing window (rounds) for the frequency metric.
    pub freq_window: u64,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            lambda: 0.05,
            eta: 0.2,
            t_max: 1.0,
            sigma: 0.5,
            rho: 0.3,
            freq_window: 10,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config("eta must be in [0,1]".into()));
        }
        if !(self.t_max > 0.0 && self.t_max <= 1.0) {
            return Err(Error::Config("t_max must be in (0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.sigma) || !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config("sigma and rho must be in [0,1]".into()));
        }
        if self.freq_window < 1 {
            return Err(Error::Config("freq_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Initial trust for newly registered nodes: admissible with zero margin.
pub const INITIAL_TRUST: f64 = 0.40;
/// Initial consistency for newly registered nodes: neutral.
pub const INITIAL_CONSISTENCY: f64 = 0.5;

/// Per-node trust state carried across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub node_id: NodeId,
    /// Current trust score.
    pub trust: f64,
    /// Trust as of the last active round; decay is anchored here so that
    /// repeated decay applications compose exactly.
    pub trust_at_last_active: f64,
    pub last_active_round: u64,
    pub consistency: f64,
    /// Carried frequency metric (used when no eligible round is in window).
    pub frequency: f64,
    /// Trailing `(eligible, submitted)` flags, newest last.
    pub participation: Vec<(bool, bool)>,
    /// Rehabilitation cap: trust clamped to `cap_value` while the current
    /// round is <= `cap_until`.
    pub cap_until: Option<u64>,
    pub cap_value: f64,
}

impl TrustState {
    pub fn new(node_id: NodeId, round: u64) -> Self {
        TrustState {
            node_id,
            trust: INITIAL_TRUST,
            trust_at_last_active: INITIAL_TRUST,
            last_active_round: round,
            consistency: INITIAL_CONSISTENCY,
            frequency: 1.0,
            participation: Vec::new(),
            cap_until: None,
            cap_value: 1.0,
        }
    }

    fn cap_active(&self, round: u64) -> bool {
        self.cap_until.map_or(false, |until| round <= until)
    }

    /// Clamp trust to the rehabilitation cap (if in force) and to [0, t_max].
    fn clamp(&mut self, round: u64, t_max: f64) {
        if self.cap_active(round) {
            self.trust = self.trust.min(self.cap_value);
        }
        self.trust = self.trust.clamp(0.0, t_max);
    }

    /// Impose a rehabilitation cap through `until` and clamp immediately.
    pub fn impose_cap(&mut self, cap_value: f64, until: u64) {
        self.cap_until = Some(until);
        self.cap_value = cap_value;
        self.trust = self.trust.min(cap_value);
        self.trust_at_last_active = self.trust_at_last_active.min(cap_value);
    }
}

/// Convex blend of the four metrics under the given weights.
pub fn blend_score(weights: &TrustWeights, metrics: &MetricVector) -> Result<f64> {
    weights.validate()?;
    metrics.validate()?;
    Ok(weights.alpha * metrics.accuracy
        + weights.beta * metrics.consistency
        + weights.gamma * metrics.data_quality
        + weights.delta * metrics.frequency)
}

/// Exponential inactivity decay anchored at the last active round.
pub fn apply_decay(state: &TrustState, current_round: u64, lambda: f64) -> TrustState {
    let dt = current_round.saturating_sub(state.last_active_round) as f64;
    let mut out = state.clone();
    out.trust = state.trust_at_last_active * (-lambda * dt).exp();
    out
}

/// Bounded growth toward `t_max` scaled by the improvement signal.
pub fn apply_recovery(
    state: &TrustState,
    improvement: f64,
    eta: f64,
    t_max: f64,
) -> Result<TrustState> {
    if !(0.0..=1.0).contains(&improvement) {
        return Err(Error::OutOfRange(format!(
            "improvement must be in [0,1], got {improvement}"
        )));
    }
    let mut out = state.clone();
    out.trust = (state.trust + eta * (t_max - state.trust) * improvement).min(t_max);
    Ok(out)
}

/// Full per-round trust update.
///
/// Inactive (no metrics): decay only. Active: smooth toward the blended
/// score, then apply recovery for positive improvement, then clamp to the
/// rehabilitation cap and [0, t_max]. The active round becomes the new
/// decay anchor.
pub fn update_trust(
    state: &TrustState,
    metrics: Option<&MetricVector>,
    weights: &TrustWeights,
    params: &TrustParams,
    current_round: u64,
    improvement: f64,
) -> Result<TrustState> {
    params.validate()?;
    match metrics {
        None => {
            let mut out = apply_decay(state, current_round, params.lambda);
            out.clamp(current_round, params.t_max);
            Ok(out)
        }
        Some(m) => {
            let blend = blend_score(weights, m)?;
            let mut out = state.clone();
            out.trust = (1.0 - params.sigma) * state.trust + params.sigma * blend;
            if improvement > 0.0 {
                out = apply_recovery(&out, improvement, params.eta, params.t_max)?;
            }
            out.clamp(current_round, params.t_max);
            out.consistency = m.consistency;
            out.frequency = m.frequency;
            out.last_active_round = current_round;
            out.trust_at_last_active = out.trust;
            Ok(out)
        }
    }
}
