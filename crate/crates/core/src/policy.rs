//! Deterministic policy enforcement: status classification, admission-set
//! formation, screening, strike/slash bookkeeping, payouts, and aggregator
//! election.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NodeId;

/// Robust aggregation method used each round. `UnweightedMean` exists only
/// for ablation runs and is not robust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggMethod {
    Median,
    TrimmedMean,
    UnweightedMean,
}

/// All policy thresholds and constants, plus engine parameters. The default
/// is the shipped reference profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Trust threshold for Active status.
    pub tau_admit: f64,
    /// Trust threshold below which a node is suspended.
    pub tau_prob: f64,
    /// Probation admission cadence in rounds.
    pub probation_cadence: u64,
    /// Suspension length in rounds.
    pub suspension_rounds: u64,
    /// Update-quality screening threshold.
    pub tau_d: f64,
    /// Fraction of the computed share a probation node may receive.
    pub probation_payout_cap: f64,
    /// Strikes within the window that trigger a slash.
    pub strikes_to_slash: u64,
    /// Strike window in rounds.
    pub strike_window: u64,
    /// Fraction of stake forfeited on slash.
    pub slash_fraction: f64,
    /// Trust cap during rehabilitation.
    pub rehab_trust_cap: f64,
    /// Rehabilitation window in rounds.
    pub rehab_window: u64,
    /// Maximum participants per round.
    pub k_max: u64,
    /// Per-round reward budget in whole tokens.
    pub round_budget: f64,
    /// Trim fraction per side for the trimmed mean.
    pub trim: f64,
    pub agg_method: AggMethod,
    /// Ablation switch: when false every submission is accepted and no
    /// strikes are recorded.
    pub screening_enabled: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            tau_admit: 0.40,
            tau_prob: 0.25,
            probation_cadence: 2,
            suspension_rounds: 2,
            tau_d: 0.20,
            probation_payout_cap: 0.5,
            strikes_to_slash: 2,
            strike_window: 5,
            slash_fraction: 0.10,
            rehab_trust_cap: 0.60,
            rehab_window: 5,
            k_max: 64,
            round_budget: 100.0,
            trim: 0.1,
            agg_method: AggMethod::Median,
            screening_enabled: true,
        }
    }
}

impl PolicyConfig {
    pub fn reference_profile() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_prob && self.tau_prob < self.tau_admit && self.tau_admit <= 1.0) {
            return Err(Error::Config(
                "require 0 <= tau_prob < tau_admit <= 1".into(),
            ));
        }
        for (name, v) in [
            ("probation_cadence", self.probation_cadence),
            ("suspension_rounds", self.suspension_rounds),
            ("strikes_to_slash", self.strikes_to_slash),
            ("strike_window", self.strike_window),
            ("rehab_window", self.rehab_window),
            ("k_max", self.k_max),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("probation_payout_cap", self.probation_payout_cap),
            ("slash_fraction", self.slash_fraction),
            ("trim", self.trim),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau_d) {
            return Err(Error::Config("tau_d must be in [0,1]".into()));
        }
        if !(self.rehab_trust_cap > 0.0 && self.rehab_trust_cap <= 1.0) {
            return Err(Error::Config("rehab_trust_cap must be in (0,1]".into()));
        }
        if self.round_budget < 0.0 {
            return Err(Error::Config("round_budget must be >= 0".into()));
        }
        if self.trim >= 0.5 {
            return Err(Error::Config("trim must be < 0.5".into()));
        }
        Ok(())
    }
}

/// Participation status of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeStatus {
    Active,
    Probation {
        last_admitted_round: Option<u64>,
    },
    /// Excluded from admission while `until_round >= current round`.
    Suspended {
        until_round: u64,
    },
}

impl NodeStatus {
    pub fn is_probation(&self) -> bool {
        matches!(self, NodeStatus::Probation { .. })
    }

    pub fn is_suspended(&self) -> bool {
        matches!(self, NodeStatus::Suspended { .. })
    }

    pub fn partition_name(&self) -> &'static str {
        match self {
            NodeStatus::Active => "active",
            NodeStatus::Probation { .. } => "probation",
            NodeStatus::Suspended { .. } => "suspended",
        }
    }
}

/// Classify a trust value into a status at the given round. A fresh
/// suspension runs for `suspension_rounds` starting next round.
pub fn classify_status(trust: f64, round: u64, config: &PolicyConfig) -> NodeStatus {
    if trust >= config.tau_admit {
        NodeStatus::Active
    } else if trust >= config.tau_prob {
        NodeStatus::Probation {
            last_admitted_round: None,
        }
    } else {
        NodeStatus::Suspended {
            until_round: round + config.suspension_rounds,
        }
    }
}

/// One node as seen by admission-set formation.
#[derive(Debug, Clone)]
pub struct AdmissionCandidate {
    pub node_id: NodeId,
    pub trust: f64,
    pub consistency: f64,
    pub status: NodeStatus,
    /// Strikes within the trailing strike window (consumed or not).
    pub recent_strikes: u64,
}

/// Form the ordered admission set for a round: Active nodes plus eligible
/// Probation nodes, ranked by descending trust, then descending consistency,
/// then fewer recent strikes, then ascending node id; truncated to `k_max`.
pub fn form_admission_set(
    candidates: &[AdmissionCandidate],
    round: u64,
    config: &PolicyConfig,
) -> Vec<NodeId> {
    let mut eligible: Vec<&AdmissionCandidate> = candidates
        .iter()
        .filter(|c| match c.status {
            NodeStatus::Active => true,
            NodeStatus::Probation {
                last_admitted_round,
            } => last_admitted_round
                .map_or(true, |last| round.saturating_sub(last) >= config.probation_cadence),
            NodeStatus::Suspended { until_round } => round > until_round,
        })
        .collect();
    eligible.sort_by(|a, b| {
        b.trust
            .total_cmp(&a.trust)
            .then(b.consistency.total_cmp(&a.consistency))
            .then(a.recent_strikes.cmp(&b.recent_strikes))
            .then(a.node_id.cmp(&b.node_id))
    });
    eligible.truncate(config.k_max as usize);
    eligible.into_iter().map(|c| c.node_id.clone()).collect()
}

/// Screening rule: accept iff the gain is non-negative and quality meets the
/// threshold. Both boundaries inclusive.
pub fn screen_update(gain: f64, data_quality: f64, config: &PolicyConfig) -> bool {
    gain >= 0.0 && data_quality >= config.tau_d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct StrikeRecord {
    round: u64,
    consumed: bool,
}

/// Verdict of recording a strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlashDecision {
    None,
    Slash {
        fraction: f64,
        suspend_rounds: u64,
        cap_value: f64,
        cap_rounds: u64,
    },
}

/// Per-node record of screening failures. Strikes are consumed when they
/// trigger a slash so each contributes to at most one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrikeLedger {
    strikes: BTreeMap<NodeId, Vec<StrikeRecord>>,
}

impl StrikeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a strike at `round` and report whether the slash condition is
    /// met. The strike window is half-open: (round - W, round].
    pub fn record_strike_and_check(
        &mut self,
        node_id: &str,
        round: u64,
        config: &PolicyConfig,
    ) -> SlashDecision {
        let entries = self.strikes.entry(node_id.to_string()).or_default();
        entries.push(StrikeRecord {
            round,
            consumed: false,
        });
        let in_window = |r: u64| r + config.strike_window > round && r <= round;
        let count = entries
            .iter()
            .filter(|s| !s.consumed && in_window(s.round))
            .count() as u64;
        if count >= config.strikes_to_slash {
            for s in entries.iter_mut() {
                if !s.consumed && in_window(s.round) {
                    s.consumed = true;
                }
            }
            SlashDecision::Slash {
                fraction: config.slash_fraction,
                suspend_rounds: config.suspension_rounds,
                cap_value: config.rehab_trust_cap,
                cap_rounds: config.rehab_window,
            }
        } else {
            SlashDecision::None
        }
    }

    /// Strikes (consumed or not) within the window ending at `round`.
    pub fn recent_strikes(&self, node_id: &str, round: u64, window: u64) -> u64 {
        self.strikes
            .get(node_id)
            .map(|entries| {
                entries
                    .iter()
                    .filter(|s| s.round + window > round && s.round <= round)
                    .count() as u64
            })
            .unwrap_or(0)
    }

    pub fn total_strikes(&self, node_id: &str) -> u64 {
        self.strikes.get(node_id).map(|e| e.len() as u64).unwrap_or(0)
    }
}

/// One accepted submission as seen by payout computation.
#[derive(Debug, Clone)]
pub struct PayoutInput {
    pub node_id: NodeId,
    /// Round-normalized accuracy gain (A_i), non-negative.
    pub accuracy: f64,
    /// Trust at screening time.
    pub trust: f64,
    pub probation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoutResult {
    /// Integer micro-token payout per accepted node.
    pub payouts_micro: BTreeMap<NodeId, i64>,
    /// Budget not paid out this round (returned to treasury, no rollover).
    pub withheld_micro: i64,
}

/// Split the round budget among accepted updates in proportion to
/// utility u_i = A_i * T_i. Probation nodes are capped at a fraction of
/// their raw share; the excess is redistributed by utility among accepted
/// non-probation nodes, or withheld when none exist.
pub fn compute_payouts(
    accepted: &[PayoutInput],
    budget_micro: i64,
    probation_cap: f64,
) -> PayoutResult {
    let utilities: Vec<f64> = accepted.iter().map(|p| p.accuracy * p.trust).collect();
    let total_u: f64 = utilities.iter().sum();
    if accepted.is_empty() || total_u <= 0.0 {
        return PayoutResult {
            payouts_micro: BTreeMap::new(),
            withheld_micro: budget_micro,
        };
    }
    let budget = budget_micro as f64;
    let raw: Vec<f64> = utilities.iter().map(|u| budget * u / total_u).collect();

    let nonprob_u: f64 = accepted
        .iter()
        .zip(&utilities)
        .filter(|(p, _)| !p.probation)
        .map(|(_, u)| u)
        .sum();
    let excess: f64 = accepted
        .iter()
        .zip(&raw)
        .filter(|(p, _)| p.probation)
        .map(|(_, r)| r * (1.0 - probation_cap))
        .sum();

    let finals: Vec<f64> = accepted
        .iter()
        .zip(raw.iter().zip(&utilities))
        .map(|(p, (r, u))| {
            if p.probation {
                r * probation_cap
            } else if nonprob_u > 0.0 {
                r + excess * u / nonprob_u
            } else {
                *r
            }
        })
        .collect();

    // Largest-remainder apportionment in micro-units so the integer total
    // matches the rounded real total exactly.
    let total_f: f64 = finals.iter().sum();
    let target = crate::fixed::round_half_even(total_f).min(budget_micro).max(0);
    let mut floors: Vec<i64> = finals.iter().map(|f| f.floor() as i64).collect();
    let mut order: Vec<usize> = (0..finals.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = finals[i] - finals[i].floor();
        let fj = finals[j] - finals[j].floor();
        fj.total_cmp(&fi)
            .then(accepted[i].node_id.cmp(&accepted[j].node_id))
    });
    let mut remainder = target - floors.iter().sum::<i64>();
    let mut k = 0;
    while remainder > 0 {
        floors[order[k % order.len()]] += 1;
        remainder -= 1;
        k += 1;
    }
    let mut k = 0;
    while remainder < 0 {
        let idx = order[order.len() - 1 - (k % order.len())];
        if floors[idx] > 0 {
            floors[idx] -= 1;
            remainder += 1;
        }
        k += 1;
    }

    let payouts_micro: BTreeMap<NodeId, i64> = accepted
        .iter()
        .zip(&floors)
        .map(|(p, &m)| (p.node_id.clone(), m))
        .collect();
    let paid: i64 = payouts_micro.values().sum();
    PayoutResult {
        payouts_micro,
        withheld_micro: budget_micro - paid,
    }
}

/// Pick the aggregator: highest trust, ties by higher consistency, then
/// ascending node id.
pub fn select_aggregator(cluster: &[(NodeId, f64, f64)]) -> Result<NodeId> {
    cluster
        .iter()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.2.total_cmp(&b.2))
                .then(b.0.cmp(&a.0))
        })
        .map(|(id, _, _)| id.clone())
        .ok_or(Error::EmptyInput("cluster"))
}
