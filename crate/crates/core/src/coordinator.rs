//! Off-chain round orchestration: header publication, admission, update
//! collection, screening, trust updates, robust aggregation, artifact
//! publication, on-chain finalization, and reward distribution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{aggregate_round, WeightedUpdate};
use crate::chain::{ContractState, DigestLeaf};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, ModelVector, ValidationSet,
};
use crate::fixed::{round_half_even, to_micro};
use crate::node_sim::{derive_rng, local_update, NodeBehavior, SyntheticTask};
use crate::policy::{
    classify_status, compute_payouts, form_admission_set, screen_update, select_aggregator,
    AdmissionCandidate, NodeStatus, PayoutInput, PolicyConfig, SlashDecision, StrikeLedger,
};
use crate::store::{Cid, ContentStore};
use crate::trust::{self, TrustParams, TrustState, TrustWeights};
use crate::NodeId;

/// Serialize to canonical JSON: sorted object keys, no insignificant
/// whitespace, UTF-8. Digest-stable on a given build.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_vec(&v)?)
}

/// Hex SHA-256 of a value's canonical JSON.
pub fn json_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_json(value)?)))
}

/// On-chain-pointer analogue published at the start of each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundHeader {
    pub round_id: u64,
    pub policy_hash: String,
    pub admission_hash: String,
    pub partitions: PartitionHashes,
    pub prior_cid_model: Option<Cid>,
    pub prior_cid_report: Option<Cid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionHashes {
    pub active: String,
    pub probation: String,
    pub suspended: String,
}

/// Per-node metrics recorded in the round report (integer micro-units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRoundMetrics {
    pub accuracy_micro: i64,
    pub consistency_micro: i64,
    pub data_quality_micro: i64,
    pub frequency_micro: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustTransition {
    pub before_micro: i64,
    pub after_micro: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedEntry {
    pub node_id: NodeId,
    /// Aggregation weight: the node's trust at screening time.
    pub weight_micro: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlashEntry {
    pub node_id: NodeId,
    pub amount_micro: i64,
}

/// Off-chain round artifact whose CID and digest go on chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_id: u64,
    pub admitted: Vec<NodeId>,
    pub submitted: Vec<NodeId>,
    pub accepted: Vec<AcceptedEntry>,
    pub metrics: BTreeMap<NodeId, NodeRoundMetrics>,
    pub trust: BTreeMap<NodeId, TrustTransition>,
    pub payouts_micro: BTreeMap<NodeId, i64>,
    pub slashes: Vec<SlashEntry>,
    pub aggregator: Option<NodeId>,
    pub budget_micro: i64,
    pub withheld_micro: i64,
}

/// Rebuild the finalization digest leaves from a round report: one leaf per
/// node with a payout entry or a slash, sorted by node id.
pub fn report_leaves(report: &RoundReport) -> Vec<DigestLeaf> {
    let mut ids: BTreeSet<&NodeId> = report.payouts_micro.keys().collect();
    for s in &report.slashes {
        ids.insert(&s.node_id);
    }
    ids.into_iter()
        .map(|id| {
            let slash = report
                .slashes
                .iter()
                .find(|s| &s.node_id == id)
                .map(|s| s.amount_micro)
                .unwrap_or(0);
            DigestLeaf {
                node_id: id.clone(),
                payout_micro: *report.payouts_micro.get(id).unwrap_or(&0),
                slash_flag: slash > 0,
                slash_amount_micro: slash,
            }
        })
        .collect()
}

/// Serialized model artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub round_id: u64,
    pub values: Vec<f64>,
}

/// The on-chain finalization arguments, serialized only to check that their
/// size is independent of the model dimension.
#[derive(Debug, Clone, Serialize)]
pub struct FinalizeArgs<'a> {
    pub round_id: u64,
    pub cid_model: &'a Cid,
    pub cid_report: &'a Cid,
    pub digest_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeRuntime {
    behavior: NodeBehavior,
    trust: TrustState,
    status: NodeStatus,
    /// Per-active-round utilities (round-normalized accuracy), newest last.
    utilities: Vec<f64>,
}

/// Everything produced by one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub header: RoundHeader,
    pub report: RoundReport,
    pub cid_header: Cid,
    pub cid_model: Cid,
    pub cid_report: Cid,
    pub digest: [u8; 32],
    pub validation_loss: f64,
    pub strikes_recorded: u64,
}

/// Single-writer round orchestrator owning all off-chain mutable state.
pub struct Coordinator {
    seed: u64,
    policy: PolicyConfig,
    trust_params: TrustParams,
    weights: TrustWeights,
    task: SyntheticTask,
    nodes: BTreeMap<NodeId, NodeRuntime>,
    strikes: StrikeLedger,
    global: ModelVector,
    prior_cid_model: Option<Cid>,
    prior_cid_report: Option<Cid>,
}

impl Coordinator {
    /// Round-0 bootstrap: zero global model, all nodes Active at the
    /// initial trust value.
    pub fn new(
        seed: u64,
        policy: PolicyConfig,
        trust_params: TrustParams,
        weights: TrustWeights,
        task: SyntheticTask,
        behaviors: BTreeMap<NodeId, NodeBehavior>,
    ) -> Result<Self> {
        policy.validate()?;
        trust_params.validate()?;
        weights.validate()?;
        let dim = task.true_weights.dim();
        let nodes = behaviors
            .into_iter()
            .map(|(id, behavior)| {
                let runtime = NodeRuntime {
                    behavior,
                    trust: TrustState::new(id.clone(), 0),
                    status: NodeStatus::Active,
                    utilities: Vec::new(),
                };
                (id, runtime)
            })
            .collect();
        Ok(Coordinator {
            seed,
            policy,
            trust_params,
            weights,
            task,
            nodes,
            strikes: StrikeLedger::new(),
            global: ModelVector::zeros(dim),
            prior_cid_model: None,
            prior_cid_report: None,
        })
    }

    pub fn global_model(&self) -> &ModelVector {
        &self.global
    }

    pub fn validation_set(&self) -> &ValidationSet {
        &self.task.validation
    }

    pub fn trust_of(&self, node_id: &str) -> Option<f64> {
        self.nodes.get(node_id).map(|n| n.trust.trust)
    }

    pub fn status_of(&self, node_id: &str) -> Option<NodeStatus> {
        self.nodes.get(node_id).map(|n| n.status)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().cloned().collect()
    }

    pub fn total_strikes(&self, node_id: &str) -> u64 {
        self.strikes.total_strikes(node_id)
    }

    fn admission_candidates(&self, round: u64) -> Vec<AdmissionCandidate> {
        self.nodes
            .iter()
            .map(|(id, n)| AdmissionCandidate {
                node_id: id.clone(),
                trust: n.trust.trust,
                consistency: n.trust.consistency,
                status: n.status,
                recent_strikes: self
                    .strikes
                    .recent_strikes(id, round, self.policy.strike_window),
            })
            .collect()
    }

    fn partition_hashes(&self) -> Result<PartitionHashes> {
        let mut active = Vec::new();
        let mut probation = Vec::new();
        let mut suspended = Vec::new();
        for (id, n) in &self.nodes {
            match n.status {
                NodeStatus::Active => active.push(id.clone()),
                NodeStatus::Probation { .. } => probation.push(id.clone()),
                NodeStatus::Suspended { .. } => suspended.push(id.clone()),
            }
        }
        Ok(PartitionHashes {
            active: json_hash(&active)?,
            probation: json_hash(&probation)?,
            suspended: json_hash(&suspended)?,
        })
    }

    /// Compute the round header and the ordered admission set it commits to.
    pub fn publish_round_header(&self, round: u64) -> Result<(RoundHeader, Vec<NodeId>)> {
        let admitted = form_admission_set(&self.admission_candidates(round), round, &self.policy);
        let header = RoundHeader {
            round_id: round,
            policy_hash: json_hash(&self.policy)?,
            admission_hash: json_hash(&admitted)?,
            partitions: self.partition_hashes()?,
            prior_cid_model: self.prior_cid_model.clone(),
            prior_cid_report: self.prior_cid_report.clone(),
        };
        Ok((header, admitted))
    }

    /// Execute one full round. Chain failures roll the coordinator and the
    /// contract back to the state at round start.
    pub fn run_round(
        &mut self,
        chain: &mut ContractState,
        store: &ContentStore,
        round: u64,
    ) -> Result<RoundOutcome> {
        let nodes_snapshot = self.nodes.clone();
        let strikes_snapshot = self.strikes.clone();
        let global_snapshot = self.global.clone();
        let priors_snapshot = (self.prior_cid_model.clone(), self.prior_cid_report.clone());
        let chain_snapshot = chain.clone();
        match self.run_round_inner(chain, store, round) {
            Ok(outcome) => Ok(outcome),
            Err(e) => {
                self.nodes = nodes_snapshot;
                self.strikes = strikes_snapshot;
                self.global = global_snapshot;
                (self.prior_cid_model, self.prior_cid_report) = priors_snapshot;
                *chain = chain_snapshot;
                Err(e)
            }
        }
    }

    fn run_round_inner(
        &mut self,
        chain: &mut ContractState,
        store: &ContentStore,
        round: u64,
    ) -> Result<RoundOutcome> {
        // (1) header and admission set
        let (header, admitted) = self.publish_round_header(round)?;
        let admitted_set: BTreeSet<NodeId> = admitted.iter().cloned().collect();

        // probation cadence bookkeeping: record the admission
        for id in &admitted {
            let runtime = self.nodes.get_mut(id).unwrap();
            if let NodeStatus::Probation { last_admitted_round } = &mut runtime.status {
                *last_admitted_round = Some(round);
            }
        }

        // (2)-(4) distribute model, collect submissions, canonical order
        let mut submissions: BTreeMap<NodeId, ModelVector> = BTreeMap::new();
        for id in admitted_set.iter() {
            let runtime = &self.nodes[id];
            let data = self
                .task
                .node_data
                .get(id)
                .ok_or_else(|| Error::UnknownNode(id.clone()))?;
            let mut rng = derive_rng(self.seed, "round", id, round);
            if let Some(update) =
                local_update(&runtime.behavior, &self.global, data, round, &mut rng)?
            {
                if update.dim() != self.global.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.global.dim(),
                        got: update.dim(),
                    });
                }
                submissions.insert(id.clone(), update);
            }
        }

        // (5) metrics and screening
        let mut gains: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut quality: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut accuracy: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut accepted_set: BTreeSet<NodeId> = BTreeSet::new();
        if !submissions.is_empty() {
            let refs: Vec<&ModelVector> = submissions.values().collect();
            let reference = evaluation::reference_direction(&refs)?;
            for (id, update) in &submissions {
                gains.insert(
                    id.clone(),
                    evaluation::raw_gain(&self.global, update, &self.task.validation)?,
                );
                quality.insert(id.clone(), evaluation::data_quality(update, &reference)?);
            }
            accuracy = evaluation::normalize_accuracy(&gains)?;
            for id in submissions.keys() {
                let accept = !self.policy.screening_enabled
                    || screen_update(gains[id], quality[id], &self.policy);
                if accept {
                    accepted_set.insert(id.clone());
                }
            }
        }

        // (6) strikes for rejected submissions; slashing waits for finalization
        let mut pending_slashes: BTreeMap<NodeId, SlashDecision> = BTreeMap::new();
        let mut strikes_recorded = 0u64;
        if self.policy.screening_enabled {
            for id in submissions.keys() {
                if !accepted_set.contains(id) {
                    strikes_recorded += 1;
                    let decision = self.strikes.record_strike_and_check(id, round, &self.policy);
                    if matches!(decision, SlashDecision::Slash { .. }) {
                        pending_slashes.insert(id.clone(), decision);
                    }
                }
            }
        }

        // (7) trust update for every node; aggregation weights snapshot the
        // pre-update trust
        let trust_before: BTreeMap<NodeId, f64> = self
            .nodes
            .iter()
            .map(|(id, n)| (id.clone(), n.trust.trust))
            .collect();
        let mut report_metrics: BTreeMap<NodeId, NodeRoundMetrics> = BTreeMap::new();
        for (id, runtime) in self.nodes.iter_mut() {
            let eligible = admitted_set.contains(id);
            let submitted = submissions.contains_key(id);
            runtime.trust.participation.push((eligible, submitted));
            let window = self.trust_params.freq_window as usize;
            if runtime.trust.participation.len() > window {
                let excess = runtime.trust.participation.len() - window;
                runtime.trust.participation.drain(..excess);
            }
            if submitted {
                let consistency = evaluation::update_consistency(
                    runtime.trust.consistency,
                    accepted_set.contains(id),
                    self.trust_params.rho,
                );
                let frequency = evaluation::update_frequency(
                    &runtime.trust.participation,
                    runtime.trust.frequency,
                );
                let metrics = trust::MetricVector {
                    accuracy: accuracy[id],
                    consistency,
                    data_quality: quality[id],
                    frequency,
                };
                let improvement = evaluation::recovery_signal(&runtime.utilities, accuracy[id]);
                runtime.trust = trust::update_trust(
                    &runtime.trust,
                    Some(&metrics),
                    &self.weights,
                    &self.trust_params,
                    round,
                    improvement,
                )?;
                runtime.utilities.push(accuracy[id]);
                report_metrics.insert(
                    id.clone(),
                    NodeRoundMetrics {
                        accuracy_micro: to_micro(metrics.accuracy),
                        consistency_micro: to_micro(metrics.consistency),
                        data_quality_micro: to_micro(metrics.data_quality),
                        frequency_micro: to_micro(metrics.frequency),
                    },
                );
            } else {
                runtime.trust = trust::update_trust(
                    &runtime.trust,
                    None,
                    &self.weights,
                    &self.trust_params,
                    round,
                    0.0,
                )?;
            }
        }

        // (8) robust aggregation over accepted updates
        let weighted: Vec<WeightedUpdate> = accepted_set
            .iter()
            .map(|id| WeightedUpdate {
                node_id: id.clone(),
                update: submissions[id].clone(),
                weight: trust_before[id],
            })
            .collect();
        let total_weight: f64 = weighted.iter().map(|w| w.weight).sum();
        let new_global = if weighted.is_empty() || total_weight <= 0.0 {
            self.global.clone()
        } else {
            aggregate_round(&self.global, &weighted, &self.policy)?
        };

        // (9) elect next round's aggregator
        let cluster: Vec<(NodeId, f64, f64)> = self
            .nodes
            .iter()
            .map(|(id, n)| (id.clone(), n.trust.trust, n.trust.consistency))
            .collect();
        let aggregator = if cluster.is_empty() {
            None
        } else {
            Some(select_aggregator(&cluster)?)
        };

        // (10a) payouts
        let payout_inputs: Vec<PayoutInput> = accepted_set
            .iter()
            .map(|id| PayoutInput {
                node_id: id.clone(),
                accuracy: accuracy[id],
                trust: trust_before[id],
                probation: self.nodes[id].status.is_probation(),
            })
            .collect();
        let budget_micro = to_micro(self.policy.round_budget);
        let payout = compute_payouts(
            &payout_inputs,
            budget_micro,
            self.policy.probation_payout_cap,
        );

        // (10b) slash intents in micro-tokens against current stakes
        let mut slashes: Vec<SlashEntry> = Vec::new();
        for (id, decision) in &pending_slashes {
            if let SlashDecision::Slash { fraction, .. } = decision {
                let stake = chain
                    .stake_of(id)
                    .ok_or_else(|| Error::UnknownNode(id.clone()))?;
                let amount = round_half_even(stake as f64 * fraction);
                if amount > 0 {
                    slashes.push(SlashEntry {
                        node_id: id.clone(),
                        amount_micro: amount,
                    });
                }
            }
        }

        let report = RoundReport {
            round_id: round,
            admitted: admitted.clone(),
            submitted: submissions.keys().cloned().collect(),
            accepted: accepted_set
                .iter()
                .map(|id| AcceptedEntry {
                    node_id: id.clone(),
                    weight_micro: to_micro(trust_before[id]),
                })
                .collect(),
            metrics: report_metrics,
            trust: self
                .nodes
                .iter()
                .map(|(id, n)| {
                    (
                        id.clone(),
                        TrustTransition {
                            before_micro: to_micro(trust_before[id]),
                            after_micro: to_micro(n.trust.trust),
                        },
                    )
                })
                .collect(),
            payouts_micro: payout.payouts_micro.clone(),
            slashes,
            aggregator,
            budget_micro,
            withheld_micro: payout.withheld_micro,
        };

        // (10c) publish artifacts
        let model_bytes = canonical_json(&ModelArtifact {
            round_id: round,
            values: new_global.0.clone(),
        })?;
        let cid_model = store.put(&model_bytes);
        let report_bytes = canonical_json(&report)?;
        let cid_report = store.put(&report_bytes);
        let header_bytes = canonical_json(&header)?;
        let cid_header = store.put(&header_bytes);

        // (11)-(12) finalize and distribute
        let leaves = report_leaves(&report);
        let digest = chain.finalize_round(round, cid_model.clone(), cid_report.clone(), leaves)?;
        chain.distribute_rewards(round)?;

        // commit off-chain state
        self.global = new_global;
        self.prior_cid_model = Some(cid_model.clone());
        self.prior_cid_report = Some(cid_report.clone());

        // status transitions for the next round
        for (id, runtime) in self.nodes.iter_mut() {
            if let Some(SlashDecision::Slash {
                suspend_rounds,
                cap_value,
                cap_rounds,
                ..
            }) = pending_slashes.get(id)
            {
                let until = round + suspend_rounds;
                let until = match runtime.status {
                    NodeStatus::Suspended { until_round } => until_round.max(until),
                    _ => until,
                };
                runtime.status = NodeStatus::Suspended { until_round: until };
                runtime.trust.impose_cap(*cap_value, round + cap_rounds);
            } else {
                match runtime.status {
                    NodeStatus::Suspended { until_round } => {
                        // served suspensions end in probation with a path back
                        if round >= until_round {
                            runtime.status = NodeStatus::Probation {
                                last_admitted_round: None,
                            };
                        }
                    }
                    NodeStatus::Active | NodeStatus::Probation { .. } => {
                        let prev_last = match runtime.status {
                            NodeStatus::Probation { last_admitted_round } => last_admitted_round,
                            _ => None,
                        };
                        let new_status =
                            classify_status(runtime.trust.trust, round, &self.policy);
                        runtime.status = match new_status {
                            NodeStatus::Probation { .. } => NodeStatus::Probation {
                                last_admitted_round: prev_last,
                            },
                            other => other,
                        };
                    }
                }
            }
        }

        let validation_loss = evaluation::validation_loss(&self.global, &self.task.validation)?;
        Ok(RoundOutcome {
            header,
            report,
            cid_header,
            cid_model,
            cid_report,
            digest,
            validation_loss,
            strikes_recorded,
        })
    }
}
