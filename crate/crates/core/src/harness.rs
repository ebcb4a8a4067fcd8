//! Scenario runner: wires the coordinator, contract, and store together,
//! executes all rounds, and emits reproducible run artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::chain::{merkle_root, ChainEvent, ContractState};
use crate::config::ScenarioConfig;
use crate::coordinator::{canonical_json, report_leaves, Coordinator, RoundOutcome, RoundReport};
use crate::error::{Error, Result};
use crate::fixed::to_micro;
use crate::node_sim::{generate_task, NodeBehavior};
use crate::store::{cid_of, ContentStore};
use crate::NodeId;

/// Everything a finished run leaves behind, for inspection or assertions.
pub struct RunResult {
    pub outcomes: Vec<RoundOutcome>,
    pub coordinator: Coordinator,
    pub chain: ContractState,
    pub store: ContentStore,
    pub metrics_csv: String,
    pub events_jsonl: String,
}

/// Run a validated scenario end to end. When `out_dir` is given, write
/// `metrics.csv`, `events.jsonl`, and an `artifacts/` directory keyed by CID.
pub fn run_scenario(config: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunResult> {
    config.validate()?;
    let node_ids: Vec<NodeId> = config.nodes.iter().map(|n| n.id.clone()).collect();
    let task = generate_task(
        config.seed,
        config.task.dimension,
        &node_ids,
        config.task.samples_per_node,
        config.task.noise_std,
    )?;
    let behaviors: BTreeMap<NodeId, NodeBehavior> = config
        .nodes
        .iter()
        .map(|n| (n.id.clone(), n.behavior.clone()))
        .collect();
    let mut coordinator = Coordinator::new(
        config.seed,
        config.policy.clone(),
        config.trust.clone(),
        config.weights.clone(),
        task,
        behaviors,
    )?;

    let mut chain = ContractState::new();
    for node in &config.nodes {
        // deterministic stand-in key: this simulator does not sign anything
        let pubkey = Sha256::digest(node.id.as_bytes());
        chain.register_node(&node.id, &pubkey, to_micro(node.stake))?;
    }

    let store = ContentStore::new();
    let mut outcomes = Vec::with_capacity(config.rounds as usize);
    for round in 1..=config.rounds {
        outcomes.push(coordinator.run_round(&mut chain, &store, round)?);
    }

    let metrics_csv = emit_metrics(&node_ids, &outcomes);
    let mut events_jsonl = String::new();
    for event in &chain.events {
        events_jsonl.push_str(std::str::from_utf8(&canonical_json(event)?).unwrap());
        events_jsonl.push('\n');
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), &metrics_csv)?;
        std::fs::write(dir.join("events.jsonl"), &events_jsonl)?;
        let artifacts = dir.join("artifacts");
        std::fs::create_dir_all(&artifacts)?;
        store.dump_to_dir(&artifacts)?;
    }

    Ok(RunResult {
        outcomes,
        coordinator,
        chain,
        store,
        metrics_csv,
        events_jsonl,
    })
}

/// Per-round metrics table. Floats use the shortest round-trippable form.
pub fn emit_metrics(node_ids: &[NodeId], outcomes: &[RoundOutcome]) -> String {
    let mut sorted_ids: Vec<&NodeId> = node_ids.iter().collect();
    sorted_ids.sort();
    let mut out = String::from(
        "round,validation_loss,admitted,submitted,accepted,strikes,slashes,payout_total_micro,withheld_micro",
    );
    for id in &sorted_ids {
        let _ = write!(out, ",trust_{id}_micro");
    }
    out.push('\n');
    for o in outcomes {
        let payout_total: i64 = o.report.payouts_micro.values().sum();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            o.report.round_id,
            o.validation_loss,
            o.report.admitted.len(),
            o.report.submitted.len(),
            o.report.accepted.len(),
            o.strikes_recorded,
            o.report.slashes.len(),
            payout_total,
            o.report.withheld_micro,
        );
        for id in &sorted_ids {
            let trust = o.report.trust.get(*id).map(|t| t.after_micro).unwrap_or(0);
            let _ = write!(out, ",{trust}");
        }
        out.push('\n');
    }
    out
}

/// Re-check a run directory written by [`run_scenario`]: replay the event
/// log, re-hash every referenced artifact, and recompute each round's
/// finalization digest from its stored report. Returns the number of
/// finalized rounds verified.
pub fn verify_run(out_dir: &Path) -> Result<usize> {
    let log = std::fs::read_to_string(out_dir.join("events.jsonl"))?;
    let mut events = Vec::new();
    for line in log.lines().filter(|l| !l.trim().is_empty()) {
        events.push(serde_json::from_str::<ChainEvent>(line)?);
    }
    let replayed = ContractState::replay(&events)?;
    if !replayed.conservation_holds() {
        return Err(Error::VerifyMismatch(
            "replayed state violates token conservation".into(),
        ));
    }

    let artifacts = out_dir.join("artifacts");
    let mut verified = 0usize;
    for event in &events {
        if let ChainEvent::RoundFinalized {
            round_id,
            cid_model,
            cid_report,
            digest_hex,
            leaves,
        } = event
        {
            for cid in [cid_model, cid_report] {
                let bytes = std::fs::read(artifacts.join(cid.as_str())).map_err(|_| {
                    Error::VerifyMismatch(format!(
                        "round {round_id}: missing artifact {}",
                        cid.as_str()
                    ))
                })?;
                if &cid_of(&bytes) != cid {
                    return Err(Error::VerifyMismatch(format!(
                        "round {round_id}: artifact content does not match CID {}",
                        cid.as_str()
                    )));
                }
            }
            let report_bytes = std::fs::read(artifacts.join(cid_report.as_str()))?;
            let report: RoundReport = serde_json::from_slice(&report_bytes)?;
            if report.round_id != *round_id {
                return Err(Error::VerifyMismatch(format!(
                    "round {round_id}: report claims round {}",
                    report.round_id
                )));
            }
            let rebuilt = report_leaves(&report);
            if &rebuilt != leaves {
                return Err(Error::VerifyMismatch(format!(
                    "round {round_id}: report leaves differ from finalized leaves"
                )));
            }
            let digest = merkle_root(&rebuilt)?;
            if hex::encode(digest) != *digest_hex {
                return Err(Error::VerifyMismatch(format!(
                    "round {round_id}: recomputed digest does not match chain"
                )));
            }
            verified += 1;
        }
    }
    Ok(verified)
}
