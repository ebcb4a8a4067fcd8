//! Acceptance gate: ten end-to-end criteria, each printing a PASS line.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedtrust::aggregation::{
    weighted_coordinate_median, weighted_coordinate_median_counted, weighted_trimmed_mean,
    WeightedUpdate,
};
use fedtrust::chain::ContractState;
use fedtrust::config::{NodeConfig, ScenarioConfig, TaskConfig};
use fedtrust::coordinator::{canonical_json, FinalizeArgs, ModelArtifact};
use fedtrust::evaluation::ModelVector;
use fedtrust::fixed::to_micro;
use fedtrust::harness::{run_scenario, verify_run, RunResult};
use fedtrust::node_sim::NodeBehavior;
use fedtrust::policy::{
    classify_status, compute_payouts, form_admission_set, screen_update, select_aggregator,
    AdmissionCandidate, AggMethod, NodeStatus, PayoutInput, PolicyConfig, SlashDecision,
    StrikeLedger,
};
use fedtrust::store::cid_of;
use fedtrust::trust::{
    apply_decay, apply_recovery, blend_score, update_trust, MetricVector, TrustParams, TrustState,
    TrustWeights,
};

fn honest() -> NodeBehavior {
    NodeBehavior::Honest { lr: 0.05 }
}

fn scenario(seed: u64, rounds: u64, nodes: Vec<(&str, NodeBehavior)>) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        rounds,
        task: TaskConfig {
            dimension: 4,
            samples_per_node: 50,
            noise_std: 0.0,
        },
        nodes: nodes
            .into_iter()
            .map(|(id, behavior)| NodeConfig {
                id: id.into(),
                behavior,
                stake: 100.0,
            })
            .collect(),
        policy: PolicyConfig::default(),
        trust: TrustParams::default(),
        weights: TrustWeights::default(),
    }
}

/// Run a scenario into a temp dir and audit every finalized round's digest
/// and artifact hashes against the event log (criterion 7 applies to every
/// acceptance scenario).
fn run_audited(config: &ScenarioConfig) -> RunResult {
    let dir = tempfile::tempdir().unwrap();
    let result = run_scenario(config, Some(dir.path())).unwrap();
    let verified = verify_run(dir.path()).unwrap();
    assert_eq!(verified as u64, config.rounds, "digest audit incomplete");
    result
}

fn mixed_roster() -> Vec<(&'static str, NodeBehavior)> {
    let mut nodes: Vec<(&str, NodeBehavior)> = vec![
        ("atk0", NodeBehavior::SignFlip { lr: 0.05, scale: 1.0 }),
        ("atk1", NodeBehavior::SignFlip { lr: 0.05, scale: 1.0 }),
    ];
    for id in ["h0", "h1", "h2", "h3", "h4", "h5", "h6", "h7"] {
        nodes.push((id, honest()));
    }
    nodes
}

#[test]
fn criterion_1_policy_table_conformance() {
    let start = Instant::now();
    let cfg = PolicyConfig::default();

    // status thresholds, both boundaries inclusive on the high side
    assert_eq!(classify_status(0.40, 10, &cfg), NodeStatus::Active);
    assert_eq!(classify_status(1.0, 10, &cfg), NodeStatus::Active);
    assert_eq!(
        classify_status(0.39999, 10, &cfg),
        NodeStatus::Probation { last_admitted_round: None }
    );
    assert_eq!(
        classify_status(0.25, 10, &cfg),
        NodeStatus::Probation { last_admitted_round: None }
    );
    assert_eq!(
        classify_status(0.249, 10, &cfg),
        NodeStatus::Suspended { until_round: 12 }
    );
    assert_eq!(
        classify_status(0.0, 7, &cfg),
        NodeStatus::Suspended { until_round: 9 }
    );

    // probation cadence R=2: admitted at 5 means eligible again at 7
    let prob = |last| AdmissionCandidate {
        node_id: "p".into(),
        trust: 0.30,
        consistency: 0.5,
        status: NodeStatus::Probation { last_admitted_round: last },
        recent_strikes: 0,
    };
    assert!(form_admission_set(&[prob(Some(5))], 6, &cfg).is_empty());
    assert_eq!(form_admission_set(&[prob(Some(5))], 7, &cfg).len(), 1);
    assert_eq!(form_admission_set(&[prob(None)], 6, &cfg).len(), 1);

    // suspension exclusion: until_round=4 bars rounds 3 and 4, clears at 5
    let susp = AdmissionCandidate {
        node_id: "s".into(),
        trust: 0.1,
        consistency: 0.5,
        status: NodeStatus::Suspended { until_round: 4 },
        recent_strikes: 0,
    };
    assert!(form_admission_set(&[susp.clone()], 4, &cfg).is_empty());
    assert_eq!(form_admission_set(&[susp], 5, &cfg).len(), 1);

    // screening boundaries: gain >= 0 and D >= 0.20, both inclusive
    assert!(screen_update(0.0, 0.20, &cfg));
    assert!(screen_update(1e-9, 0.21, &cfg));
    assert!(!screen_update(-1e-12, 0.9, &cfg));
    assert!(!screen_update(0.5, 0.19999, &cfg));

    // strikes: S=2 within W=5, half-open window (round-5, round]
    let mut ledger = StrikeLedger::new();
    assert_eq!(ledger.record_strike_and_check("n", 4, &cfg), SlashDecision::None);
    assert!(matches!(
        ledger.record_strike_and_check("n", 6, &cfg),
        SlashDecision::Slash { fraction, suspend_rounds, cap_value, cap_rounds }
            if fraction == 0.10 && suspend_rounds == 2 && cap_value == 0.60 && cap_rounds == 5
    ));
    let mut ledger = StrikeLedger::new();
    assert_eq!(ledger.record_strike_and_check("n", 1, &cfg), SlashDecision::None);
    assert_eq!(ledger.record_strike_and_check("n", 7, &cfg), SlashDecision::None);

    // probation payout cap phi=0.5 with redistribution: utilities 0.6/0.2
    // give raw shares 75/25, probation capped at 12.5, final 87.5/12.5
    let inputs = vec![
        PayoutInput { node_id: "a".into(), accuracy: 0.6, trust: 1.0, probation: false },
        PayoutInput { node_id: "p".into(), accuracy: 0.2, trust: 1.0, probation: true },
    ];
    let result = compute_payouts(&inputs, 100_000_000, cfg.probation_payout_cap);
    assert_eq!(result.payouts_micro["a"], 87_500_000);
    assert_eq!(result.payouts_micro["p"], 12_500_000);
    assert_eq!(result.withheld_micro, 0);

    // aggregator election: highest trust, consistency tiebreak, id tiebreak
    let cluster = vec![
        ("b".to_string(), 0.9, 0.5),
        ("a".to_string(), 0.9, 0.5),
        ("c".to_string(), 0.8, 0.9),
    ];
    assert_eq!(select_aggregator(&cluster).unwrap(), "a");

    assert!(start.elapsed() < Duration::from_secs(1));
    println!("criterion 1 (policy-table conformance): PASS");
}

#[test]
fn criterion_2_trust_formula_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240);
    let params = TrustParams::default();
    for _ in 0..10_000 {
        let weights = TrustWeights::default();
        let m = MetricVector {
            accuracy: rng.gen(),
            consistency: rng.gen(),
            data_quality: rng.gen(),
            frequency: rng.gen(),
        };
        let t: f64 = rng.gen();

        // blend oracle
        let expected = 0.4 * m.accuracy + 0.3 * m.consistency + 0.2 * m.data_quality
            + 0.1 * m.frequency;
        assert!((blend_score(&weights, &m).unwrap() - expected).abs() < 1e-9);

        // decay oracle
        let dt = rng.gen_range(0u64..50);
        let mut state = TrustState::new("n".into(), 10);
        state.trust = t;
        state.trust_at_last_active = t;
        let decayed = apply_decay(&state, 10 + dt, params.lambda);
        assert!((decayed.trust - t * (-params.lambda * dt as f64).exp()).abs() < 1e-9);

        // recovery oracle
        let delta: f64 = rng.gen();
        let recovered = apply_recovery(&state, delta, params.eta, params.t_max).unwrap();
        let expected = (t + params.eta * (params.t_max - t) * delta).min(params.t_max);
        assert!((recovered.trust - expected).abs() < 1e-9);

        // full active update oracle: smoothing then recovery
        let updated = update_trust(&state, Some(&m), &weights, &params, 11, delta).unwrap();
        let blend = 0.4 * m.accuracy + 0.3 * m.consistency + 0.2 * m.data_quality
            + 0.1 * m.frequency;
        let smoothed = 0.5 * t + 0.5 * blend;
        let expected = if delta > 0.0 {
            (smoothed + params.eta * (params.t_max - smoothed) * delta).min(params.t_max)
        } else {
            smoothed
        }
        .clamp(0.0, params.t_max);
        assert!((updated.trust - expected).abs() < 1e-9);
    }
    assert!(start.elapsed() < Duration::from_secs(5));
    println!("criterion 2 (trust-formula fidelity): PASS");
}

#[test]
fn criterion_3_slashing_scenario() {
    let start = Instant::now();
    let config = scenario(303, 20, mixed_roster());
    let result = run_audited(&config);

    for atk in ["atk0", "atk1"] {
        // first slash: >= S strikes inside the W-round window
        let slash_round = result
            .outcomes
            .iter()
            .find(|o| o.report.slashes.iter().any(|s| s.node_id == atk))
            .map(|o| o.report.round_id)
            .expect("attacker never slashed");
        assert!(
            slash_round <= config.policy.strike_window,
            "{atk} first slash at round {slash_round}"
        );
        let strikes_by_then: u64 = result.outcomes[..slash_round as usize]
            .iter()
            .map(|o| o.strikes_recorded)
            .sum();
        assert!(strikes_by_then >= 2 * config.policy.strikes_to_slash);

        // slash amount: exactly 10% of the 100-token stake, in micro-tokens
        let slash = result.outcomes[slash_round as usize - 1]
            .report
            .slashes
            .iter()
            .find(|s| s.node_id == atk)
            .unwrap();
        assert_eq!(slash.amount_micro, 10_000_000);

        // suspended exactly H=2 rounds, readmitted on the third
        for offset in 1..=2 {
            let report = &result.outcomes[(slash_round + offset) as usize - 1].report;
            assert!(
                !report.admitted.iter().any(|id| id == atk),
                "{atk} admitted during suspension"
            );
        }
        let back = &result.outcomes[(slash_round + 3) as usize - 1].report;
        assert!(back.admitted.iter().any(|id| id == atk));

        // rehabilitation cap: trust <= 0.60 through the 5-round window
        for offset in 0..=config.policy.rehab_window {
            let report = &result.outcomes[(slash_round + offset) as usize - 1].report;
            assert!(report.trust[atk].after_micro <= to_micro(0.60));
        }
    }
    assert!(start.elapsed() < Duration::from_secs(10));
    println!("criterion 3 (slashing scenario): PASS");
}

#[test]
fn criterion_4_robustness_comparison() {
    let start = Instant::now();
    let seed = 404;

    let policy_run = run_audited(&scenario(seed, 30, mixed_roster()));

    // attack-free baseline: same ten node ids, all honest, so every node's
    // local dataset is identical across the two runs
    let baseline_roster: Vec<(&str, NodeBehavior)> = mixed_roster()
        .into_iter()
        .map(|(id, _)| (id, honest()))
        .collect();
    let baseline_run = run_audited(&scenario(seed, 30, baseline_roster));

    // ablation: unweighted mean, no screening, same seed
    let mut ablated = scenario(seed, 30, mixed_roster());
    ablated.policy.agg_method = AggMethod::UnweightedMean;
    ablated.policy.screening_enabled = false;
    let ablated_run = run_audited(&ablated);

    let loss = |r: &RunResult| r.outcomes.last().unwrap().validation_loss;
    let (policy, baseline, abl) = (loss(&policy_run), loss(&baseline_run), loss(&ablated_run));
    assert!(
        policy <= 2.0 * baseline,
        "policy loss {policy} vs baseline {baseline}"
    );
    assert!(policy < abl, "policy loss {policy} not below ablated {abl}");

    assert!(start.elapsed() < Duration::from_secs(30));
    println!("criterion 4 (robustness comparison): PASS");
}

#[test]
fn criterion_5_free_rider_exclusion() {
    let start = Instant::now();
    let mut nodes: Vec<(&str, NodeBehavior)> =
        vec![("fr", NodeBehavior::FreeRider)];
    for id in ["h0", "h1", "h2", "h3"] {
        nodes.push((id, honest()));
    }
    let result = run_audited(&scenario(505, 10, nodes));

    let mut ever_submitted = false;
    for outcome in &result.outcomes {
        let report = &outcome.report;
        if report.submitted.iter().any(|id| id == "fr") {
            ever_submitted = true;
            assert!(
                !report.accepted.iter().any(|a| a.node_id == "fr"),
                "free rider accepted in round {}",
                report.round_id
            );
        }
        assert_eq!(*report.payouts_micro.get("fr").unwrap_or(&0), 0);
    }
    assert!(ever_submitted);

    let below = result
        .outcomes
        .iter()
        .find(|o| o.report.trust["fr"].after_micro < to_micro(0.40))
        .map(|o| o.report.round_id)
        .expect("free-rider trust never fell below the admission threshold");
    assert!(below <= 10);

    assert!(start.elapsed() < Duration::from_secs(10));
    println!("criterion 5 (free-rider exclusion): PASS");
}

#[test]
fn criterion_6_recovery_path() {
    let start = Instant::now();
    let switch_round = 6;
    let mut nodes: Vec<(&str, NodeBehavior)> = vec![(
        "rec",
        NodeBehavior::Recovering {
            switch_round,
            before: Box::new(NodeBehavior::NoiseAttacker { std: 1.0 }),
            after: Box::new(honest()),
        },
    )];
    for id in ["h0", "h1", "h2", "h3"] {
        nodes.push((id, honest()));
    }
    let result = run_audited(&scenario(606, switch_round + 15, nodes));

    // the node must actually lose Active standing while attacking
    let demoted = result.outcomes[..switch_round as usize]
        .iter()
        .any(|o| o.report.trust["rec"].after_micro < to_micro(0.40));
    assert!(demoted, "attacker phase never cost the node Active status");

    let regained = result
        .outcomes
        .iter()
        .filter(|o| o.report.round_id >= switch_round)
        .find(|o| o.report.trust["rec"].after_micro >= to_micro(0.40))
        .map(|o| o.report.round_id)
        .expect("node never regained admission-level trust");
    assert!(
        regained <= switch_round + 15,
        "regained only at round {regained}"
    );
    assert_eq!(
        result.coordinator.status_of("rec").unwrap(),
        NodeStatus::Active
    );

    assert!(start.elapsed() < Duration::from_secs(10));
    println!("criterion 6 (recovery path): PASS");
}

#[test]
fn criterion_7_digest_auditability() {
    // scenario-level digest audits run inside run_audited for every
    // acceptance scenario; spot-check one here end to end
    let dir = tempfile::tempdir().unwrap();
    let config = scenario(707, 6, mixed_roster());
    run_scenario(&config, Some(dir.path())).unwrap();
    assert_eq!(verify_run(dir.path()).unwrap(), 6);

    // finalize arguments stay the same size regardless of model dimension
    let lens: Vec<usize> = [2usize, 200, 20_000]
        .iter()
        .map(|&d| {
            let model = ModelArtifact {
                round_id: 9,
                values: vec![0.125; d],
            };
            let model_bytes = canonical_json(&model).unwrap();
            let report_bytes = vec![0x42; d];
            let args = FinalizeArgs {
                round_id: 9,
                cid_model: &cid_of(&model_bytes),
                cid_report: &cid_of(&report_bytes),
                digest_hex: hex::encode([7u8; 32]),
            };
            canonical_json(&args).unwrap().len()
        })
        .collect();
    assert_eq!(lens[0], lens[1]);
    assert_eq!(lens[1], lens[2]);
    println!("criterion 7 (digest auditability): PASS");
}

#[test]
fn criterion_8_conservation_and_determinism() {
    let config = scenario(808, 15, mixed_roster());
    let r1 = run_audited(&config);
    let r2 = run_audited(&config);

    // byte-identical reruns
    assert_eq!(r1.metrics_csv, r2.metrics_csv);
    assert_eq!(r1.events_jsonl, r2.events_jsonl);
    for (a, b) in r1.outcomes.iter().zip(&r2.outcomes) {
        assert_eq!(
            canonical_json(&a.report).unwrap(),
            canonical_json(&b.report).unwrap()
        );
        assert_eq!(a.cid_model, b.cid_model);
        assert_eq!(a.digest, b.digest);
    }

    // conservation after every chain operation: replay each event prefix
    let events = &r1.chain.events;
    for k in 0..=events.len() {
        let state = ContractState::replay(&events[..k]).unwrap();
        assert!(state.conservation_holds(), "violated after event {k}");
    }
    println!("criterion 8 (conservation and determinism): PASS");
}

#[test]
fn criterion_9_aggregation_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..1_000 {
        let n = rng.gen_range(1usize..=7);
        let d = rng.gen_range(1usize..=5);
        let items: Vec<WeightedUpdate> = (0..n)
            .map(|i| WeightedUpdate {
                node_id: format!("n{i}"),
                update: ModelVector((0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()),
                weight: rng.gen_range(0.01..5.0),
            })
            .collect();

        let median = weighted_coordinate_median(&items).unwrap();

        // bounded influence: each output coordinate is one of the inputs
        for k in 0..d {
            let lo = items.iter().map(|it| it.update.0[k]).fold(f64::INFINITY, f64::min);
            let hi = items.iter().map(|it| it.update.0[k]).fold(f64::NEG_INFINITY, f64::max);
            assert!(median.0[k] >= lo && median.0[k] <= hi);
        }

        // weight-scale invariance
        let c = rng.gen_range(0.1..100.0);
        let scaled: Vec<WeightedUpdate> = items
            .iter()
            .map(|it| WeightedUpdate { weight: it.weight * c, ..it.clone() })
            .collect();
        let median_scaled = weighted_coordinate_median(&scaled).unwrap();
        for k in 0..d {
            assert!((median.0[k] - median_scaled.0[k]).abs() < 1e-12);
        }

        // permutation invariance
        let mut shuffled = items.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        assert_eq!(weighted_coordinate_median(&shuffled).unwrap().0, median.0);

        // breakdown: a strict weight majority pins the output exactly
        let mut majority = items.clone();
        let total: f64 = majority.iter().map(|it| it.weight).sum();
        majority[0].weight = total * 1.5;
        let pinned = weighted_coordinate_median(&majority).unwrap();
        assert_eq!(pinned.0, majority[0].update.0);

        // trim=0 equals the plain weighted mean
        let trimmed = weighted_trimmed_mean(&items, 0.0).unwrap();
        let total: f64 = items.iter().map(|it| it.weight).sum();
        for k in 0..d {
            let mean: f64 = items.iter().map(|it| it.weight * it.update.0[k]).sum::<f64>() / total;
            assert!((trimmed.0[k] - mean).abs() < 1e-12);
        }
    }
    println!("criterion 9 (aggregation properties): PASS");
}

#[test]
fn criterion_10_complexity_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let d = 8;
    let cost = |n: usize, rng: &mut ChaCha8Rng| -> f64 {
        let items: Vec<WeightedUpdate> = (0..n)
            .map(|i| WeightedUpdate {
                node_id: format!("n{i:04}"),
                update: ModelVector((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                weight: 1.0,
            })
            .collect();
        let mut comparisons = 0u64;
        weighted_coordinate_median_counted(&items, &mut comparisons).unwrap();
        // screening visits each admitted update once
        (comparisons + n as u64) as f64
    };
    let ratio = |n: usize, rng: &mut ChaCha8Rng| {
        let nf = n as f64;
        cost(n, rng) / (nf * nf.log2())
    };
    let r8 = ratio(8, &mut rng);
    let r64 = ratio(64, &mut rng);
    let r512 = ratio(512, &mut rng);
    assert!(
        r64 <= 2.0 * r8 && r512 <= 2.0 * r8,
        "cost per n*log2(n): {r8} {r64} {r512}"
    );
    println!("criterion 10 (complexity scaling): PASS");
}
