//! Synthetic least-squares task generation and simulated worker behaviors.
//!
//! Every behavior is a pure function of (behavior, model, data, keyed RNG);
//! RNG streams are derived per node per round so changing one node's roster
//! entry never perturbs another node's randomness.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{ModelVector, ValidationSet};
use crate::NodeId;

/// Local training data of one node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalData {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Synthetic linear regression task shared by a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub true_weights: ModelVector,
    pub node_data: BTreeMap<NodeId, LocalData>,
    pub validation: ValidationSet,
    pub noise_std: f64,
}

/// Derive a deterministic per-(label, node, round) RNG from the global seed.
pub fn derive_rng(seed: u64, label: &str, node_id: &str, round: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update([0xfe]);
    h.update(label.as_bytes());
    h.update([0xfe]);
    h.update(node_id.as_bytes());
    h.update([0xfe]);
    h.update(round.to_be_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn sample_rows(rng: &mut ChaCha8Rng, n: usize, w: &ModelVector, noise_std: f64) -> LocalData {
    let d = w.dim();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let clean: f64 = x.iter().zip(&w.0).map(|(a, b)| a * b).sum();
        let noise: f64 = if noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            z * noise_std
        } else {
            0.0
        };
        inputs.push(x);
        targets.push(clean + noise);
    }
    LocalData { inputs, targets }
}

/// Build the scenario task: ground-truth weights, per-node local datasets,
/// and a disjoint held-out validation set of size >= 4·d.
pub fn generate_task(
    seed: u64,
    dimension: usize,
    node_ids: &[NodeId],
    samples_per_node: usize,
    noise_std: f64,
) -> Result<SyntheticTask> {
    if dimension < 1 || node_ids.is_empty() {
        return Err(Error::Config("dimension and nodes must be >= 1".into()));
    }
    if samples_per_node < dimension {
        return Err(Error::Config(
            "samples_per_node must be >= dimension".into(),
        ));
    }
    let mut task_rng = derive_rng(seed, "task", "", 0);
    let true_weights = ModelVector(
        (0..dimension)
            .map(|_| StandardNormal.sample(&mut task_rng))
            .collect(),
    );

    let val_n = (4 * dimension).max(16);
    let mut val_rng = derive_rng(seed, "validation", "", 0);
    let val = sample_rows(&mut val_rng, val_n, &true_weights, noise_std);

    let mut node_data = BTreeMap::new();
    for id in node_ids {
        let mut rng = derive_rng(seed, "data", id, 0);
        node_data.insert(
            id.clone(),
            sample_rows(&mut rng, samples_per_node, &true_weights, noise_std),
        );
    }
    Ok(SyntheticTask {
        true_weights,
        node_data,
        validation: ValidationSet {
            inputs: val.inputs,
            targets: val.targets,
        },
        noise_std,
    })
}

/// Simulated worker behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeBehavior {
    /// One full-batch gradient-descent step on the local MSE.
    Honest { lr: f64 },
    /// Gradient ascent: the honest step negated and scaled.
    SignFlip { lr: f64, scale: f64 },
    /// I.i.d. gaussian noise, unrelated to the data.
    NoiseAttacker { std: f64 },
    /// Always submits the zero vector.
    FreeRider,
    /// Runs `inner` with probability `p_submit`, otherwise stays silent.
    Intermittent { p_submit: f64, inner: Box<NodeBehavior> },
    /// Switches from `before` to `after` at `switch_round`.
    Recovering {
        switch_round: u64,
        before: Box<NodeBehavior>,
        after: Box<NodeBehavior>,
    },
}

impl NodeBehavior {
    pub fn validate(&self) -> Result<()> {
        match self {
            NodeBehavior::Honest { lr } => {
                if *lr <= 0.0 {
                    return Err(Error::Config("honest lr must be > 0".into()));
                }
            }
            NodeBehavior::SignFlip { lr, scale } => {
                if *lr <= 0.0 || *scale <= 0.0 {
                    return Err(Error::Config("sign_flip lr and scale must be > 0".into()));
                }
            }
            NodeBehavior::NoiseAttacker { std } => {
                if *std < 0.0 {
                    return Err(Error::Config("noise std must be >= 0".into()));
                }
            }
            NodeBehavior::FreeRider => {}
            NodeBehavior::Intermittent { p_submit, inner } => {
                if !(0.0..=1.0).contains(p_submit) {
                    return Err(Error::Config("p_submit must be in [0,1]".into()));
                }
                inner.validate()?;
            }
            NodeBehavior::Recovering {
                switch_round,
                before,
                after,
            } => {
                if *switch_round < 1 {
                    return Err(Error::Config("switch_round must be >= 1".into()));
                }
                before.validate()?;
                after.validate()?;
            }
        }
        Ok(())
    }
}

/// Full-batch gradient of the local MSE at `w`: (2/n)·Xᵀ(Xw − y).
pub fn local_gradient(w: &ModelVector, data: &LocalData) -> Result<ModelVector> {
    let d = w.dim();
    let n = data.targets.len();
    if n == 0 {
        return Err(Error::EmptyInput("local data"));
    }
    let mut grad = vec![0.0; d];
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let resid: f64 = x.iter().zip(&w.0).map(|(a, b)| a * b).sum::<f64>() - y;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += 2.0 * resid * xi;
        }
    }
    Ok(ModelVector(grad.into_iter().map(|g| g / n as f64).collect()))
}

/// Produce this node's update for the round, or `None` for non-participation.
pub fn local_update(
    behavior: &NodeBehavior,
    global: &ModelVector,
    data: &LocalData,
    round: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<ModelVector>> {
    match behavior {
        NodeBehavior::Honest { lr } => {
            Ok(Some(local_gradient(global, data)?.scale(-lr)))
        }
        NodeBehavior::SignFlip { lr, scale } => {
            Ok(Some(local_gradient(global, data)?.scale(lr * scale)))
        }
        NodeBehavior::NoiseAttacker { std } => {
            let v: Vec<f64> = (0..global.dim())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
                .collect();
            Ok(Some(ModelVector(v)))
        }
        NodeBehavior::FreeRider => Ok(Some(ModelVector::zeros(global.dim()))),
        NodeBehavior::Intermittent { p_submit, inner } => {
            let draw: f64 = rng.gen();
            if draw < *p_submit {
                local_update(inner, global, data, round, rng)
            } else {
                Ok(None)
            }
        }
        NodeBehavior::Recovering {
            switch_round,
            before,
            after,
        } => {
            let active = if round < *switch_round { before } else { after };
            local_update(active, global, data, round, rng)
        }
    }
}
