//! Declarative scenario configuration (JSON). Unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node_sim::NodeBehavior;
use crate::policy::PolicyConfig;
use crate::trust::{TrustParams, TrustWeights};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub dimension: usize,
    pub samples_per_node: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: NodeId,
    pub behavior: NodeBehavior,
    /// Stake escrowed at registration, in whole tokens.
    pub stake: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub rounds: u64,
    pub task: TaskConfig,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub trust: TrustParams,
    #[serde(default)]
    pub weights: TrustWeights,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy
            .validate()
            .map_err(|e| Error::Config(format!("policy: {e}")))?;
        self.trust
            .validate()
            .map_err(|e| Error::Config(format!("trust: {e}")))?;
        self.weights
            .validate()
            .map_err(|e| Error::Config(format!("weights: {e}")))?;
        if self.task.dimension < 1 {
            return Err(Error::Config("task.dimension must be >= 1".into()));
        }
        if self.task.samples_per_node < self.task.dimension {
            return Err(Error::Config(
                "task.samples_per_node must be >= task.dimension".into(),
            ));
        }
        if self.task.noise_std < 0.0 {
            return Err(Error::Config("task.noise_std must be >= 0".into()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Config("nodes must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.is_empty() {
                return Err(Error::Config(format!("nodes[{i}].id must not be empty")));
            }
            if !seen.insert(&node.id) {
                return Err(Error::Config(format!(
                    "nodes[{i}].id: duplicate id {}",
                    node.id
                )));
            }
            if node.stake <= 0.0 {
                return Err(Error::Config(format!(
                    "nodes[{i}].stake must be > 0 (node {})",
                    node.id
                )));
            }
            node.behavior
                .validate()
                .map_err(|e| Error::Config(format!("nodes[{i}].behavior: {e}")))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
