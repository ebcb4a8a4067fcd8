//! On-chain-style contract state machine: stake escrow, round finalization
//! committing CIDs plus a Merkle digest, reward distribution, and slashing,
//! with an append-only replayable event log.
//!
//! All monetary values are integer micro-tokens. Slashed stake moves to a
//! treasury account so token conservation stays auditable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::store::Cid;
use crate::NodeId;

/// One entry of the finalization digest: a payout and/or slash for a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestLeaf {
    pub node_id: NodeId,
    pub payout_micro: i64,
    pub slash_flag: bool,
    pub slash_amount_micro: i64,
}

impl DigestLeaf {
    fn validate(&self) -> Result<()> {
        if self.payout_micro < 0 {
            return Err(Error::OutOfRange(format!(
                "payout {} for {}",
                self.payout_micro, self.node_id
            )));
        }
        if self.slash_flag != (self.slash_amount_micro > 0) {
            return Err(Error::OutOfRange(format!(
                "slash flag/amount mismatch for {}",
                self.node_id
            )));
        }
        Ok(())
    }
}

/// Canonical leaf encoding: length-prefixed UTF-8 node id, then payout,
/// slash flag, and slash amount as fixed-width big-endian integers.
pub fn encode_leaf(leaf: &DigestLeaf) -> Vec<u8> {
    let id = leaf.node_id.as_bytes();
    let mut out = Vec::with_capacity(4 + id.len() + 8 + 1 + 8);
    out.extend_from_slice(&(id.len() as u32).to_be_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&(leaf.payout_micro as u64).to_be_bytes());
    out.push(leaf.slash_flag as u8);
    out.extend_from_slice(&(leaf.slash_amount_micro as u64).to_be_bytes());
    out
}

/// Merkle root over the canonical leaf encodings. Leaves must arrive sorted
/// by ascending node id; an odd level duplicates its last hash; the empty
/// list hashes to 32 zero bytes.
pub fn merkle_root(leaves: &[DigestLeaf]) -> Result<[u8; 32]> {
    if leaves.windows(2).any(|w| w[0].node_id >= w[1].node_id) {
        return Err(Error::UnsortedLeaves);
    }
    if leaves.is_empty() {
        return Ok([0u8; 32]);
    }
    let mut level: Vec<[u8; 32]> = leaves
        .iter()
        .map(|l| Sha256::digest(encode_leaf(l)).into())
        .collect();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks(2)
            .map(|pair| {
                let mut h = Sha256::new();
                h.update(pair[0]);
                h.update(pair[1]);
                h.finalize().into()
            })
            .collect();
    }
    Ok(level[0])
}

/// Finalized per-round record. Immutable once written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_id: u64,
    pub cid_model: Cid,
    pub cid_report: Cid,
    #[serde(with = "hex_digest")]
    pub digest: [u8; 32],
    pub leaves: Vec<DigestLeaf>,
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(de)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

/// Append-only contract events. The log replays to an identical state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChainEvent {
    Registered {
        node_id: NodeId,
        pubkey_hex: String,
        stake_micro: i64,
    },
    Slashed {
        round_id: u64,
        node_id: NodeId,
        amount_micro: i64,
    },
    RoundFinalized {
        round_id: u64,
        cid_model: Cid,
        cid_report: Cid,
        digest_hex: String,
        leaves: Vec<DigestLeaf>,
    },
    Distributed {
        round_id: u64,
        total_micro: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub stake_micro: i64,
    pub balance_micro: i64,
    pub pubkey: Vec<u8>,
}

/// Single-writer contract state machine.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractState {
    pub accounts: BTreeMap<NodeId, Account>,
    pub rounds: BTreeMap<u64, RoundRecord>,
    pub distributed: BTreeSet<u64>,
    pub treasury_micro: i64,
    /// Total stake ever escrowed (conservation input).
    pub total_staked_in_micro: i64,
    /// Total rewards ever minted by distribution (conservation input).
    pub total_minted_micro: i64,
    pub events: Vec<ChainEvent>,
}

impl ContractState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Escrow a node's stake and initialize its balance.
    pub fn register_node(&mut self, node_id: &str, pubkey: &[u8], stake_micro: i64) -> Result<()> {
        if stake_micro <= 0 {
            return Err(Error::InvalidStake);
        }
        if self.accounts.contains_key(node_id) {
            return Err(Error::DuplicateRegistration(node_id.to_string()));
        }
        self.accounts.insert(
            node_id.to_string(),
            Account {
                stake_micro,
                balance_micro: 0,
                pubkey: pubkey.to_vec(),
            },
        );
        self.total_staked_in_micro += stake_micro;
        self.events.push(ChainEvent::Registered {
            node_id: node_id.to_string(),
            pubkey_hex: hex::encode(pubkey),
            stake_micro,
        });
        Ok(())
    }

    pub fn stake_of(&self, node_id: &str) -> Option<i64> {
        self.accounts.get(node_id).map(|a| a.stake_micro)
    }

    pub fn balance_of(&self, node_id: &str) -> Option<i64> {
        self.accounts.get(node_id).map(|a| a.balance_micro)
    }

    /// Record a round's CIDs and digest and execute any slashes carried in
    /// the leaves. Payouts are not transferred here.
    pub fn finalize_round(
        &mut self,
        round_id: u64,
        cid_model: Cid,
        cid_report: Cid,
        leaves: Vec<DigestLeaf>,
    ) -> Result<[u8; 32]> {
        if self.rounds.contains_key(&round_id) {
            return Err(Error::AlreadyFinalized(round_id));
        }
        for leaf in &leaves {
            leaf.validate()?;
            let account = self
                .accounts
                .get(&leaf.node_id)
                .ok_or_else(|| Error::UnknownNode(leaf.node_id.clone()))?;
            if leaf.slash_amount_micro > account.stake_micro {
                return Err(Error::SlashExceedsStake {
                    node_id: leaf.node_id.clone(),
                    amount: leaf.slash_amount_micro,
                    stake: account.stake_micro,
                });
            }
        }
        let digest = merkle_root(&leaves)?;
        for leaf in &leaves {
            if leaf.slash_flag {
                let account = self.accounts.get_mut(&leaf.node_id).unwrap();
                account.stake_micro -= leaf.slash_amount_micro;
                self.treasury_micro += leaf.slash_amount_micro;
                self.events.push(ChainEvent::Slashed {
                    round_id,
                    node_id: leaf.node_id.clone(),
                    amount_micro: leaf.slash_amount_micro,
                });
            }
        }
        self.events.push(ChainEvent::RoundFinalized {
            round_id,
            cid_model: cid_model.clone(),
            cid_report: cid_report.clone(),
            digest_hex: hex::encode(digest),
            leaves: leaves.clone(),
        });
        self.rounds.insert(
            round_id,
            RoundRecord {
                round_id,
                cid_model,
                cid_report,
                digest,
                leaves,
            },
        );
        Ok(digest)
    }

    /// Credit each leaf's payout to the node balance. Callable once per
    /// finalized round.
    pub fn distribute_rewards(&mut self, round_id: u64) -> Result<()> {
        let record = self
            .rounds
            .get(&round_id)
            .ok_or(Error::NotFinalized(round_id))?;
        if self.distributed.contains(&round_id) {
            return Err(Error::AlreadyDistributed(round_id));
        }
        let leaves = record.leaves.clone();
        let mut total = 0i64;
        for leaf in &leaves {
            let account = self.accounts.get_mut(&leaf.node_id).unwrap();
            account.balance_micro += leaf.payout_micro;
            total += leaf.payout_micro;
        }
        self.total_minted_micro += total;
        self.distributed.insert(round_id);
        self.events.push(ChainEvent::Distributed {
            round_id,
            total_micro: total,
        });
        Ok(())
    }

    /// Token conservation: balances + stakes + treasury equal everything
    /// ever escrowed plus everything ever minted.
    pub fn conservation_holds(&self) -> bool {
        let stakes: i64 = self.accounts.values().map(|a| a.stake_micro).sum();
        let balances: i64 = self.accounts.values().map(|a| a.balance_micro).sum();
        stakes + balances + self.treasury_micro
            == self.total_staked_in_micro + self.total_minted_micro
    }

    /// Rebuild state from an event log.
    pub fn replay(events: &[ChainEvent]) -> Result<ContractState> {
        let mut state = ContractState::new();
        for event in events {
            match event {
                ChainEvent::Registered {
                    node_id,
                    pubkey_hex,
                    stake_micro,
                } => {
                    let pubkey =
                        hex::decode(pubkey_hex).map_err(|e| Error::Config(e.to_string()))?;
                    state.register_node(node_id, &pubkey, *stake_micro)?;
                }
                // slashes are re-executed by finalization
                ChainEvent::Slashed { .. } => {}
                ChainEvent::RoundFinalized {
                    round_id,
                    cid_model,
                    cid_report,
                    leaves,
                    ..
                } => {
                    state.finalize_round(
                        *round_id,
                        cid_model.clone(),
                        cid_report.clone(),
                        leaves.clone(),
                    )?;
                }
                ChainEvent::Distributed { round_id, .. } => {
                    state.distribute_rewards(*round_id)?;
                }
            }
        }
        Ok(state)
    }
}
