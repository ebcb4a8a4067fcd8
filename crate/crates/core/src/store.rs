//! In-process content-addressed store standing in for IPFS.
//!
//! Artifacts are keyed by the hex SHA-256 of their bytes. Retrieval
//! re-verifies content against its address.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Content identifier: 64 lowercase hex chars (SHA-256 of the content).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Cid(String);

impl Cid {
    pub fn parse(s: &str) -> Result<Cid> {
        if s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(Cid(s.to_string()))
        } else {
            Err(Error::InvalidCid(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Cid::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Hash bytes into their content address.
pub fn cid_of(content: &[u8]) -> Cid {
    Cid(hex::encode(Sha256::digest(content)))
}

/// Thread-safe in-memory content-addressed store.
#[derive(Debug, Default)]
pub struct ContentStore {
    inner: RwLock<BTreeMap<Cid, Vec<u8>>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store content and return its address. Idempotent.
    pub fn put(&self, content: &[u8]) -> Cid {
        let cid = cid_of(content);
        self.inner
            .write()
            .unwrap()
            .entry(cid.clone())
            .or_insert_with(|| content.to_vec());
        cid
    }

    /// Retrieve content, verifying it still matches its address.
    pub fn get(&self, cid: &Cid) -> Result<Vec<u8>> {
        let guard = self.inner.read().unwrap();
        let bytes = guard
            .get(cid)
            .ok_or_else(|| Error::MissingArtifact(cid.to_string()))?;
        if &cid_of(bytes) != cid {
            return Err(Error::StoreCorruption(cid.to_string()));
        }
        Ok(bytes.clone())
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.inner.read().unwrap().contains_key(cid)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write every artifact to `dir`, one file per Cid named by the Cid.
    pub fn dump_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (cid, bytes) in self.inner.read().unwrap().iter() {
            std::fs::write(dir.join(cid.as_str()), bytes)?;
        }
        Ok(())
    }

    #[cfg(test)]
    fn corrupt(&self, cid: &Cid, bytes: Vec<u8>) {
        self.inner.write().unwrap().insert(cid.clone(), bytes);
    }
}
