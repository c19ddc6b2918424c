//! Simulated cloud storage for bulky collision media. Only the content hash
//! goes on-chain (as `TS_data`); readers need a key grant from the owner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::crypto::{Digest, PublicKey};

const CHUNK: usize = 1 << 16;

/// Stored bytes, or a seeded generator standing in for a large file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Content {
    Bytes(Vec<u8>),
    /// `size` bytes from a ChaCha stream seeded with `seed`, with the bytes
    /// at `flips` inverted.
    Synthetic {
        size: u64,
        seed: u64,
        flips: BTreeSet<u64>,
    },
}

impl Content {
    pub fn synthetic(size: u64, seed: u64) -> Self {
        Content::Synthetic {
            size,
            seed,
            flips: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> u64 {
        match self {
            Content::Bytes(b) => b.len() as u64,
            Content::Synthetic { size, .. } => *size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feeds the content to `sink` in chunks without materialising it.
    fn stream(&self, mut sink: impl FnMut(&[u8])) {
        match self {
            Content::Bytes(b) => sink(b),
            Content::Synthetic { size, seed, flips } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                let mut buf = vec![0u8; CHUNK];
                let mut offset = 0u64;
                while offset < *size {
                    let n = CHUNK.min((*size - offset) as usize);
                    rng.fill_bytes(&mut buf[..n]);
                    for &f in flips.range(offset..offset + n as u64) {
                        buf[(f - offset) as usize] ^= 0xff;
                    }
                    sink(&buf[..n]);
                    offset += n as u64;
                }
            }
        }
    }

    pub fn hash(&self) -> Digest {
        let mut h = Sha256::new();
        self.stream(|c| h.update(c));
        Digest::from_bytes(h.finalize().into())
    }

    pub fn to_vec(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() as usize);
        self.stream(|c| out.extend_from_slice(c));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub handle: String,
    pub owner: String,
    pub owner_key: PublicKey,
    pub content: Content,
    /// Hash at insertion time.
    pub content_hash: Digest,
    pub access: BTreeSet<PublicKey>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("no object with handle {0}")]
    NotFound(String),
    #[error("access to {0} denied")]
    Denied(String),
    #[error("only the owner may grant access to {0}")]
    NotOwner(String),
    #[error("offset {offset} is outside {handle}")]
    OutOfRange { handle: String, offset: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageProof {
    Intact,
    Altered,
    Unavailable,
}

#[derive(Debug, Default, Clone)]
pub struct OffchainStore {
    objects: BTreeMap<String, StoredObject>,
    next: u64,
}

impl OffchainStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `content`; the owner can always read it back.
    pub fn put(&mut self, owner: &str, owner_key: PublicKey, content: Content) -> StoredObject {
        self.next += 1;
        let handle = format!("cloud://{owner}/{:06}", self.next);
        let obj = StoredObject {
            handle: handle.clone(),
            owner: owner.to_string(),
            owner_key,
            content_hash: content.hash(),
            content,
            access: BTreeSet::from([owner_key]),
        };
        self.objects.insert(handle, obj.clone());
        obj
    }

    pub fn grant(&mut self, handle: &str, owner_key: &PublicKey, grantee: PublicKey) -> Result<(), StoreError> {
        let obj = self.object_mut(handle)?;
        if obj.owner_key != *owner_key {
            return Err(StoreError::NotOwner(handle.to_string()));
        }
        obj.access.insert(grantee);
        Ok(())
    }

    pub fn get(&self, requester: &PublicKey, handle: &str) -> Result<Vec<u8>, StoreError> {
        let obj = self.object(handle)?;
        if !obj.access.contains(requester) {
            return Err(StoreError::Denied(handle.to_string()));
        }
        Ok(obj.content.to_vec())
    }

    /// Compares the current content against the hash anchored on-chain.
    pub fn proof_of_storage(&self, handle: &str, onchain_ts_data: &Digest) -> StorageProof {
        match self.objects.get(handle) {
            None => StorageProof::Unavailable,
            Some(obj) if obj.content.hash() == *onchain_ts_data => StorageProof::Intact,
            Some(_) => StorageProof::Altered,
        }
    }

    /// Inverts one byte in place, as an owner editing footage after the fact.
    pub fn tamper(&mut self, handle: &str, offset: u64) -> Result<(), StoreError> {
        let obj = self.object_mut(handle)?;
        if offset >= obj.content.len() {
            return Err(StoreError::OutOfRange {
                handle: handle.to_string(),
                offset,
            });
        }
        match &mut obj.content {
            Content::Bytes(b) => b[offset as usize] ^= 0xff,
            Content::Synthetic { flips, .. } => {
                if !flips.remove(&offset) {
                    flips.insert(offset);
                }
            }
        }
        Ok(())
    }

    pub fn delete(&mut self, handle: &str) -> Result<StoredObject, StoreError> {
        self.objects
            .remove(handle)
            .ok_or_else(|| StoreError::NotFound(handle.to_string()))
    }

    pub fn object(&self, handle: &str) -> Result<&StoredObject, StoreError> {
        self.objects
            .get(handle)
            .ok_or_else(|| StoreError::NotFound(handle.to_string()))
    }

    fn object_mut(&mut self, handle: &str) -> Result<&mut StoredObject, StoreError> {
        self.objects
            .get_mut(handle)
            .ok_or_else(|| StoreError::NotFound(handle.to_string()))
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// `handle,size,content_hash,owner` rows, sorted by handle.
    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("handle,size,content_hash,owner\n");
        for obj in self.objects.values() {
            writeln!(
                out,
                "{},{},{},{}",
                obj.handle,
                obj.content.len(),
                obj.content_hash,
                obj.owner
            )
            .expect("string write");
        }
        out
    }
}

/// Cost of moving one stored object to a validator: sign, transmit, verify,
/// decrypt. Times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferCostModel {
    pub sign_cost: f64,
    /// Bytes per second.
    pub rate: f64,
    pub verify_cost: f64,
    /// Seconds per byte.
    pub decrypt_cost: f64,
}

impl Default for TransferCostModel {
    /// 1.2 GB/s link. The fixed and per-byte crypto terms are solved so that
    /// 2 GB costs 40 s and 8 GB costs 120 s.
    fn default() -> Self {
        Self {
            sign_cost: 20.0 / 3.0,
            rate: 1.2e9,
            verify_cost: 20.0 / 3.0,
            decrypt_cost: 1.25e-8,
        }
    }
}

impl TransferCostModel {
    pub fn is_valid(&self) -> bool {
        self.sign_cost >= 0.0 && self.verify_cost >= 0.0 && self.decrypt_cost >= 0.0 && self.rate > 0.0
    }

    pub fn estimate_transfer_time(&self, size: u64) -> f64 {
        let size = size as f64;
        self.sign_cost + size / self.rate + self.verify_cost + self.decrypt_cost * size
    }
}
