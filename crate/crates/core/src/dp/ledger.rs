use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::codec::Encoder;
use crate::crypto::{hash, Digest, PublicKey};
use crate::identity::GenesisCredential;
use crate::tx::Transaction;

/// What a DP block commits to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockContent {
    /// Full canonical transaction bytes are hashed and kept on-chain.
    #[default]
    FullData,
    /// Only transaction IDs go on-chain; payloads live in each validator's
    /// personal store.
    HashOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DpBlockHeader {
    pub seq_num: u64,
    pub block_id: Digest,
    pub prev_bid: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpBlock {
    pub header: DpBlockHeader,
    pub txs: Vec<Transaction>,
}

/// Block ID over the header fields and the canonically sorted pool.
pub fn dp_block_id(seq_num: u64, prev_bid: &Digest, txs: &[Transaction], content: BlockContent) -> Digest {
    let mut e = Encoder::new();
    e.raw(b"bfica-dp-block").u64(seq_num).digest(prev_bid).len(txs.len());
    for tx in txs {
        match content {
            BlockContent::FullData => e.bytes(&tx.to_bytes()),
            BlockContent::HashOnly => e.digest(&tx.t_id),
        };
    }
    hash(&e.finish())
}

/// Sorts into the canonical `(submitted_at, t_id)` order.
pub fn canonical_order(txs: &mut [Transaction]) {
    txs.sort_by_key(Transaction::order_key);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DpRejection {
    Unauthorized,
    Incomplete,
    Duplicate,
}

impl fmt::Display for DpRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DpRejection::Unauthorized => "unauthorized",
            DpRejection::Incomplete => "incomplete",
            DpRejection::Duplicate => "duplicate",
        })
    }
}

/// One DP validator's ledger: sealed blocks plus the running pool.
#[derive(Debug, Clone)]
pub struct DpLedger {
    genesis: GenesisCredential,
    b_max: usize,
    content: BlockContent,
    sealed: Vec<DpBlock>,
    pool: Vec<Transaction>,
    seen: BTreeSet<(Digest, PublicKey)>,
}

impl DpLedger {
    pub fn new(genesis: GenesisCredential, b_max: usize, content: BlockContent) -> Self {
        assert!(b_max >= 1, "b_max must be at least 1");
        Self {
            genesis,
            b_max,
            content,
            sealed: Vec::new(),
            pool: Vec::new(),
            seen: BTreeSet::new(),
        }
    }

    pub(crate) fn from_parts(
        genesis: GenesisCredential,
        b_max: usize,
        content: BlockContent,
        sealed: Vec<DpBlock>,
        pool: Vec<Transaction>,
    ) -> Self {
        let seen = sealed
            .iter()
            .flat_map(|b| b.txs.iter())
            .chain(pool.iter())
            .filter_map(|t| t.primary_signer().map(|s| (t.t_id, *s)))
            .collect();
        Self {
            genesis,
            b_max,
            content,
            sealed,
            pool,
            seen,
        }
    }

    pub fn genesis(&self) -> &GenesisCredential {
        &self.genesis
    }

    pub fn b_max(&self) -> usize {
        self.b_max
    }

    pub fn content(&self) -> BlockContent {
        self.content
    }

    pub fn sealed(&self) -> &[DpBlock] {
        &self.sealed
    }

    pub fn pool(&self) -> &[Transaction] {
        &self.pool
    }

    pub fn tip_id(&self) -> Digest {
        self.sealed
            .last()
            .map_or(self.genesis.genesis_block_id(), |b| b.header.block_id)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.sealed.iter().flat_map(|b| b.txs.iter()).chain(self.pool.iter())
    }

    pub fn is_duplicate(&self, tx: &Transaction) -> bool {
        tx.primary_signer()
            .is_some_and(|s| self.seen.contains(&(tx.t_id, *s)))
    }

    pub(crate) fn push(&mut self, tx: Transaction) {
        if let Some(s) = tx.primary_signer() {
            self.seen.insert((tx.t_id, *s));
        }
        self.pool.push(tx);
    }

    /// Reorders the pool locally. Consensus is unaffected because blocks
    /// hash the sorted pool.
    pub fn shuffle_pool(&mut self, order: &[usize]) {
        let old = std::mem::take(&mut self.pool);
        self.pool = order.iter().map(|&i| old[i].clone()).collect();
    }

    pub fn pool_full(&self) -> bool {
        self.pool.len() >= self.b_max
    }

    /// Header the pool would seal into, without sealing.
    pub fn candidate(&self) -> Option<DpBlockHeader> {
        if self.pool.len() != self.b_max {
            return None;
        }
        let mut txs = self.pool.clone();
        canonical_order(&mut txs);
        let seq_num = self.sealed.len() as u64;
        let prev_bid = self.tip_id();
        Some(DpBlockHeader {
            seq_num,
            block_id: dp_block_id(seq_num, &prev_bid, &txs, self.content),
            prev_bid,
        })
    }

    /// Seals the pool when it holds exactly `b_max` requests.
    pub fn assemble(&mut self) -> Option<DpBlockHeader> {
        let header = self.candidate()?;
        let mut txs = std::mem::take(&mut self.pool);
        canonical_order(&mut txs);
        self.sealed.push(DpBlock { header, txs });
        Some(header)
    }

    /// Recomputes every block ID and link from genesis; returns the first
    /// failing height.
    pub fn verify_chain(&self) -> Result<(), u64> {
        let mut prev = self.genesis.genesis_block_id();
        for (h, b) in self.sealed.iter().enumerate() {
            let ok = b.header.seq_num == h as u64
                && b.header.prev_bid == prev
                && b.txs.iter().all(|t| t.verify_structure().is_ok())
                && dp_block_id(b.header.seq_num, &prev, &b.txs, self.content) == b.header.block_id;
            if !ok {
                return Err(h as u64);
            }
            prev = b.header.block_id;
        }
        Ok(())
    }
}
