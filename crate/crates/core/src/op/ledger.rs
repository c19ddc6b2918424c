use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{hash_parts, Digest, PublicKey};
use crate::identity::GenesisCredential;
use crate::tx::{StructuralError, Transaction};

pub const DEFAULT_B_MAX: usize = 7;

/// One step of the dynamic block fold: `hash(t_id ‖ prev)`.
pub fn fold_step(prev: &Digest, t_id: &Digest) -> Digest {
    hash_parts(&[t_id.as_bytes(), prev.as_bytes()])
}

/// Folds a sequence of transaction ids onto `seed`.
pub fn fold<'a>(seed: Digest, t_ids: impl IntoIterator<Item = &'a Digest>) -> Digest {
    t_ids.into_iter().fold(seed, |acc, t| fold_step(&acc, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DynamicBlockHeader {
    pub seq_num: u64,
    pub block_id: Digest,
    pub prev_bid: Digest,
    /// `t_id` of the last transaction that changed `block_id`; zero when the
    /// block is empty.
    pub t_alt_bid: Digest,
}

/// The open, not yet sealed block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicBlock {
    header: DynamicBlockHeader,
    txs: Vec<Transaction>,
    id_history: Vec<Digest>,
}

impl DynamicBlock {
    fn open(seq_num: u64, prev_bid: Digest) -> Self {
        Self {
            header: DynamicBlockHeader {
                seq_num,
                block_id: prev_bid,
                prev_bid,
                t_alt_bid: Digest::ZERO,
            },
            txs: Vec::new(),
            id_history: Vec::new(),
        }
    }

    pub fn header(&self) -> &DynamicBlockHeader {
        &self.header
    }

    pub fn txs(&self) -> &[Transaction] {
        &self.txs
    }

    /// `id_history[i]` is the block ID after the `i+1`-th transaction.
    pub fn id_history(&self) -> &[Digest] {
        &self.id_history
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    /// Block ID after the first `n` transactions.
    pub fn id_at(&self, n: usize) -> Digest {
        if n == 0 {
            self.header.prev_bid
        } else {
            self.id_history[n - 1]
        }
    }

    fn push(&mut self, tx: Transaction) -> Digest {
        let id = fold_step(&self.header.block_id, &tx.t_id);
        self.header.block_id = id;
        self.header.t_alt_bid = tx.t_id;
        self.id_history.push(id);
        self.txs.push(tx);
        id
    }

    fn rebuild(&mut self) {
        let txs = std::mem::take(&mut self.txs);
        self.id_history.clear();
        self.header.block_id = self.header.prev_bid;
        self.header.t_alt_bid = Digest::ZERO;
        for tx in txs {
            self.push(tx);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlock {
    pub header: DynamicBlockHeader,
    pub txs: Vec<Transaction>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OpError {
    #[error("dynamic block is full ({0} transactions); seal it first")]
    DblockFull(usize),
    #[error("dynamic block holds {have} of {need} transactions; cannot seal")]
    NotFull { have: usize, need: usize },
    #[error("sealed block {0} does not exist")]
    NoSuchBlock(u64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainFault {
    #[error("prev_bid does not link to the preceding block")]
    BrokenLink,
    #[error("block_id does not match the transaction fold")]
    BlockId,
    #[error("t_alt_bid does not name the last transaction")]
    TAltBid,
    #[error("sealed block holds {got} transactions, expected {expected}")]
    Size { expected: usize, got: usize },
    #[error("sequence number out of order")]
    Sequence,
    #[error("transaction {index}: {error}")]
    Transaction { index: usize, error: StructuralError },
    #[error("listed transaction ids do not match the block contents")]
    TxList,
    #[error("undecodable record: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("block {height}: {fault}")]
pub struct ChainError {
    pub height: u64,
    pub fault: ChainFault,
}

/// Checks one block record against the fold, its link and its transactions.
pub(crate) fn check_block(
    header: &DynamicBlockHeader,
    txs: &[Transaction],
    expected_seq: u64,
    expected_prev: &Digest,
) -> Result<(), ChainFault> {
    if header.seq_num != expected_seq {
        return Err(ChainFault::Sequence);
    }
    if header.prev_bid != *expected_prev {
        return Err(ChainFault::BrokenLink);
    }
    for (index, tx) in txs.iter().enumerate() {
        tx.verify_structure()
            .map_err(|error| ChainFault::Transaction { index, error })?;
    }
    if fold(header.prev_bid, txs.iter().map(|t| &t.t_id)) != header.block_id {
        return Err(ChainFault::BlockId);
    }
    let t_alt = txs.last().map_or(Digest::ZERO, |t| t.t_id);
    if header.t_alt_bid != t_alt {
        return Err(ChainFault::TAltBid);
    }
    Ok(())
}

/// One validator's copy of the operational ledger.
#[derive(Debug, Clone)]
pub struct OpLedger {
    genesis: GenesisCredential,
    b_max: usize,
    sealed: Vec<SealedBlock>,
    dblock: DynamicBlock,
    seen: BTreeSet<(Digest, PublicKey)>,
}

impl OpLedger {
    pub fn new(genesis: GenesisCredential, b_max: usize) -> Self {
        assert!(b_max >= 1, "b_max must be at least 1");
        Self {
            genesis,
            b_max,
            sealed: Vec::new(),
            dblock: DynamicBlock::open(0, genesis.genesis_block_id()),
            seen: BTreeSet::new(),
        }
    }

    /// Rebuilds a ledger from dumped blocks without re-verifying them.
    pub(crate) fn from_parts(
        genesis: GenesisCredential,
        b_max: usize,
        sealed: Vec<SealedBlock>,
        dblock_txs: Vec<Transaction>,
    ) -> Self {
        let seq = sealed.len() as u64;
        let prev = sealed
            .last()
            .map_or(genesis.genesis_block_id(), |b| b.header.block_id);
        let mut dblock = DynamicBlock::open(seq, prev);
        dblock.txs = dblock_txs;
        dblock.rebuild();
        let mut ledger = Self {
            genesis,
            b_max,
            sealed,
            dblock,
            seen: BTreeSet::new(),
        };
        ledger.reindex();
        ledger
    }

    pub fn genesis(&self) -> &GenesisCredential {
        &self.genesis
    }

    pub fn b_max(&self) -> usize {
        self.b_max
    }

    pub fn sealed(&self) -> &[SealedBlock] {
        &self.sealed
    }

    pub fn dblock(&self) -> &DynamicBlock {
        &self.dblock
    }

    /// Block ID of the sealed tip (genesis when nothing is sealed).
    pub fn tip_id(&self) -> Digest {
        self.sealed
            .last()
            .map_or(self.genesis.genesis_block_id(), |b| b.header.block_id)
    }

    pub fn is_full(&self) -> bool {
        self.dblock.len() >= self.b_max
    }

    pub fn tx_count(&self) -> usize {
        self.sealed.iter().map(|b| b.txs.len()).sum::<usize>() + self.dblock.len()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.sealed
            .iter()
            .flat_map(|b| b.txs.iter())
            .chain(self.dblock.txs.iter())
    }

    pub fn find(&self, t_id: &Digest) -> Option<&Transaction> {
        self.transactions().find(|t| t.t_id == *t_id)
    }

    pub fn contains(&self, t_id: &Digest) -> bool {
        self.find(t_id).is_some()
    }

    /// Whether this signer already submitted this exact transaction.
    pub fn is_duplicate(&self, tx: &Transaction) -> bool {
        tx.primary_signer()
            .is_some_and(|s| self.seen.contains(&(tx.t_id, *s)))
    }

    fn reindex(&mut self) {
        let seen = self
            .transactions()
            .filter_map(|t| t.primary_signer().map(|s| (t.t_id, *s)))
            .collect();
        self.seen = seen;
    }

    /// Appends a verified transaction to the dynamic block and returns the new
    /// block ID.
    pub fn validate(&mut self, tx: Transaction) -> Result<Digest, OpError> {
        if self.is_full() {
            return Err(OpError::DblockFull(self.b_max));
        }
        if let Some(s) = tx.primary_signer() {
            self.seen.insert((tx.t_id, *s));
        }
        Ok(self.dblock.push(tx))
    }

    /// Seals the full dynamic block and opens the next one seeded with the
    /// sealed block's ID.
    pub fn seal(&mut self) -> Result<&SealedBlock, OpError> {
        if self.dblock.len() != self.b_max {
            return Err(OpError::NotFull {
                have: self.dblock.len(),
                need: self.b_max,
            });
        }
        let next = DynamicBlock::open(self.dblock.header.seq_num + 1, self.dblock.header.block_id);
        let done = std::mem::replace(&mut self.dblock, next);
        self.sealed.push(SealedBlock {
            header: done.header,
            txs: done.txs,
        });
        Ok(self.sealed.last().expect("just pushed"))
    }

    /// Drops dynamic-block transactions beyond the first `n` and returns them.
    pub fn truncate_dblock(&mut self, n: usize) -> Vec<Transaction> {
        if n >= self.dblock.len() {
            return Vec::new();
        }
        let removed = self.dblock.txs.split_off(n);
        self.dblock.rebuild();
        self.reindex();
        removed
    }

    /// Replaces the dynamic block contents wholesale (used when restoring
    /// from peers or applying an escalation resolution).
    pub fn replace_dblock(&mut self, txs: Vec<Transaction>) {
        self.dblock.txs = txs;
        self.dblock.rebuild();
        self.reindex();
    }

    /// Removes a transaction from the dynamic block and refolds, bypassing
    /// consensus. Adversary use only.
    pub fn tamper_remove(&mut self, t_id: &Digest) -> Option<Transaction> {
        let pos = self.dblock.txs.iter().position(|t| t.t_id == *t_id)?;
        let tx = self.dblock.txs.remove(pos);
        self.dblock.rebuild();
        self.reindex();
        Some(tx)
    }

    /// Appends without verification, ignoring `b_max`. Adversary use only.
    pub fn tamper_append(&mut self, tx: Transaction) {
        if let Some(s) = tx.primary_signer() {
            self.seen.insert((tx.t_id, *s));
        }
        self.dblock.push(tx);
    }

    /// Mutable access to a sealed block. Adversary use only; any change is
    /// caught by [`OpLedger::verify_chain`].
    pub fn tamper_sealed(&mut self, height: u64) -> Result<&mut SealedBlock, OpError> {
        self.sealed
            .get_mut(height as usize)
            .ok_or(OpError::NoSuchBlock(height))
    }

    /// Recomputes every block ID, link and transaction from genesis.
    pub fn verify_chain(&self) -> Result<(), ChainError> {
        let mut prev = self.genesis.genesis_block_id();
        for (h, block) in self.sealed.iter().enumerate() {
            let height = h as u64;
            check_block(&block.header, &block.txs, height, &prev)
                .map_err(|fault| ChainError { height, fault })?;
            if block.txs.len() != self.b_max {
                return Err(ChainError {
                    height,
                    fault: ChainFault::Size {
                        expected: self.b_max,
                        got: block.txs.len(),
                    },
                });
            }
            prev = block.header.block_id;
        }
        let height = self.sealed.len() as u64;
        check_block(&self.dblock.header, &self.dblock.txs, height, &prev)
            .map_err(|fault| ChainError { height, fault })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, KeyPair};
    use crate::identity::Partition;
    use crate::tx::{make_ese, Location, SafetyEvent};

    fn genesis() -> GenesisCredential {
        GenesisCredential {
            partition: Partition::Op,
            ca_verification_key: KeyPair::from_seed([9; 32]).public(),
        }
    }

    fn ese(i: u64) -> Transaction {
        make_ese(
            &KeyPair::from_seed([3; 32]),
            SafetyEvent::HardBrake,
            Location::from_degrees(-33.0, 151.0),
            i,
        )
    }

    #[test]
    fn fold_matches_hand_computed_values() {
        // reference values computed independently with a stock SHA-256
        let seed = hash(b"seed");
        let b1 = fold_step(&seed, &hash(b"tx1"));
        assert_eq!(
            b1.to_hex(),
            "fb417377356053c54d61a218b3b0f4c3c7527a59503226fe4708c6cfd6f5f1db"
        );
        let b2 = fold_step(&b1, &hash(b"tx2"));
        assert_eq!(
            b2.to_hex(),
            "dbdd7a9f729fdaf5e3ce9e251072c9ea958693c49a3bb843f7aabda5ba767098"
        );
        assert_eq!(fold(seed, &[hash(b"tx1"), hash(b"tx2")]), b2);
    }

    #[test]
    fn empty_dblock_seeded_from_genesis() {
        let ledger = OpLedger::new(genesis(), 7);
        let h = ledger.dblock().header();
        assert_eq!(h.block_id, genesis().genesis_block_id());
        assert_eq!(h.prev_bid, h.block_id);
        assert!(h.t_alt_bid.is_zero());
    }

    #[test]
    fn validate_updates_header() {
        let mut ledger = OpLedger::new(genesis(), 7);
        let seed = ledger.tip_id();
        let t1 = ese(1);
        let t2 = ese(2);
        let id1 = ledger.validate(t1.clone()).unwrap();
        assert_eq!(id1, fold_step(&seed, &t1.t_id));
        let id2 = ledger.validate(t2.clone()).unwrap();
        assert_eq!(id2, fold_step(&fold_step(&seed, &t1.t_id), &t2.t_id));
        assert_eq!(ledger.dblock().header().t_alt_bid, t2.t_id);
        assert!(ledger.is_duplicate(&t1));
    }

    #[test]
    fn seals_at_b_max_only() {
        let mut ledger = OpLedger::new(genesis(), 7);
        for i in 0..6 {
            ledger.validate(ese(i)).unwrap();
        }
        assert_eq!(ledger.seal().unwrap_err(), OpError::NotFull { have: 6, need: 7 });
        ledger.validate(ese(6)).unwrap();
        assert_eq!(ledger.validate(ese(99)), Err(OpError::DblockFull(7)));
        let sealed_id = ledger.seal().unwrap().header.block_id;
        let next = ledger.dblock().header();
        assert_eq!(next.seq_num, 1);
        assert_eq!(next.prev_bid, sealed_id);
        assert_eq!(next.block_id, sealed_id);
        ledger.verify_chain().unwrap();
    }

    #[test]
    fn sealed_mutation_fails_at_height() {
        let mut ledger = OpLedger::new(genesis(), 2);
        for i in 0..5 {
            if ledger.is_full() {
                ledger.seal().unwrap();
            }
            ledger.validate(ese(i)).unwrap();
        }
        ledger.verify_chain().unwrap();
        let block = ledger.tamper_sealed(1).unwrap();
        block.txs[0].submitted_at += 1;
        let err = ledger.verify_chain().unwrap_err();
        assert_eq!(err.height, 1);
    }

    #[test]
    fn tamper_remove_changes_id() {
        let mut ledger = OpLedger::new(genesis(), 7);
        let txs: Vec<_> = (0..3).map(ese).collect();
        for t in &txs {
            ledger.validate(t.clone()).unwrap();
        }
        let before = ledger.dblock().header().block_id;
        ledger.tamper_remove(&txs[1].t_id).unwrap();
        assert_ne!(ledger.dblock().header().block_id, before);
        assert_eq!(ledger.dblock().header().t_alt_bid, txs[2].t_id);
        assert!(!ledger.is_duplicate(&txs[1]));
        ledger.verify_chain().unwrap();
    }

    proptest::proptest! {
        #[test]
        fn sealing_splits_by_b_max(n in 0usize..40, b_max in 1usize..10) {
            let mut ledger = OpLedger::new(genesis(), b_max);
            for i in 0..n as u64 {
                ledger.validate(ese(i)).unwrap();
                if ledger.is_full() {
                    ledger.seal().unwrap();
                }
            }
            proptest::prop_assert_eq!(ledger.sealed().len(), n / b_max);
            proptest::prop_assert_eq!(ledger.dblock().len(), n % b_max);
            proptest::prop_assert_eq!(ledger.tx_count(), n);
            proptest::prop_assert!(ledger.verify_chain().is_ok());
        }

        #[test]
        fn fold_is_stepwise(seed in proptest::array::uniform32(0u8..), ids in proptest::collection::vec(proptest::array::uniform32(0u8..), 0..12)) {
            let ids: Vec<Digest> = ids.iter().map(|b| hash(b)).collect();
            let mut acc = hash(&seed);
            for id in &ids {
                acc = fold_step(&acc, id);
            }
            proptest::prop_assert_eq!(fold(hash(&seed), &ids), acc);
        }
    }
}
