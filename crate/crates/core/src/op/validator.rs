use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::crypto::{Digest, PublicKey};
use crate::identity::{Directory, EntityKind, MemberRef};
use crate::tx::{Body, StructuralError, Transaction, TransactionKind};

use super::ledger::{DynamicBlockHeader, OpLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    Unauthorized,
    IncompleteMultisig,
    Duplicate,
    PayloadIntegrity,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejection::Unauthorized => "unauthorized",
            Rejection::IncompleteMultisig => "incomplete_multisig",
            Rejection::Duplicate => "duplicate",
            Rejection::PayloadIntegrity => "payload_integrity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum Verdict {
    Accepted,
    Rejected(Rejection),
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::Accepted
    }
}

/// What a validator reports for one consensus round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Proposal {
    pub verdict: Verdict,
    pub block_id: Digest,
    pub t_alt_bid: Digest,
    pub tx_count: usize,
}

/// Last state all validators agreed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Checkpoint {
    pub seq_num: u64,
    pub len: usize,
    pub block_id: Digest,
    pub t_alt_bid: Digest,
    pub last_key: Option<(u64, Digest)>,
}

impl Checkpoint {
    fn of(ledger: &OpLedger) -> Self {
        let d = ledger.dblock();
        Self {
            seq_num: d.header().seq_num,
            len: d.len(),
            block_id: d.header().block_id,
            t_alt_bid: d.header().t_alt_bid,
            last_key: d.txs().last().map(Transaction::order_key),
        }
    }
}

type InboxKey = (u64, Digest, Option<PublicKey>);

/// An operational-partition validator.
#[derive(Debug, Clone)]
pub struct OpValidator {
    pub handle: String,
    directory: Directory,
    ledger: OpLedger,
    inbox: BTreeMap<InboxKey, Transaction>,
    checkpoint: Checkpoint,
    forged: Vec<Transaction>,
}

impl OpValidator {
    pub fn new(handle: impl Into<String>, directory: Directory, b_max: usize) -> Self {
        let ledger = OpLedger::new(*directory.credential(), b_max);
        let checkpoint = Checkpoint::of(&ledger);
        Self {
            handle: handle.into(),
            directory,
            ledger,
            inbox: BTreeMap::new(),
            checkpoint,
            forged: Vec::new(),
        }
    }

    /// A validator continuing from an existing ledger, e.g. a reference
    /// replica used to replay an escalation.
    pub fn from_ledger(handle: impl Into<String>, directory: Directory, ledger: OpLedger) -> Self {
        let checkpoint = Checkpoint::of(&ledger);
        Self {
            handle: handle.into(),
            directory,
            ledger,
            inbox: BTreeMap::new(),
            checkpoint,
            forged: Vec::new(),
        }
    }

    pub fn ledger(&self) -> &OpLedger {
        &self.ledger
    }

    /// Direct ledger access, bypassing consensus. Adversary use only.
    pub fn ledger_mut(&mut self) -> &mut OpLedger {
        &mut self.ledger
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn header(&self) -> &DynamicBlockHeader {
        self.ledger.dblock().header()
    }

    /// Makes this validator re-append `tx` after every rollback, as a
    /// colluder insisting on a forged state would.
    pub fn insist_on(&mut self, tx: Transaction) {
        self.forged.push(tx);
    }

    pub fn is_insistent(&self) -> bool {
        !self.forged.is_empty()
    }

    pub(crate) fn clear_forged(&mut self) {
        self.forged.clear();
    }

    fn is_vehicle(&self, key: &PublicKey) -> bool {
        match self.directory.lookup(key) {
            Some(MemberRef::Pseudonym) => true,
            Some(MemberRef::Known { kind, .. }) => kind == EntityKind::Vehicle,
            None => false,
        }
    }

    fn is_known_vehicle(&self, key: &PublicKey) -> bool {
        self.directory.kind_of(key) == Some(EntityKind::Vehicle)
    }

    fn authorized(&self, tx: &Transaction) -> bool {
        let Some(first) = tx.signer_keys.first() else {
            return false;
        };
        match &tx.body {
            Body::Ese(_) | Body::Pet(_) => self.is_vehicle(first),
            Body::Net(n) => {
                let issuer_ok = *first == n.issuer
                    && matches!(
                        self.directory.kind_of(first),
                        Some(EntityKind::Manufacturer | EntityKind::Technician)
                    );
                let target_ok = self.is_known_vehicle(&n.target)
                    && tx.signer_keys.get(1).is_none_or(|k| *k == n.target);
                issuer_ok && target_ok
            }
            Body::Et(_) => self.is_known_vehicle(first),
            Body::Ret(_) => false,
        }
    }

    /// Structural, membership, duplicate and payload checks.
    pub fn verify_transaction(&self, tx: &Transaction) -> Verdict {
        use Rejection::*;
        if tx.kind() == TransactionKind::Ret || !self.authorized(tx) {
            return Verdict::Rejected(Unauthorized);
        }
        match tx.verify_structure() {
            Ok(()) => {}
            Err(StructuralError::SignatureCount { .. }) => return Verdict::Rejected(IncompleteMultisig),
            Err(StructuralError::BadSignature(_) | StructuralError::SignerMismatch) => {
                return Verdict::Rejected(Unauthorized)
            }
            Err(StructuralError::IdMismatch | StructuralError::PayloadIntegrity(_)) => {
                return Verdict::Rejected(PayloadIntegrity)
            }
        }
        if self.ledger.is_duplicate(tx) {
            return Verdict::Rejected(Duplicate);
        }
        if let Body::Et(et) = &tx.body {
            match self.ledger.find(&et.net_ref).and_then(Transaction::as_net) {
                None => return Verdict::Rejected(PayloadIntegrity),
                Some(net) if Some(&net.target) != tx.primary_signer() => {
                    return Verdict::Rejected(Unauthorized)
                }
                Some(_) => {}
            }
        }
        Verdict::Accepted
    }

    fn apply(&mut self, tx: &Transaction) -> Verdict {
        let verdict = self.verify_transaction(tx);
        if verdict.is_accepted() && self.ledger.validate(tx.clone()).is_err() {
            // a full dynamic block here means local state was tampered; the
            // unchanged block ID will surface as divergence
            return verdict;
        }
        verdict
    }

    fn proposal(&self, verdict: Verdict) -> Proposal {
        let h = self.header();
        Proposal {
            verdict,
            block_id: h.block_id,
            t_alt_bid: h.t_alt_bid,
            tx_count: self.ledger.dblock().len(),
        }
    }

    /// Receives `tx`, verifies it and, if accepted, folds it into the
    /// dynamic block.
    pub fn process(&mut self, tx: &Transaction) -> Proposal {
        self.inbox.insert(
            (tx.submitted_at, tx.t_id, tx.primary_signer().copied()),
            tx.clone(),
        );
        let verdict = self.apply(tx);
        self.proposal(verdict)
    }

    /// Records the current state as agreed.
    pub fn commit(&mut self) {
        self.checkpoint = Checkpoint::of(&self.ledger);
        self.inbox.clear();
    }

    pub fn seal(&mut self) -> Option<DynamicBlockHeader> {
        let header = self.ledger.seal().ok()?.header;
        self.commit();
        Some(header)
    }

    /// Whether the first `checkpoint.len` transactions still fold to the
    /// agreed block ID.
    pub fn prefix_intact(&self) -> bool {
        let d = self.ledger.dblock();
        d.header().seq_num == self.checkpoint.seq_num
            && d.len() >= self.checkpoint.len
            && d.id_at(self.checkpoint.len) == self.checkpoint.block_id
    }

    /// Rolls back to the checkpoint. When the local prefix no longer matches
    /// it, the agreed prefix supplied by peers is restored instead.
    pub fn rollback(&mut self, agreed_prefix: &[Transaction]) {
        if self.prefix_intact() {
            self.ledger.truncate_dblock(self.checkpoint.len);
        } else {
            self.ledger.replace_dblock(agreed_prefix.to_vec());
        }
    }

    /// Re-verifies and re-validates every transaction received since the
    /// checkpoint, in `(submitted_at, t_id)` order.
    pub fn replay(&mut self) -> Proposal {
        let pending: Vec<Transaction> = self.inbox.values().cloned().collect();
        let mut last = Verdict::Accepted;
        for tx in &pending {
            last = self.apply(tx);
        }
        for tx in self.forged.clone() {
            self.ledger.tamper_append(tx);
        }
        self.proposal(last)
    }

    /// Replaces the dynamic block with an externally decided state.
    pub fn adopt(&mut self, txs: Vec<Transaction>) {
        self.ledger.replace_dblock(txs);
        self.commit();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, KeyPair};
    use crate::identity::{CertificateAuthority, Partition, Participant};
    use crate::tx::*;

    struct World {
        ca: CertificateAuthority,
        maker: Participant,
        cav: Participant,
        ins: Participant,
    }

    fn world() -> World {
        let mut ca = CertificateAuthority::new(3);
        let maker = ca
            .issue_identity("maker", EntityKind::Manufacturer, &[Partition::Op, Partition::Dp])
            .unwrap();
        let cav = ca.issue_identity("cav1", EntityKind::Vehicle, &[Partition::Op]).unwrap();
        let ins = ca
            .issue_identity("ins", EntityKind::Insurer, &[Partition::Op, Partition::Dp])
            .unwrap();
        World { ca, maker, cav, ins }
    }

    fn meta() -> UpdateMeta {
        UpdateMeta {
            instruction_kind: InstructionKind::SoftwareUpdate,
            update_file_hash: Some(hash(b"fw")),
            subsystem: "braking".into(),
            metadata: String::new(),
            file_pointer: "fw".into(),
        }
    }

    fn pet(kp: &KeyPair) -> Transaction {
        let r = CollisionRecord::new(Location::from_degrees(1.0, 1.0), 10, vec![1], hash(b"v"), vec![]);
        make_pet(kp, r, 11).unwrap()
    }

    #[test]
    fn verification_examples() {
        let mut w = world();
        let mut v = OpValidator::new("maker", w.ca.directory(Partition::Op), 7);

        let stranger = KeyPair::from_seed([42; 32]);
        assert_eq!(v.verify_transaction(&pet(&stranger)), Verdict::Rejected(Rejection::Unauthorized));

        let mut pending = make_net(&w.maker, w.cav.public(), meta(), 5).unwrap();
        assert_eq!(
            v.verify_transaction(&pending.as_incomplete()),
            Verdict::Rejected(Rejection::IncompleteMultisig)
        );
        let net = countersign_net(&w.cav, &mut pending).unwrap();
        assert_eq!(v.process(&net).verdict, Verdict::Accepted);

        let p = pet(&w.cav.keys);
        assert!(v.process(&p).verdict.is_accepted());
        assert_eq!(v.verify_transaction(&p), Verdict::Rejected(Rejection::Duplicate));

        // pseudonymous PET is authorized
        let ps = w.ca.issue_pseudonyms(&w.cav, 2).unwrap();
        let v = OpValidator::new("maker", w.ca.directory(Partition::Op), 7);
        assert!(v.verify_transaction(&pet(ps.active())).is_accepted());
    }

    #[test]
    fn et_checks() {
        let w = world();
        let mut v = OpValidator::new("maker", w.ca.directory(Partition::Op), 7);
        let mut pending = make_net(&w.maker, w.cav.public(), meta(), 5).unwrap();
        let net = countersign_net(&w.cav, &mut pending).unwrap();
        let et = make_et(&w.cav, net.t_id, ExecutionStatus::Success, 6);
        assert_eq!(v.verify_transaction(&et), Verdict::Rejected(Rejection::PayloadIntegrity));
        v.process(&net);
        assert!(v.verify_transaction(&et).is_accepted());
        let wrong = make_et(&w.ins, net.t_id, ExecutionStatus::Success, 6);
        assert_eq!(v.verify_transaction(&wrong), Verdict::Rejected(Rejection::Unauthorized));
    }

    #[test]
    fn ret_never_accepted_in_op() {
        let w = world();
        let v = OpValidator::new("maker", w.ca.directory(Partition::Op), 7);
        let p = pet(&w.cav.keys);
        let ret = make_ret(&w.ins, &p, &|_: &Digest| true, 20).unwrap();
        assert_eq!(v.verify_transaction(&ret), Verdict::Rejected(Rejection::Unauthorized));
    }

    #[test]
    fn rollback_restores_tampered_prefix() {
        let w = world();
        let dir = w.ca.directory(Partition::Op);
        let mut v = OpValidator::new("maker", dir, 7);
        let txs: Vec<_> = (0..3)
            .map(|i| make_ese(&w.cav.keys, SafetyEvent::HardBrake, Location::from_degrees(1.0, 1.0), i))
            .collect();
        for t in &txs {
            v.process(t);
            v.commit();
        }
        let agreed = v.header().block_id;
        v.ledger_mut().tamper_remove(&txs[0].t_id);
        assert!(!v.prefix_intact());
        v.rollback(&txs);
        assert_eq!(v.header().block_id, agreed);
    }
}
