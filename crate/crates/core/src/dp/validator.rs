use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{Digest, KeyPair, PublicKey};
use crate::identity::{Directory, Partition};
use crate::op::{EscalationSnapshot, OpValidator, Resolution};
use crate::tx::{StructuralError, Transaction, TransactionKind};

use super::evidence::{
    first_level_decision, group_cases, integrity_check, ConsistencyReport, ConsistencyThresholds,
    EvidenceBundle, FirstLevelDecision,
};
use super::ledger::{BlockContent, DpBlockHeader, DpLedger, DpRejection};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DpError {
    #[error("{0} did not propose any request in this case")]
    NotRequester(String),
}

/// A decision-partition validator (legal or transport authority).
#[derive(Debug, Clone)]
pub struct DpValidator {
    pub handle: String,
    directory: Directory,
    ledger: DpLedger,
    evidence_keys: KeyPair,
    thresholds: ConsistencyThresholds,
}

impl DpValidator {
    pub fn new(
        handle: impl Into<String>,
        directory: Directory,
        evidence_keys: KeyPair,
        b_max: usize,
        content: BlockContent,
        thresholds: ConsistencyThresholds,
    ) -> Self {
        let ledger = DpLedger::new(*directory.credential(), b_max, content);
        Self {
            handle: handle.into(),
            directory,
            ledger,
            evidence_keys,
            thresholds,
        }
    }

    pub fn ledger(&self) -> &DpLedger {
        &self.ledger
    }

    /// Direct ledger access. Tests and adversary use only.
    pub fn ledger_mut(&mut self) -> &mut DpLedger {
        &mut self.ledger
    }

    pub fn thresholds(&self) -> &ConsistencyThresholds {
        &self.thresholds
    }

    /// Authenticates a request: proposer membership, signatures, duplicates.
    pub fn dp_verify(&self, tx: &Transaction) -> Result<(), DpRejection> {
        let Some(ret) = tx.as_ret() else {
            return Err(DpRejection::Unauthorized);
        };
        let proposer_ok = self
            .directory
            .kind_of(&ret.proposer)
            .and_then(|k| k.role_in(Partition::Dp))
            .is_some_and(|r| r.proposes());
        if !proposer_ok || tx.primary_signer() != Some(&ret.proposer) {
            return Err(DpRejection::Unauthorized);
        }
        match tx.verify_structure() {
            Ok(()) => {}
            Err(StructuralError::BadSignature(_) | StructuralError::SignerMismatch) => {
                return Err(DpRejection::Unauthorized)
            }
            Err(_) => return Err(DpRejection::Incomplete),
        }
        if self.ledger.is_duplicate(tx) {
            return Err(DpRejection::Duplicate);
        }
        Ok(())
    }

    pub fn receive(&mut self, tx: &Transaction) -> Result<(), DpRejection> {
        self.dp_verify(tx)?;
        self.ledger.push(tx.clone());
        Ok(())
    }

    /// Groups, checks and decides every case among `rets`.
    pub fn analyse(&self, rets: &[Transaction]) -> Vec<CaseAnalysis> {
        group_cases(rets, &self.thresholds)
            .into_iter()
            .map(|mut bundle| {
                let report = integrity_check(&mut bundle, &self.evidence_keys, &self.thresholds);
                let decision = first_level_decision(&bundle, &report);
                CaseAnalysis {
                    bundle,
                    report,
                    decision,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseAnalysis {
    pub bundle: EvidenceBundle,
    pub report: ConsistencyReport,
    pub decision: FirstLevelDecision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WitnessSummary {
    pub observer: String,
    pub subject: String,
    pub position: u32,
    pub anomalous_stop: bool,
}

/// Off-chain response sent only to the proposer that asked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplementaryEvidence {
    pub case_id: String,
    pub recipient: PublicKey,
    pub decision: FirstLevelDecision,
    pub evidence_refs: Vec<Digest>,
    pub witness_summaries: Vec<WitnessSummary>,
}

impl ComplementaryEvidence {
    /// Serialized payload, used to check that it never lands on-chain.
    pub fn payload_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("response serializes")
    }
}

/// Builds the unicast response for `requester`, refusing anyone who did not
/// submit a request in the case.
pub fn unicast_complimentary_evidence(
    decision: &FirstLevelDecision,
    bundle: &EvidenceBundle,
    requester: &PublicKey,
) -> Result<ComplementaryEvidence, DpError> {
    if !bundle.proposers().contains(requester) {
        return Err(DpError::NotRequester(requester.short()));
    }
    let mut summaries = Vec::new();
    for t_id in &decision.basis {
        for w in bundle.witness_records.get(t_id).into_iter().flatten() {
            for o in &w.observations {
                let s = WitnessSummary {
                    observer: w.observer.short(),
                    subject: o.subject.short(),
                    position: o.position,
                    anomalous_stop: o.anomalous_stop,
                };
                if !summaries.contains(&s) {
                    summaries.push(s);
                }
            }
        }
    }
    Ok(ComplementaryEvidence {
        case_id: decision.case_id.clone(),
        recipient: *requester,
        decision: decision.clone(),
        evidence_refs: decision.basis.clone(),
        witness_summaries: summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DpSubmitReport {
    pub t_id: Digest,
    pub rejections: BTreeMap<String, DpRejection>,
    pub sealed: Option<DpBlockHeader>,
    /// Validators computed different block IDs for the same pool.
    pub divergent: bool,
}

/// The decision-partition validators of one region.
#[derive(Debug, Clone)]
pub struct DpCluster {
    validators: Vec<DpValidator>,
}

impl DpCluster {
    pub fn new(validators: Vec<DpValidator>) -> Self {
        assert!(!validators.is_empty(), "cluster needs validators");
        Self { validators }
    }

    pub fn validators(&self) -> &[DpValidator] {
        &self.validators
    }

    pub fn validator_mut(&mut self, handle: &str) -> Option<&mut DpValidator> {
        self.validators.iter_mut().find(|v| v.handle == handle)
    }

    pub fn reference_ledger(&self) -> &DpLedger {
        self.validators[0].ledger()
    }

    /// Delivers a request to every validator and assembles a block once the
    /// pools reach `b_max`.
    pub fn submit(&mut self, tx: &Transaction) -> DpSubmitReport {
        let mut rejections = BTreeMap::new();
        for v in &mut self.validators {
            if let Err(r) = v.receive(tx) {
                rejections.insert(v.handle.clone(), r);
            }
        }
        let (sealed, divergent) = self.assemble_and_validate_block();
        DpSubmitReport {
            t_id: tx.t_id,
            rejections,
            sealed,
            divergent,
        }
    }

    /// Every validator hashes its sorted pool; the block is appended only
    /// when all IDs agree.
    pub fn assemble_and_validate_block(&mut self) -> (Option<DpBlockHeader>, bool) {
        if !self.validators.iter().all(|v| v.ledger().pool_full()) {
            return (None, false);
        }
        let candidates: Vec<_> = self.validators.iter().map(|v| v.ledger().candidate()).collect();
        if candidates.windows(2).any(|w| w[0] != w[1]) {
            return (None, true);
        }
        let mut sealed = None;
        for v in &mut self.validators {
            sealed = v.ledger.assemble();
        }
        (sealed, false)
    }

    /// Every validator analyses the case independently; the analyses must
    /// match. Returns the first validator's analysis and whether all agreed.
    pub fn decide(&self, rets: &[Transaction]) -> (Vec<CaseAnalysis>, bool) {
        let all: Vec<Vec<CaseAnalysis>> = self.validators.iter().map(|v| v.analyse(rets)).collect();
        let agreed = all.windows(2).all(|w| {
            w[0].len() == w[1].len() && w[0].iter().zip(&w[1]).all(|(a, b)| a.decision == b.decision)
        });
        (all.into_iter().next().unwrap_or_default(), agreed)
    }

    /// Every transaction any validator stores on-chain or in its pool.
    pub fn stored_kinds(&self) -> Vec<TransactionKind> {
        self.validators
            .iter()
            .flat_map(|v| v.ledger().transactions().map(Transaction::kind))
            .collect()
    }
}

/// Replays an escalated dynamic block with a reference validator and
/// implicates every view that departs from it.
pub fn resolve_escalation(snapshot: &EscalationSnapshot) -> Resolution {
    let mut reference =
        OpValidator::from_ledger("dp-reference", snapshot.directory.clone(), snapshot.base.clone());
    for tx in &snapshot.stream {
        reference.process(tx);
    }
    let d = reference.ledger().dblock();
    let history = d.id_history();
    let mut implicated = Vec::new();
    for (handle, view) in &snapshot.views {
        let first = (0..history.len().max(view.id_history.len()))
            .find(|&i| history.get(i) != view.id_history.get(i));
        if let Some(i) = first {
            implicated.push((handle.clone(), i));
        }
    }
    let warnings = snapshot
        .validators
        .iter()
        .filter(|h| !snapshot.views.contains_key(*h))
        .map(|h| format!("no view from {h}; resolution is partial"))
        .collect();
    Resolution {
        seq_num: d.header().seq_num,
        header: *d.header(),
        authoritative: d.txs().to_vec(),
        t_ids: d.txs().iter().map(|t| t.t_id).collect(),
        implicated,
        warnings,
    }
}
