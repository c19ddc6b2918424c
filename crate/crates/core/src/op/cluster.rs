use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::crypto::Digest;
use crate::tx::Transaction;

use crate::identity::Directory;

use super::ledger::{DynamicBlockHeader, OpLedger};
use super::validator::{OpValidator, Proposal, Verdict};

/// How many validators must agree for a round to be consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementRule {
    #[default]
    Unanimity,
    /// Strict majority; dissenters resync from the majority state.
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOutcome {
    Consistent,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsensusRound {
    pub tx_ref: Digest,
    pub proposed_ids: BTreeMap<String, Digest>,
    pub proposed_t_alt_bids: BTreeMap<String, Digest>,
    pub verdicts: BTreeMap<String, Verdict>,
    pub outcome: RoundOutcome,
}

/// Which header field exposed a tampered validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceCause {
    /// Agreed transactions missing or reordered: the folded ID changed.
    DynamicBlockId,
    /// An undelivered transaction back-dated before the agreed
    /// `t_alt_bid` was slipped into the block.
    TAltBidTracking,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TamperFinding {
    pub validator: String,
    pub cause: DivergenceCause,
    pub missing: Vec<Digest>,
    pub undelivered: Vec<Digest>,
}

/// One validator's divergent view, as shipped to the decision partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidatorView {
    pub header: DynamicBlockHeader,
    pub t_ids: Vec<Digest>,
    pub id_history: Vec<Digest>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EscalationSnapshot {
    pub seq_num: u64,
    pub seed: Digest,
    pub validators: Vec<String>,
    pub views: BTreeMap<String, ValidatorView>,
    /// Every transaction delivered to the cluster since the dynamic block
    /// opened, in `(submitted_at, t_id)` order.
    pub stream: Vec<Transaction>,
    pub findings: Vec<TamperFinding>,
    /// Agreed sealed history with an empty dynamic block, the starting point
    /// for a reference replay.
    #[serde(skip)]
    pub base: OpLedger,
    /// Public operational membership used to re-verify the stream.
    #[serde(skip)]
    pub directory: Directory,
}

/// Authoritative dynamic-block state decided by the decision partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Resolution {
    pub seq_num: u64,
    pub header: DynamicBlockHeader,
    #[serde(skip)]
    pub authoritative: Vec<Transaction>,
    pub t_ids: Vec<Digest>,
    /// Validators whose view departs from the reference, with the first
    /// divergent step.
    pub implicated: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "result")]
pub enum Recovery {
    Recovered { findings: Vec<TamperFinding> },
    Escalated { findings: Vec<TamperFinding> },
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub round: ConsensusRound,
    pub accepted: bool,
    pub recovery: Option<Recovery>,
    pub sealed: Option<DynamicBlockHeader>,
    #[serde(skip)]
    pub escalation: Option<EscalationSnapshot>,
}

/// The operational validators of one region, driven round by round.
#[derive(Debug, Clone)]
pub struct OpCluster {
    validators: Vec<OpValidator>,
    rule: AgreementRule,
    agreed: Vec<Transaction>,
    pending: Vec<Transaction>,
    blocked: bool,
    backlog: Vec<Transaction>,
}

fn agree(proposals: &[Proposal]) -> bool {
    proposals.windows(2).all(|w| w[0] == w[1])
}

impl OpCluster {
    pub fn new(validators: Vec<OpValidator>, rule: AgreementRule) -> Self {
        assert!(!validators.is_empty(), "cluster needs validators");
        Self {
            validators,
            rule,
            agreed: Vec::new(),
            pending: Vec::new(),
            blocked: false,
            backlog: Vec::new(),
        }
    }

    pub fn validators(&self) -> &[OpValidator] {
        &self.validators
    }

    pub fn validator(&self, handle: &str) -> Option<&OpValidator> {
        self.validators.iter().find(|v| v.handle == handle)
    }

    pub fn validator_mut(&mut self, handle: &str) -> Option<&mut OpValidator> {
        self.validators.iter_mut().find(|v| v.handle == handle)
    }

    /// Whether the cluster is waiting on an escalation resolution.
    pub fn is_blocked(&self) -> bool {
        self.blocked
    }

    /// The ledger of the first validator; all agree outside divergence.
    pub fn reference_ledger(&self) -> &super::OpLedger {
        self.validators[0].ledger()
    }

    /// Runs one round for `tx`, or queues it while an escalation is open.
    pub fn submit(&mut self, tx: &Transaction) -> Option<RoundReport> {
        if self.blocked {
            self.backlog.push(tx.clone());
            return None;
        }
        Some(self.consensus_round(tx))
    }

    fn consensus_round(&mut self, tx: &Transaction) -> RoundReport {
        self.pending.push(tx.clone());
        let proposals: Vec<Proposal> = self.validators.iter_mut().map(|v| v.process(tx)).collect();
        let round = self.record(tx, &proposals);
        if round.outcome == RoundOutcome::Consistent {
            let accepted = proposals[0].verdict.is_accepted();
            let sealed = self.commit_round();
            return RoundReport {
                round,
                accepted,
                recovery: None,
                sealed,
                escalation: None,
            };
        }
        let (accepted, recovery, escalation) = self.rollback_and_replay();
        let sealed = if escalation.is_none() { self.commit_round() } else { None };
        RoundReport {
            round,
            accepted,
            recovery: Some(recovery),
            sealed,
            escalation,
        }
    }

    fn record(&self, tx: &Transaction, proposals: &[Proposal]) -> ConsensusRound {
        let mut round = ConsensusRound {
            tx_ref: tx.t_id,
            proposed_ids: BTreeMap::new(),
            proposed_t_alt_bids: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            outcome: if agree(proposals) {
                RoundOutcome::Consistent
            } else {
                RoundOutcome::Divergent
            },
        };
        for (v, p) in self.validators.iter().zip(proposals) {
            round.proposed_ids.insert(v.handle.clone(), p.block_id);
            round.proposed_t_alt_bids.insert(v.handle.clone(), p.t_alt_bid);
            round.verdicts.insert(v.handle.clone(), p.verdict);
        }
        round
    }

    /// Commits the agreed state and seals when the dynamic block is full.
    fn commit_round(&mut self) -> Option<DynamicBlockHeader> {
        for v in &mut self.validators {
            v.commit();
        }
        self.agreed = self.validators[0].ledger().dblock().txs().to_vec();
        self.pending.clear();
        if !self.validators[0].ledger().is_full() {
            return None;
        }
        let headers: Vec<_> = self.validators.iter_mut().map(|v| v.seal()).collect();
        debug_assert!(headers.windows(2).all(|w| w[0] == w[1]));
        self.agreed.clear();
        headers[0]
    }

    fn findings(&self) -> Vec<TamperFinding> {
        let agreed_ids: Vec<Digest> = self.agreed.iter().map(|t| t.t_id).collect();
        let delivered: BTreeSet<Digest> = self
            .agreed
            .iter()
            .chain(&self.pending)
            .map(|t| t.t_id)
            .collect();
        let last_agreed_key = self.agreed.last().map(Transaction::order_key);
        let mut out = Vec::new();
        for v in &self.validators {
            let txs = v.ledger().dblock().txs();
            let ids: BTreeSet<Digest> = txs.iter().map(|t| t.t_id).collect();
            let missing: Vec<Digest> = agreed_ids.iter().filter(|t| !ids.contains(t)).copied().collect();
            let extra: Vec<&Transaction> = txs.iter().filter(|t| !delivered.contains(&t.t_id)).collect();
            if v.prefix_intact() && extra.is_empty() {
                continue;
            }
            let back_dated = extra
                .iter()
                .any(|t| last_agreed_key.is_some_and(|k| t.order_key() <= k));
            let cause = if missing.is_empty() && back_dated {
                DivergenceCause::TAltBidTracking
            } else {
                DivergenceCause::DynamicBlockId
            };
            out.push(TamperFinding {
                validator: v.handle.clone(),
                cause,
                missing,
                undelivered: extra.iter().map(|t| t.t_id).collect(),
            });
        }
        out
    }

    /// Reverts every validator to the last agreed state and replays the
    /// pending transactions. Escalates if divergence persists.
    fn rollback_and_replay(&mut self) -> (bool, Recovery, Option<EscalationSnapshot>) {
        let findings = self.findings();
        let agreed = self.agreed.clone();
        let proposals: Vec<Proposal> = self
            .validators
            .iter_mut()
            .map(|v| {
                v.rollback(&agreed);
                v.replay()
            })
            .collect();
        if agree(&proposals) {
            return (
                proposals[0].verdict.is_accepted(),
                Recovery::Recovered { findings },
                None,
            );
        }
        if self.rule == AgreementRule::Majority {
            if let Some(idx) = self.majority(&proposals) {
                let txs = self.validators[idx].ledger().dblock().txs().to_vec();
                for (i, v) in self.validators.iter_mut().enumerate() {
                    if proposals[i] != proposals[idx] {
                        v.ledger_mut().replace_dblock(txs.clone());
                    }
                }
                return (
                    proposals[idx].verdict.is_accepted(),
                    Recovery::Recovered { findings },
                    None,
                );
            }
        }
        let snapshot = self.escalate_to_dp(findings.clone());
        self.blocked = true;
        (false, Recovery::Escalated { findings }, Some(snapshot))
    }

    fn majority(&self, proposals: &[Proposal]) -> Option<usize> {
        (0..proposals.len()).find(|&i| {
            proposals.iter().filter(|p| **p == proposals[i]).count() * 2 > proposals.len()
        })
    }

    /// Packages every validator's view for the decision partition.
    pub fn escalate_to_dp(&self, findings: Vec<TamperFinding>) -> EscalationSnapshot {
        let d0 = self.validators[0].ledger().dblock().header();
        let mut stream: Vec<Transaction> = self
            .agreed
            .iter()
            .chain(&self.pending)
            .cloned()
            .collect();
        stream.sort_by_key(Transaction::order_key);
        stream.dedup_by_key(|t| (t.t_id, t.primary_signer().copied()));
        EscalationSnapshot {
            seq_num: d0.seq_num,
            seed: d0.prev_bid,
            validators: self.validators.iter().map(|v| v.handle.clone()).collect(),
            views: self
                .validators
                .iter()
                .map(|v| {
                    let d = v.ledger().dblock();
                    (
                        v.handle.clone(),
                        ValidatorView {
                            header: *d.header(),
                            t_ids: d.txs().iter().map(|t| t.t_id).collect(),
                            id_history: d.id_history().to_vec(),
                        },
                    )
                })
                .collect(),
            stream,
            findings,
            base: self.agreed_base(),
            directory: self.validators[0].directory().clone(),
        }
    }

    /// Sealed history from the first validator whose chain still verifies.
    fn agreed_base(&self) -> OpLedger {
        let v = self
            .validators
            .iter()
            .find(|v| v.ledger().verify_chain().is_ok())
            .unwrap_or(&self.validators[0]);
        let mut base = v.ledger().clone();
        base.replace_dblock(Vec::new());
        base
    }

    /// Installs the decided state on every validator, stops implicated
    /// validators from re-inserting forged transactions and drains the
    /// backlog.
    pub fn apply_resolution(&mut self, resolution: &Resolution) -> Vec<RoundReport> {
        let implicated: BTreeSet<&str> = resolution.implicated.iter().map(|(h, _)| h.as_str()).collect();
        for v in &mut self.validators {
            if implicated.contains(v.handle.as_str()) {
                v.clear_forged();
            }
            v.adopt(resolution.authoritative.clone());
        }
        self.blocked = false;
        let mut reports = Vec::new();
        if let Some(sealed) = self.commit_round() {
            reports.push(RoundReport {
                round: ConsensusRound {
                    tx_ref: Digest::ZERO,
                    proposed_ids: BTreeMap::new(),
                    proposed_t_alt_bids: BTreeMap::new(),
                    verdicts: BTreeMap::new(),
                    outcome: RoundOutcome::Consistent,
                },
                accepted: false,
                recovery: None,
                sealed: Some(sealed),
                escalation: None,
            });
        }
        let backlog = std::mem::take(&mut self.backlog);
        for tx in backlog {
            if let Some(r) = self.submit(&tx) {
                reports.push(r);
            }
        }
        reports
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use crate::identity::{CertificateAuthority, EntityKind, Partition, Participant};
    use crate::op::fold;
    use crate::tx::*;

    struct World {
        cluster: OpCluster,
        cav: Participant,
        maker: Participant,
    }

    fn world(rule: AgreementRule) -> World {
        let mut ca = CertificateAuthority::new(11);
        let maker = ca
            .issue_identity("maker", EntityKind::Manufacturer, &[Partition::Op, Partition::Dp])
            .unwrap();
        ca.issue_identity("tech", EntityKind::Technician, &[Partition::Op]).unwrap();
        ca.issue_identity("ins", EntityKind::Insurer, &[Partition::Op, Partition::Dp]).unwrap();
        let cav = ca.issue_identity("cav1", EntityKind::Vehicle, &[Partition::Op]).unwrap();
        let dir = ca.directory(Partition::Op);
        let validators = ["maker", "tech", "ins"]
            .iter()
            .map(|h| OpValidator::new(*h, dir.clone(), 7))
            .collect();
        World {
            cluster: OpCluster::new(validators, rule),
            cav,
            maker,
        }
    }

    fn ese(p: &Participant, ts: u64) -> Transaction {
        make_ese(&p.keys, SafetyEvent::HardBrake, Location::from_degrees(1.0, 2.0), ts)
    }

    fn pet(p: &Participant, ts: u64) -> Transaction {
        let r = CollisionRecord::new(Location::from_degrees(1.0, 2.0), ts, vec![0], hash(b"v"), vec![]);
        make_pet(&p.keys, r, ts).unwrap()
    }

    #[test]
    fn honest_round_is_consistent() {
        let mut w = world(AgreementRule::Unanimity);
        let r = w.cluster.submit(&pet(&w.cav, 10)).unwrap();
        assert_eq!(r.round.outcome, RoundOutcome::Consistent);
        assert!(r.accepted);
        let ids: BTreeSet<_> = r.round.proposed_ids.values().collect();
        assert_eq!(ids.len(), 1);
        // a consistent rejection is also consistent
        let r = w.cluster.submit(&pet(&w.cav, 10)).unwrap();
        assert_eq!(r.round.outcome, RoundOutcome::Consistent);
        assert!(!r.accepted);
    }

    #[test]
    fn seals_after_seven() {
        let mut w = world(AgreementRule::Unanimity);
        let mut sealed = 0;
        for i in 0..16 {
            if w.cluster.submit(&ese(&w.cav, i)).unwrap().sealed.is_some() {
                sealed += 1;
            }
        }
        assert_eq!(sealed, 2);
        let l = w.cluster.reference_ledger();
        assert_eq!(l.sealed().len(), 2);
        assert_eq!(l.dblock().len(), 2);
        l.verify_chain().unwrap();
    }

    #[test]
    fn deletion_detected_and_recovered() {
        let mut w = world(AgreementRule::Unanimity);
        let target = pet(&w.cav, 5);
        w.cluster.submit(&ese(&w.cav, 1)).unwrap();
        w.cluster.submit(&target).unwrap();
        w.cluster.validator_mut("maker").unwrap().ledger_mut().tamper_remove(&target.t_id);
        let r = w.cluster.submit(&ese(&w.cav, 9)).unwrap();
        assert_eq!(r.round.outcome, RoundOutcome::Divergent);
        let Some(Recovery::Recovered { findings }) = r.recovery else {
            panic!("expected recovery")
        };
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].validator, "maker");
        assert_eq!(findings[0].cause, DivergenceCause::DynamicBlockId);
        assert_eq!(findings[0].missing, vec![target.t_id]);
        let triples: BTreeSet<_> = w
            .cluster
            .validators()
            .iter()
            .map(|v| (v.header().block_id, v.header().t_alt_bid, v.ledger().dblock().len()))
            .collect();
        assert_eq!(triples.len(), 1);
        assert!(w.cluster.reference_ledger().contains(&target.t_id));
    }

    #[test]
    fn back_dated_insert_flagged_by_t_alt_bid() {
        let mut w = world(AgreementRule::Unanimity);
        w.cluster.submit(&pet(&w.cav, 50)).unwrap();
        let mut pending = make_net(
            &w.maker,
            w.cav.public(),
            UpdateMeta {
                instruction_kind: InstructionKind::SoftwareUpdate,
                update_file_hash: Some(hash(b"x")),
                subsystem: "braking".into(),
                metadata: String::new(),
                file_pointer: String::new(),
            },
            3,
        )
        .unwrap();
        let fake = countersign_net(&w.cav, &mut pending).unwrap();
        w.cluster.validator_mut("maker").unwrap().ledger_mut().tamper_append(fake.clone());
        let r = w.cluster.submit(&ese(&w.cav, 60)).unwrap();
        let Some(Recovery::Recovered { findings }) = r.recovery else {
            panic!("expected recovery")
        };
        assert_eq!(findings[0].cause, DivergenceCause::TAltBidTracking);
        assert!(!w.cluster.reference_ledger().contains(&fake.t_id));
    }

    #[test]
    fn insistent_colluders_escalate() {
        let mut w = world(AgreementRule::Unanimity);
        w.cluster.submit(&pet(&w.cav, 10)).unwrap();
        let forged = ese(&w.cav, 12);
        for h in ["maker", "tech"] {
            let v = w.cluster.validator_mut(h).unwrap();
            v.ledger_mut().tamper_append(forged.clone());
            v.insist_on(forged.clone());
        }
        let honest_tx = ese(&w.maker, 20);
        let r = w.cluster.submit(&honest_tx).unwrap();
        assert!(matches!(r.recovery, Some(Recovery::Escalated { .. })));
        let snap = r.escalation.unwrap();
        assert_eq!(snap.views.len(), 3);
        assert!(w.cluster.is_blocked());
        assert!(w.cluster.submit(&ese(&w.cav, 30)).is_none());

        // reference replay over the delivered stream
        let mut reference = OpValidator::from_ledger("ref", snap.directory.clone(), snap.base.clone());
        for tx in &snap.stream {
            reference.process(tx);
        }
        let authoritative = reference.ledger().dblock().txs().to_vec();
        let t_ids: Vec<Digest> = authoritative.iter().map(|t| t.t_id).collect();
        assert_eq!(snap.views["ins"].header.block_id, fold(snap.seed, &t_ids));
        let res = Resolution {
            seq_num: snap.seq_num,
            header: *reference.header(),
            authoritative,
            t_ids,
            implicated: vec![("maker".into(), 1), ("tech".into(), 1)],
            warnings: vec![],
        };
        let reports = w.cluster.apply_resolution(&res);
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].round.outcome, RoundOutcome::Consistent);
        assert!(!w.cluster.reference_ledger().contains(&forged.t_id));
        // the manufacturer ESE is rejected, the queued vehicle ESE lands
        assert_eq!(w.cluster.reference_ledger().dblock().len(), 2);
    }

    #[test]
    fn majority_rule_resyncs_minority() {
        let mut w = world(AgreementRule::Majority);
        w.cluster.submit(&pet(&w.cav, 10)).unwrap();
        let forged = ese(&w.cav, 12);
        let v = w.cluster.validator_mut("tech").unwrap();
        v.ledger_mut().tamper_append(forged.clone());
        v.insist_on(forged);
        let r = w.cluster.submit(&ese(&w.maker, 20)).unwrap();
        assert!(matches!(r.recovery, Some(Recovery::Recovered { .. })));
        assert!(!w.cluster.is_blocked());
    }
}
