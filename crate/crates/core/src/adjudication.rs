//! Second-level liability: product, service or negligence, decided from the
//! operational ledger once the decision partition has named a vehicle.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, PublicKey};
use crate::dp::FirstLevelDecision;
use crate::identity::{CertificateAuthority, Directory, EntityKind, Participant};
use crate::op::OpLedger;
use crate::time::DAY;
use crate::tx::{ExecutionStatus, InstructionKind, NetBody, SafetyEvent, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiabilityKind {
    Product,
    Service,
    Negligence,
}

impl LiabilityKind {
    pub fn name(self) -> &'static str {
        match self {
            LiabilityKind::Product => "product",
            LiabilityKind::Service => "service",
            LiabilityKind::Negligence => "negligence",
        }
    }
}

/// Which branch of the rule table produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LiabilityRule {
    /// Overdue update never executed and the device audit does not show it.
    OverdueUpdateNotExecuted,
    /// Update executed, fault persists in the same subsystem.
    ExecutedUpdateDefect,
    /// Recent technician part change in the failing subsystem.
    LastServiceInteraction,
    /// Nothing more specific applies.
    DefaultProduct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LiabilityDecision {
    pub case_id: String,
    pub liable_entity: String,
    pub kind: LiabilityKind,
    pub vehicle: String,
    pub evidence: Vec<Digest>,
    pub rationale: LiabilityRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Pass,
    Fail,
    Unavailable,
}

/// Firmware state read from a vehicle ECU (simulated).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeviceState {
    pub device_id: String,
    pub file_hash: Digest,
    pub install_ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FirmwareAudit {
    pub device_id: String,
    pub retrieved_file_hash: Digest,
    pub retrieved_install_ts: u64,
    pub referenced_net: Digest,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdjudicationError {
    #[error("first-level decision for {0} names no liable vehicle")]
    NoFirstLevel(String),
    #[error("liable vehicle of {0} cannot be resolved to an identity")]
    UnresolvedVehicle(String),
    #[error("transaction {0} is not a NET carrying an update file hash")]
    NotAnUpdate(Digest),
    #[error("no manufacturer known for {0}")]
    NoManufacturer(String),
}

/// Compares the firmware on the device against the NET's update hash.
/// `None` for the device means its state could not be read.
pub fn firmware_audit(
    device: Option<&DeviceState>,
    net: &Transaction,
) -> Result<(Option<FirmwareAudit>, AuditOutcome), AdjudicationError> {
    let expected = net
        .as_net()
        .and_then(|n| n.meta.update_file_hash)
        .ok_or(AdjudicationError::NotAnUpdate(net.t_id))?;
    let Some(device) = device else {
        return Ok((None, AuditOutcome::Unavailable));
    };
    let audit = FirmwareAudit {
        device_id: device.device_id.clone(),
        retrieved_file_hash: device.file_hash,
        retrieved_install_ts: device.install_ts,
        referenced_net: net.t_id,
    };
    let outcome = if device.file_hash == expected {
        AuditOutcome::Pass
    } else {
        AuditOutcome::Fail
    };
    Ok((Some(audit), outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationPolicy {
    /// A NET becomes overdue this long after issue.
    pub grace: u64,
    /// How far back a technician's interaction can still be blamed.
    pub service_window: u64,
}

impl Default for AdjudicationPolicy {
    fn default() -> Self {
        Self {
            grace: 7 * DAY,
            service_window: 30 * DAY,
        }
    }
}

/// Off-chain inputs to the second-level decision.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComplementaryInputs {
    /// Device states keyed by subsystem; missing means unavailable.
    pub devices: BTreeMap<String, DeviceState>,
    /// Manufacturer handle for the default branch when no NET names one.
    pub manufacturer: Option<String>,
}

fn issuer_handle(directory: &Directory, net: &NetBody) -> String {
    directory
        .handle_of(&net.issuer)
        .map_or_else(|| net.issuer.short(), str::to_string)
}

/// Classifies liability for the vehicle named by `level1`.
pub fn classify_liability(
    ledger: &OpLedger,
    directory: &Directory,
    level1: &FirstLevelDecision,
    inputs: &ComplementaryInputs,
    policy: &AdjudicationPolicy,
) -> Result<LiabilityDecision, AdjudicationError> {
    let case = &level1.case_id;
    let liable_key = level1
        .liable_key
        .ok_or_else(|| AdjudicationError::NoFirstLevel(case.clone()))?;
    let (vehicle, cav_key) = match &level1.liable_cav {
        Some(h) => (
            h.clone(),
            directory
                .key_of(h)
                .ok_or_else(|| AdjudicationError::UnresolvedVehicle(case.clone()))?,
        ),
        None => (
            directory
                .handle_of(&liable_key)
                .ok_or_else(|| AdjudicationError::UnresolvedVehicle(case.clone()))?
                .to_string(),
            liable_key,
        ),
    };
    let accident = level1.accident_ts;
    let fault = level1.fault_subsystem.as_deref();
    let relevant = |n: &NetBody| fault.is_none_or(|f| f == n.meta.subsystem);

    let nets: Vec<&Transaction> = ledger
        .transactions()
        .filter(|t| t.as_net().is_some_and(|n| n.target == cav_key && n.issued_at <= accident))
        .collect();
    let success_et = |net: &Digest| {
        ledger.transactions().find(|t| {
            t.primary_signer() == Some(&cav_key)
                && t.as_et().is_some_and(|e| {
                    e.net_ref == *net && e.status == ExecutionStatus::Success && e.ts <= accident
                })
        })
    };
    let decision = |liable: String, kind, evidence: Vec<Digest>, rationale| LiabilityDecision {
        case_id: case.clone(),
        liable_entity: liable,
        kind,
        vehicle: vehicle.clone(),
        evidence,
        rationale,
    };

    let updates: Vec<&Transaction> = nets
        .iter()
        .copied()
        .filter(|t| {
            let n = t.as_net().expect("filtered");
            n.meta.instruction_kind == InstructionKind::SoftwareUpdate && relevant(n)
        })
        .collect();

    // Negligence: an overdue update with no success ET and no passing audit.
    for net in &updates {
        let n = net.as_net().expect("filtered");
        if n.issued_at + policy.grace > accident || success_et(&net.t_id).is_some() {
            continue;
        }
        let (_, outcome) = firmware_audit(inputs.devices.get(&n.meta.subsystem), net)?;
        let executed = outcome == AuditOutcome::Pass
            && inputs.devices[&n.meta.subsystem].install_ts <= accident;
        if !executed {
            return Ok(decision(
                vehicle.clone(),
                LiabilityKind::Negligence,
                vec![net.t_id],
                LiabilityRule::OverdueUpdateNotExecuted,
            ));
        }
    }

    // Product: the most recent executed update in the failing subsystem.
    for net in updates.iter().rev() {
        let n = net.as_net().expect("filtered");
        let mut evidence = vec![net.t_id];
        let executed = match success_et(&net.t_id) {
            Some(et) => {
                evidence.push(et.t_id);
                true
            }
            None => {
                let (_, outcome) = firmware_audit(inputs.devices.get(&n.meta.subsystem), net)?;
                outcome == AuditOutcome::Pass && inputs.devices[&n.meta.subsystem].install_ts <= accident
            }
        };
        if executed && fault.is_some() {
            return Ok(decision(
                issuer_handle(directory, n),
                LiabilityKind::Product,
                evidence,
                LiabilityRule::ExecutedUpdateDefect,
            ));
        }
    }

    // Service: the last technician part change within the window.
    let last_service = nets.iter().rev().find(|t| {
        let n = t.as_net().expect("filtered");
        n.meta.instruction_kind == InstructionKind::PartChange
            && directory.kind_of(&n.issuer) == Some(EntityKind::Technician)
            && accident - n.issued_at <= policy.service_window
    });
    if let (Some(net), Some(f)) = (last_service, fault) {
        let n = net.as_net().expect("filtered");
        if n.meta.subsystem == f {
            return Ok(decision(
                issuer_handle(directory, n),
                LiabilityKind::Service,
                vec![net.t_id],
                LiabilityRule::LastServiceInteraction,
            ));
        }
    }

    let latest_update = nets.iter().rev().find_map(|t| {
        t.as_net()
            .filter(|n| n.meta.instruction_kind == InstructionKind::SoftwareUpdate)
            .map(|n| (t.t_id, issuer_handle(directory, n)))
    });
    let (liable, evidence) = match (latest_update, &inputs.manufacturer) {
        (Some((t_id, issuer)), _) => (issuer, vec![t_id]),
        (None, Some(m)) => (m.clone(), Vec::new()),
        (None, None) => return Err(AdjudicationError::NoManufacturer(vehicle)),
    };
    Ok(decision(liable, LiabilityKind::Product, evidence, LiabilityRule::DefaultProduct))
}

/// Countersigned NETs from `issuer` to `cav` issued inside `window`.
pub fn proof_of_interaction<'a>(
    ledger: &'a OpLedger,
    issuer: &PublicKey,
    cav: &PublicKey,
    window: RangeInclusive<u64>,
) -> Vec<&'a Transaction> {
    ledger
        .transactions()
        .filter(|t| {
            t.as_net().is_some_and(|n| {
                n.issuer == *issuer && n.target == *cav && window.contains(&n.issued_at)
            }) && t.signer_keys == [*issuer, *cav]
                && t.verify_structure().is_ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EseEntry {
    pub t_id: Digest,
    pub signer: PublicKey,
    pub event: SafetyEvent,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BehaviourHistory {
    /// Pseudonyms were resolved to the vehicle's identity.
    pub resolved: bool,
    pub events: Vec<EseEntry>,
}

/// ESE history for `cav`. Law enforcement sees the vehicle's events across
/// all its pseudonyms; anyone else gets every ESE in the window, keyed by
/// pseudonym only.
pub fn behavioral_history(
    ledger: &OpLedger,
    ca: &mut CertificateAuthority,
    requester: &Participant,
    cav: &str,
    window: RangeInclusive<u64>,
) -> BehaviourHistory {
    let mut events: Vec<EseEntry> = ledger
        .transactions()
        .filter_map(|t| {
            let e = t.as_ese()?;
            let signer = *t.primary_signer()?;
            window.contains(&e.ts).then_some(EseEntry {
                t_id: t.t_id,
                signer,
                event: e.event,
                ts: e.ts,
            })
        })
        .collect();
    events.sort_by_key(|e| (e.ts, e.t_id));
    if !ca.is_law_enforcement(&requester.handle) {
        return BehaviourHistory {
            resolved: false,
            events,
        };
    }
    let known = ca.identity_key(cav);
    let mut owners: BTreeMap<PublicKey, bool> = BTreeMap::new();
    for e in &events {
        if let std::collections::btree_map::Entry::Vacant(slot) = owners.entry(e.signer) {
            slot.insert(
                Some(e.signer) == known || ca.resolve_pseudonym(requester, &e.signer).is_ok_and(|h| h == cav),
            );
        }
    }
    events.retain(|e| owners[&e.signer]);
    BehaviourHistory { resolved: true, events }
}

/// NETs targeting the owner's vehicle that the owner has no record of
/// acknowledging.
pub fn owner_read_audit(ledger: &OpLedger, cav: &PublicKey, acknowledged: &BTreeSet<Digest>) -> Vec<Digest> {
    ledger
        .transactions()
        .filter(|t| t.as_net().is_some_and(|n| n.target == *cav) && !acknowledged.contains(&t.t_id))
        .map(|t| t.t_id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::DecisionRule;
    use crate::identity::Partition;
    use crate::tx::{countersign_net, make_ese, make_et, make_net, Location, UpdateMeta};
    use crate::crypto::hash;

    struct World {
        ca: CertificateAuthority,
        maker: Participant,
        tech: Participant,
        cav: Participant,
        ledger: OpLedger,
    }

    fn world() -> World {
        let mut ca = CertificateAuthority::new(5);
        let op = [Partition::Op];
        let maker = ca.issue_identity("maker", EntityKind::Manufacturer, &op).unwrap();
        let tech = ca.issue_identity("tech", EntityKind::Technician, &op).unwrap();
        let cav = ca.issue_identity("cav1", EntityKind::Vehicle, &op).unwrap();
        let ledger = OpLedger::new(ca.genesis_credential(Partition::Op), 7);
        World { ca, maker, tech, cav, ledger }
    }

    fn push(l: &mut OpLedger, tx: Transaction) {
        if l.is_full() {
            l.seal().unwrap();
        }
        l.validate(tx).unwrap();
    }

    fn net(w: &mut World, issuer: &Participant, kind: InstructionKind, at: u64) -> Transaction {
        let meta = UpdateMeta {
            instruction_kind: kind,
            update_file_hash: (kind == InstructionKind::SoftwareUpdate).then(|| hash(b"fw-2")),
            subsystem: "brakes".into(),
            metadata: String::new(),
            file_pointer: String::new(),
        };
        let mut p = make_net(issuer, w.cav.public(), meta, at).unwrap();
        let tx = countersign_net(&w.cav, &mut p).unwrap();
        push(&mut w.ledger, tx.clone());
        tx
    }

    fn level1(w: &World, accident: u64) -> FirstLevelDecision {
        FirstLevelDecision {
            case_id: "case-1".into(),
            liable_key: Some(w.cav.public()),
            liable_cav: None,
            basis: Vec::new(),
            contested: false,
            rule: DecisionRule::LeaderAnomalousStop,
            fault_subsystem: Some("brakes".into()),
            accident_ts: accident,
        }
    }

    fn device(ok: bool, install: u64) -> DeviceState {
        DeviceState {
            device_id: "brakes".into(),
            file_hash: hash(if ok { b"fw-2" } else { b"fw-1" }),
            install_ts: install,
        }
    }

    fn classify(w: &World, inputs: &ComplementaryInputs, accident: u64) -> LiabilityDecision {
        let dir = w.ca.directory(Partition::Op);
        classify_liability(&w.ledger, &dir, &level1(w, accident), inputs, &AdjudicationPolicy::default()).unwrap()
    }

    /// Independent statement of the rule for an overdue update.
    fn oracle(et: bool, available: bool, pass: bool) -> LiabilityKind {
        if et || (available && pass) {
            LiabilityKind::Product
        } else {
            LiabilityKind::Negligence
        }
    }

    #[test]
    fn eight_net_et_audit_combinations() {
        let accident = 20 * DAY;
        for et in [false, true] {
            for available in [false, true] {
                for pass in [false, true] {
                    let mut w = world();
                    let maker = w.maker.clone();
                    let n = net(&mut w, &maker, InstructionKind::SoftwareUpdate, DAY);
                    if et {
                        let cav = w.cav.clone();
                        push(&mut w.ledger, make_et(&cav, n.t_id, ExecutionStatus::Success, 2 * DAY));
                    }
                    let mut inputs = ComplementaryInputs::default();
                    if available {
                        inputs.devices.insert("brakes".into(), device(pass, 2 * DAY));
                    }
                    let d = classify(&w, &inputs, accident);
                    assert_eq!(d.kind, oracle(et, available, pass), "et={et} avail={available} pass={pass}");
                    let expected_liable = if d.kind == LiabilityKind::Negligence { "cav1" } else { "maker" };
                    assert_eq!(d.liable_entity, expected_liable);
                    assert!(d.evidence.iter().all(|t| w.ledger.contains(t)));
                    if d.kind == LiabilityKind::Negligence {
                        assert!(!et && !(available && pass));
                    }
                }
            }
        }
    }

    #[test]
    fn fresh_net_is_not_negligence() {
        let mut w = world();
        let maker = w.maker.clone();
        net(&mut w, &maker, InstructionKind::SoftwareUpdate, 10 * DAY);
        let d = classify(&w, &ComplementaryInputs::default(), 12 * DAY);
        assert_eq!((d.kind, d.rationale), (LiabilityKind::Product, LiabilityRule::DefaultProduct));
    }

    #[test]
    fn recent_part_change_is_service() {
        let mut w = world();
        let tech = w.tech.clone();
        net(&mut w, &tech, InstructionKind::PartChange, 9 * DAY);
        let inputs = ComplementaryInputs {
            manufacturer: Some("maker".into()),
            ..Default::default()
        };
        let d = classify(&w, &inputs, 10 * DAY);
        assert_eq!((d.kind, d.liable_entity.as_str()), (LiabilityKind::Service, "tech"));
        let d = classify(&w, &inputs, 60 * DAY);
        assert_eq!((d.kind, d.liable_entity.as_str()), (LiabilityKind::Product, "maker"));
    }

    #[test]
    fn audit_confirms_execution_without_et() {
        let mut w = world();
        let maker = w.maker.clone();
        let n = net(&mut w, &maker, InstructionKind::SoftwareUpdate, DAY);
        let (audit, outcome) = firmware_audit(Some(&device(true, 3 * DAY)), &n).unwrap();
        assert_eq!(outcome, AuditOutcome::Pass);
        assert_eq!(audit.unwrap().retrieved_install_ts, 3 * DAY);
        let mut inputs = ComplementaryInputs::default();
        inputs.devices.insert("brakes".into(), device(true, 3 * DAY));
        assert_eq!(classify(&w, &inputs, 20 * DAY).kind, LiabilityKind::Product);
        // installed only after the accident
        inputs.devices.insert("brakes".into(), device(true, 21 * DAY));
        assert_eq!(classify(&w, &inputs, 20 * DAY).kind, LiabilityKind::Negligence);
        let tech = w.tech.clone();
        let pc = net(&mut w, &tech, InstructionKind::PartChange, DAY);
        assert_eq!(firmware_audit(None, &pc), Err(AdjudicationError::NotAnUpdate(pc.t_id)));
    }

    #[test]
    fn refuses_without_level1() {
        let w = world();
        let mut l1 = level1(&w, DAY);
        l1.liable_key = None;
        let dir = w.ca.directory(Partition::Op);
        let r = classify_liability(&w.ledger, &dir, &l1, &ComplementaryInputs::default(), &AdjudicationPolicy::default());
        assert_eq!(r, Err(AdjudicationError::NoFirstLevel("case-1".into())));
    }

    #[test]
    fn interaction_proofs_over_four_weeks() {
        let mut w = world();
        let maker = w.maker.clone();
        let ids: Vec<Digest> = (0..4)
            .map(|k| net(&mut w, &maker, InstructionKind::SoftwareUpdate, k * 7 * DAY).t_id)
            .collect();
        let got = proof_of_interaction(&w.ledger, &maker.public(), &w.cav.public(), 0..=28 * DAY);
        assert_eq!(got.iter().map(|t| t.t_id).collect::<Vec<_>>(), ids);
        assert!(proof_of_interaction(&w.ledger, &w.tech.public(), &w.cav.public(), 0..=28 * DAY).is_empty());
        let audit = owner_read_audit(&w.ledger, &w.cav.public(), &ids[..3].iter().copied().collect());
        assert_eq!(audit, vec![ids[3]]);
    }

    #[test]
    fn history_views() {
        let mut w = world();
        let pseudo = w.ca.issue_pseudonyms(&w.cav, 2).unwrap();
        let other = w.ca.issue_identity("cav2", EntityKind::Vehicle, &[Partition::Op]).unwrap();
        let police = w.ca.issue_identity("police", EntityKind::LegalAuthority, &[Partition::Dp]).unwrap();
        w.ca.register_law_enforcement(&police).unwrap();
        let loc = Location::from_degrees(0.0, 0.0);
        for (k, kp) in pseudo.keys().enumerate() {
            push(&mut w.ledger, make_ese(kp, SafetyEvent::HardBrake, loc, 10 + k as u64));
        }
        push(&mut w.ledger, make_ese(&w.cav.keys, SafetyEvent::HardBrake, loc, 5));
        push(&mut w.ledger, make_ese(&other.keys, SafetyEvent::OverSpeed, loc, 7));
        let h = behavioral_history(&w.ledger, &mut w.ca, &police, "cav1", 0..=100);
        assert!(h.resolved);
        assert_eq!(h.events.iter().map(|e| e.ts).collect::<Vec<_>>(), vec![5, 10, 11]);
        let maker = w.maker.clone();
        let h = behavioral_history(&w.ledger, &mut w.ca, &maker, "cav1", 0..=100);
        assert!(!h.resolved);
        assert_eq!(h.events.len(), 4);
        assert!(behavioral_history(&w.ledger, &mut w.ca, &police, "cav1", 50..=100).events.is_empty());
    }
}
