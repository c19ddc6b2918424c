//! Attack scripts, role checks and detection reports.
//!
//! Attacks are injected by the simulation engine at their trigger time; this
//! module defines what they are and how the outcome is reported.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::identity::{EntityKind, Partition};
use crate::sim::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// A rogue OP validator removes a PET from its dynamic block.
    TxDeletion,
    /// A NET countersigned with a compromised vehicle key.
    SignFakeTx,
    /// Colluding OP validators insist on a forged NET.
    OpCollusionFalseTx,
    /// A manufacturer submits a RET with an altered collision record.
    DpCollusionModify,
    /// A vehicle falsifies its own sensor account before submitting.
    SensorAlteration,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::TxDeletion,
        AttackKind::SignFakeTx,
        AttackKind::OpCollusionFalseTx,
        AttackKind::DpCollusionModify,
        AttackKind::SensorAlteration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::TxDeletion => "tx_deletion",
            AttackKind::SignFakeTx => "sign_fake_tx",
            AttackKind::OpCollusionFalseTx => "op_collusion_false_tx",
            AttackKind::DpCollusionModify => "dp_collusion_modify",
            AttackKind::SensorAlteration => "sensor_alteration",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn variants(self) -> Vec<AttackVariant> {
        AttackVariant::ALL.into_iter().filter(|v| v.kind() == self).collect()
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackVariant {
    /// Removal from the open dynamic block.
    Dblock,
    /// Fake NET back-dated before the agreed `t_alt_bid` and slipped into
    /// the rogue's own block.
    BackDated,
    /// Fake NET submitted through the normal pipeline.
    Pipeline,
    /// Forged NET inserted after the target's PET.
    AfterPet,
    /// Collision location moved 300 m.
    Location,
    /// Collision timestamp moved by three grouping windows.
    Timestamp,
    /// Only the manufacturer files for the host and it clears the fault.
    SoleSource,
    /// Own account falsified while witnesses report the truth.
    Witnessed,
    /// Own account falsified and witness ciphertexts dropped.
    NoWitnesses,
}

impl AttackVariant {
    pub const ALL: [AttackVariant; 9] = [
        AttackVariant::Dblock,
        AttackVariant::BackDated,
        AttackVariant::Pipeline,
        AttackVariant::AfterPet,
        AttackVariant::Location,
        AttackVariant::Timestamp,
        AttackVariant::SoleSource,
        AttackVariant::Witnessed,
        AttackVariant::NoWitnesses,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackVariant::Dblock => "dblock",
            AttackVariant::BackDated => "back_dated",
            AttackVariant::Pipeline => "pipeline",
            AttackVariant::AfterPet => "after_pet",
            AttackVariant::Location => "location",
            AttackVariant::Timestamp => "timestamp",
            AttackVariant::SoleSource => "sole_source",
            AttackVariant::Witnessed => "witnessed",
            AttackVariant::NoWitnesses => "no_witnesses",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn kind(self) -> AttackKind {
        match self {
            AttackVariant::Dblock => AttackKind::TxDeletion,
            AttackVariant::BackDated | AttackVariant::Pipeline => AttackKind::SignFakeTx,
            AttackVariant::AfterPet => AttackKind::OpCollusionFalseTx,
            AttackVariant::Location | AttackVariant::Timestamp | AttackVariant::SoleSource => {
                AttackKind::DpCollusionModify
            }
            AttackVariant::Witnessed | AttackVariant::NoWitnesses => AttackKind::SensorAlteration,
        }
    }

    /// Whether the protocol is expected to catch this variant. `None` when
    /// the outcome depends on what else is in the case: a sole manufacturer
    /// report leaves nothing to cross-compare, but witness accounts may
    /// still contradict it.
    pub fn expected_detected(self) -> Option<bool> {
        match self {
            AttackVariant::SoleSource => None,
            AttackVariant::NoWitnesses => Some(false),
            _ => Some(true),
        }
    }
}

impl fmt::Display for AttackVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The check that exposed an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMechanism {
    DynamicBlockId,
    TAltBidTracking,
    CrossProposerHash,
    SpatiotemporalConsistency,
    OwnerReadAudit,
    None,
}

impl DetectionMechanism {
    pub fn name(self) -> &'static str {
        match self {
            DetectionMechanism::DynamicBlockId => "dynamic_block_id",
            DetectionMechanism::TAltBidTracking => "t_alt_bid_tracking",
            DetectionMechanism::CrossProposerHash => "cross_proposer_hash",
            DetectionMechanism::SpatiotemporalConsistency => "spatiotemporal_consistency",
            DetectionMechanism::OwnerReadAudit => "owner_read_audit",
            DetectionMechanism::None => "none",
        }
    }
}

impl fmt::Display for DetectionMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttackError {
    #[error("{kind}: {msg}")]
    Role { kind: AttackKind, msg: String },
}

/// One scripted attack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackScript {
    pub kind: AttackKind,
    pub variant: AttackVariant,
    pub actors: Vec<String>,
    /// Vehicle whose transactions are targeted or whose key is used.
    pub cav: Option<String>,
    pub trigger: u64,
}

impl AttackScript {
    /// Rejects scripts whose actors cannot play the attack's role.
    pub fn check_roles(&self, s: &Scenario) -> Result<(), AttackError> {
        let fail = |msg: String| {
            Err(AttackError::Role {
                kind: self.kind,
                msg,
            })
        };
        let kind_of = |h: &str| s.kind_of(h);
        let cav = match &self.cav {
            Some(c) if kind_of(c) == Some(EntityKind::Vehicle) => c.as_str(),
            Some(c) => return fail(format!("`{c}` is not a vehicle")),
            None => return fail("needs cav=<vehicle>".into()),
        };
        let issuer = |h: &str| matches!(kind_of(h), Some(EntityKind::Manufacturer | EntityKind::Technician));
        match self.kind {
            AttackKind::TxDeletion | AttackKind::SignFakeTx => {
                let [rogue] = self.actors.as_slice() else {
                    return fail("needs exactly one actor".into());
                };
                if !s.validates_in(rogue, Partition::Op) {
                    return fail(format!("`{rogue}` is not an operational validator"));
                }
                if self.kind == AttackKind::SignFakeTx && !issuer(rogue) {
                    return fail(format!("`{rogue}` cannot issue NETs"));
                }
            }
            AttackKind::OpCollusionFalseTx => {
                if self.actors.len() < 2 {
                    return fail("needs at least two colluders".into());
                }
                if let Some(a) = self.actors.iter().find(|a| !s.validates_in(a, Partition::Op)) {
                    return fail(format!("`{a}` is not an operational validator"));
                }
                if !issuer(&self.actors[0]) {
                    return fail(format!("`{}` cannot issue NETs", self.actors[0]));
                }
            }
            AttackKind::DpCollusionModify => {
                let [maker] = self.actors.as_slice() else {
                    return fail("needs exactly one actor".into());
                };
                if kind_of(maker) != Some(EntityKind::Manufacturer) {
                    return fail(format!("`{maker}` is not a manufacturer"));
                }
                if s.manufacturers.get(cav) != Some(maker) {
                    return fail(format!("`{maker}` did not make `{cav}`"));
                }
            }
            AttackKind::SensorAlteration => {
                if self.actors.as_slice() != [cav.to_string()] {
                    return fail("the altering vehicle must be the only actor".into());
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one attack in one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub attack_kind: AttackKind,
    pub variant: AttackVariant,
    pub detected: bool,
    pub mechanism: DetectionMechanism,
    /// Seconds from injection to detection.
    pub detection_time_s: Option<f64>,
    pub seed: u64,
    pub expected_detected: Option<bool>,
    /// Whether the case decisions match an honest run; filled in by
    /// [`crate::sim::run_attack`].
    pub decision_unchanged: Option<bool>,
    pub note: String,
}

impl DetectionReport {
    pub const CSV_HEADER: &'static str = "attack_kind,variant,detected,mechanism,detection_time_s,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.attack_kind,
            self.variant,
            self.detected,
            self.mechanism,
            self.detection_time_s.map(|t| format!("{t:.6}")).unwrap_or_default(),
            self.seed
        )
    }
}

pub fn attacks_csv(reports: &[DetectionReport]) -> String {
    let mut out = String::from(DetectionReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> Scenario {
        Scenario::parse(
            "participant maker manufacturer\nparticipant tech technician\nparticipant ins insurer\n\
             participant other manufacturer\nparticipant cav1 vehicle\nmanufacturer cav1 maker\n",
        )
        .unwrap()
    }

    fn script(kind: AttackKind, variant: AttackVariant, actors: &[&str]) -> AttackScript {
        AttackScript {
            kind,
            variant,
            actors: actors.iter().map(|a| a.to_string()).collect(),
            cav: Some("cav1".into()),
            trigger: 0,
        }
    }

    #[test]
    fn variants_partition_kinds() {
        for v in AttackVariant::ALL {
            assert!(v.kind().variants().contains(&v));
            assert_eq!(AttackVariant::parse(v.name()), Some(v));
        }
        for k in AttackKind::ALL {
            assert_eq!(AttackKind::parse(k.name()), Some(k));
        }
    }

    #[test]
    fn role_checks() {
        let s = world();
        use AttackKind::*;
        use AttackVariant::*;
        assert!(script(TxDeletion, Dblock, &["ins"]).check_roles(&s).is_ok());
        assert!(script(TxDeletion, Dblock, &["cav1"]).check_roles(&s).is_err());
        assert!(script(SignFakeTx, BackDated, &["ins"]).check_roles(&s).is_err());
        assert!(script(SignFakeTx, BackDated, &["tech"]).check_roles(&s).is_ok());
        assert!(script(OpCollusionFalseTx, AfterPet, &["maker"]).check_roles(&s).is_err());
        assert!(script(OpCollusionFalseTx, AfterPet, &["ins", "maker"]).check_roles(&s).is_err());
        assert!(script(OpCollusionFalseTx, AfterPet, &["maker", "tech"]).check_roles(&s).is_ok());
        assert!(script(DpCollusionModify, Location, &["other"]).check_roles(&s).is_err());
        assert!(script(DpCollusionModify, Location, &["maker"]).check_roles(&s).is_ok());
        assert!(script(SensorAlteration, Witnessed, &["maker"]).check_roles(&s).is_err());
        assert!(script(SensorAlteration, Witnessed, &["cav1"]).check_roles(&s).is_ok());
        let mut no_cav = script(TxDeletion, Dblock, &["ins"]);
        no_cav.cav = None;
        assert!(no_cav.check_roles(&s).is_err());
    }

    #[test]
    fn csv_shape() {
        let r = DetectionReport {
            attack_kind: AttackKind::TxDeletion,
            variant: AttackVariant::Dblock,
            detected: true,
            mechanism: DetectionMechanism::DynamicBlockId,
            detection_time_s: Some(1.5),
            seed: 7,
            expected_detected: Some(true),
            decision_unchanged: None,
            note: String::new(),
        };
        assert_eq!(
            attacks_csv(&[r]),
            "attack_kind,variant,detected,mechanism,detection_time_s,seed\ntx_deletion,dblock,true,dynamic_block_id,1.500000,7\n"
        );
    }
}
