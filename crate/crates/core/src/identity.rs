//! Participants, the simulated certificate authority and the pseudonym
//! registry.
//!
//! The authority holds one signing key per partition. Each key's public half
//! is the partition's [`GenesisCredential`]; a certificate issued under one
//! partition never verifies under the other. Vehicles additionally receive
//! pseudonym key pairs whose certificates name no owner. The owner mapping
//! lives only in the authority's registry and is reachable through
//! [`CertificateAuthority::resolve_pseudonym`], which requires a
//! law-enforcement registration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{hash_parts, Digest, KeyPair, PublicKey, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Partition {
    #[serde(rename = "OP")]
    Op,
    #[serde(rename = "DP")]
    Dp,
}

impl Partition {
    pub fn tag(self) -> u8 {
        match self {
            Partition::Op => 1,
            Partition::Dp => 2,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Op => "OP",
            Partition::Dp => "DP",
        })
    }
}

/// Kind of real-world entity behind a participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Vehicle,
    Manufacturer,
    Technician,
    Insurer,
    LegalAuthority,
    TransportAuthority,
}

impl EntityKind {
    pub fn tag(self) -> u8 {
        match self {
            EntityKind::Vehicle => 1,
            EntityKind::Manufacturer => 2,
            EntityKind::Technician => 3,
            EntityKind::Insurer => 4,
            EntityKind::LegalAuthority => 5,
            EntityKind::TransportAuthority => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => EntityKind::Vehicle,
            2 => EntityKind::Manufacturer,
            3 => EntityKind::Technician,
            4 => EntityKind::Insurer,
            5 => EntityKind::LegalAuthority,
            6 => EntityKind::TransportAuthority,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityKind::Vehicle => "vehicle",
            EntityKind::Manufacturer => "manufacturer",
            EntityKind::Technician => "technician",
            EntityKind::Insurer => "insurer",
            EntityKind::LegalAuthority => "legal_authority",
            EntityKind::TransportAuthority => "transport_authority",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EntityKind::Vehicle,
            EntityKind::Manufacturer,
            EntityKind::Technician,
            EntityKind::Insurer,
            EntityKind::LegalAuthority,
            EntityKind::TransportAuthority,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    /// What this kind of entity does in `partition`, if it belongs there at all.
    ///
    /// OP: vehicles propose; manufacturers and technicians propose and
    /// validate; insurers validate. DP: insurers and manufacturers propose;
    /// legal and transport authorities validate.
    pub fn role_in(self, partition: Partition) -> Option<ParticipantRole> {
        use EntityKind::*;
        use ParticipantRole::*;
        match (partition, self) {
            (Partition::Op, Vehicle) => Some(Proposer),
            (Partition::Op, Manufacturer | Technician) => Some(Both),
            (Partition::Op, Insurer) => Some(Validator),
            (Partition::Op, LegalAuthority | TransportAuthority) => None,
            (Partition::Dp, Insurer | Manufacturer) => Some(Proposer),
            (Partition::Dp, LegalAuthority | TransportAuthority) => Some(Validator),
            (Partition::Dp, Vehicle | Technician) => None,
        }
    }

    pub fn default_memberships(self) -> Vec<Partition> {
        [Partition::Op, Partition::Dp]
            .into_iter()
            .filter(|p| self.role_in(*p).is_some())
            .collect()
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantRole {
    Proposer,
    Validator,
    Both,
}

impl ParticipantRole {
    pub fn validates(self) -> bool {
        matches!(self, ParticipantRole::Validator | ParticipantRole::Both)
    }

    pub fn proposes(self) -> bool {
        matches!(self, ParticipantRole::Proposer | ParticipantRole::Both)
    }
}

/// The verification credential anchored in a partition's genesis block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GenesisCredential {
    pub partition: Partition,
    pub ca_verification_key: PublicKey,
}

impl GenesisCredential {
    pub fn genesis_block_id(&self) -> Digest {
        hash_parts(&[
            b"bfica-genesis",
            &[self.partition.tag()],
            self.ca_verification_key.as_bytes(),
        ])
    }
}

/// What a certificate binds a key to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subject {
    Identity { handle: String, kind: EntityKind },
    /// Anonymous vehicle key; the owner is only known to the registry.
    Pseudonym,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub partition: Partition,
    pub subject: Subject,
    pub key: PublicKey,
    pub signature: Signature,
}

impl Certificate {
    fn signed_bytes(partition: Partition, subject: &Subject, key: &PublicKey) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(b"bfica-cert").u8(partition.tag());
        match subject {
            Subject::Identity { handle, kind } => {
                e.u8(1).str(handle).u8(kind.tag());
            }
            Subject::Pseudonym => {
                e.u8(2);
            }
        }
        e.key(key);
        e.finish()
    }

    pub fn verify(&self, credential: &GenesisCredential) -> bool {
        credential.partition == self.partition
            && credential.ca_verification_key.verify(
                &Self::signed_bytes(self.partition, &self.subject, &self.key),
                &self.signature,
            )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("identity `{0}` already issued")]
    Duplicate(String),
    #[error("{kind} has no role in partition {partition}")]
    NoRole { kind: EntityKind, partition: Partition },
    #[error("pseudonyms can only be issued to vehicles, not {0}")]
    NotAVehicle(EntityKind),
    #[error("pseudonym count must be at least 1")]
    ZeroPseudonyms,
    #[error("`{0}` is not registered for pseudonym resolution")]
    PermissionDenied(String),
    #[error("pseudonym {0} not found")]
    NotFound(String),
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
}

/// A registered participant with its long-term keys and per-partition
/// certificates.
#[derive(Debug, Clone)]
pub struct Participant {
    pub handle: String,
    pub kind: EntityKind,
    pub keys: KeyPair,
    pub certificates: BTreeMap<Partition, Certificate>,
}

impl Participant {
    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn role_in(&self, partition: Partition) -> Option<ParticipantRole> {
        self.certificates.get(&partition).and_then(|_| self.kind.role_in(partition))
    }

    pub fn is_member(&self, partition: Partition) -> bool {
        self.certificates.contains_key(&partition)
    }

    /// True when this participant's certificate for `credential.partition`
    /// verifies against the given genesis credential.
    pub fn verifies_under(&self, credential: &GenesisCredential) -> bool {
        self.certificates
            .get(&credential.partition)
            .is_some_and(|c| c.key == self.public() && c.verify(credential))
    }
}

/// Rotating vehicle keys for privacy-preserving evidence submission.
#[derive(Debug, Clone)]
pub struct PseudonymSet {
    pub owner: String,
    pseudonyms: Vec<KeyPair>,
    certificates: Vec<Certificate>,
    active_index: usize,
}

impl PseudonymSet {
    pub fn active(&self) -> &KeyPair {
        &self.pseudonyms[self.active_index]
    }

    pub fn active_index(&self) -> usize {
        self.active_index
    }

    pub fn len(&self) -> usize {
        self.pseudonyms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudonyms.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &KeyPair> {
        self.pseudonyms.iter()
    }

    pub fn publics(&self) -> Vec<PublicKey> {
        self.pseudonyms.iter().map(KeyPair::public).collect()
    }

    pub fn certificates(&self) -> &[Certificate] {
        &self.certificates
    }

    /// Switches to the next pseudonym, wrapping around.
    pub fn rotate(&mut self) -> &KeyPair {
        self.active_index = (self.active_index + 1) % self.pseudonyms.len();
        self.active()
    }

    pub fn select(&mut self, index: usize) -> Option<&KeyPair> {
        (index < self.pseudonyms.len()).then(|| {
            self.active_index = index;
            self.active()
        })
    }

    pub fn owns(&self, key: &PublicKey) -> bool {
        self.pseudonyms.iter().any(|k| k.public() == *key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolutionAudit {
    pub requester: String,
    pub pseudonym: String,
    pub outcome: String,
}

#[derive(Debug, Clone)]
struct IdentityRecord {
    kind: EntityKind,
    key: PublicKey,
}

/// Single in-simulation authority for both partitions.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    op_key: KeyPair,
    dp_key: KeyPair,
    evidence_key: KeyPair,
    rng: ChaCha20Rng,
    identities: BTreeMap<String, IdentityRecord>,
    pseudonym_owner: BTreeMap<PublicKey, String>,
    pseudonym_certs: BTreeMap<Partition, Vec<Certificate>>,
    identity_certs: BTreeMap<Partition, Vec<Certificate>>,
    law_enforcement: BTreeSet<String>,
    audit: Vec<ResolutionAudit>,
}

impl CertificateAuthority {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xb0f1_ca00);
        let op_key = KeyPair::generate(&mut rng);
        let dp_key = KeyPair::generate(&mut rng);
        let evidence_key = KeyPair::generate(&mut rng);
        Self {
            op_key,
            dp_key,
            evidence_key,
            rng,
            identities: BTreeMap::new(),
            pseudonym_owner: BTreeMap::new(),
            pseudonym_certs: BTreeMap::new(),
            identity_certs: BTreeMap::new(),
            law_enforcement: BTreeSet::new(),
            audit: Vec::new(),
        }
    }

    fn partition_key(&self, partition: Partition) -> &KeyPair {
        match partition {
            Partition::Op => &self.op_key,
            Partition::Dp => &self.dp_key,
        }
    }

    pub fn genesis_credential(&self, partition: Partition) -> GenesisCredential {
        GenesisCredential {
            partition,
            ca_verification_key: self.partition_key(partition).public(),
        }
    }

    /// Key pair shared by DP validators for opening witness accounts carried
    /// inside collision records.
    pub fn evidence_keys(&self) -> &KeyPair {
        &self.evidence_key
    }

    pub fn evidence_public(&self) -> PublicKey {
        self.evidence_key.public()
    }

    fn certify(&self, partition: Partition, subject: Subject, key: PublicKey) -> Certificate {
        let signature =
            self.partition_key(partition).sign(&Certificate::signed_bytes(partition, &subject, &key));
        Certificate {
            partition,
            subject,
            key,
            signature,
        }
    }

    pub fn issue_identity(
        &mut self,
        handle: &str,
        kind: EntityKind,
        memberships: &[Partition],
    ) -> Result<Participant, IdentityError> {
        if self.identities.contains_key(handle) {
            return Err(IdentityError::Duplicate(handle.to_string()));
        }
        for p in memberships {
            if kind.role_in(*p).is_none() {
                return Err(IdentityError::NoRole { kind, partition: *p });
            }
        }
        let keys = KeyPair::generate(&mut self.rng);
        let mut certificates = BTreeMap::new();
        for &p in memberships {
            let cert = self.certify(
                p,
                Subject::Identity {
                    handle: handle.to_string(),
                    kind,
                },
                keys.public(),
            );
            self.identity_certs.entry(p).or_default().push(cert.clone());
            certificates.insert(p, cert);
        }
        self.identities.insert(
            handle.to_string(),
            IdentityRecord {
                kind,
                key: keys.public(),
            },
        );
        Ok(Participant {
            handle: handle.to_string(),
            kind,
            keys,
            certificates,
        })
    }

    /// Issues `n` fresh pseudonyms to a vehicle. Pseudonym certificates are
    /// valid in the operational partition only.
    pub fn issue_pseudonyms(
        &mut self,
        cav: &Participant,
        n: usize,
    ) -> Result<PseudonymSet, IdentityError> {
        if cav.kind != EntityKind::Vehicle {
            return Err(IdentityError::NotAVehicle(cav.kind));
        }
        if n == 0 {
            return Err(IdentityError::ZeroPseudonyms);
        }
        if !self.identities.contains_key(&cav.handle) {
            return Err(IdentityError::UnknownParticipant(cav.handle.clone()));
        }
        let mut pseudonyms = Vec::with_capacity(n);
        let mut certificates = Vec::with_capacity(n);
        while pseudonyms.len() < n {
            let kp = KeyPair::generate(&mut self.rng);
            if kp.public() == cav.public() || self.pseudonym_owner.contains_key(&kp.public()) {
                continue;
            }
            let cert = self.certify(Partition::Op, Subject::Pseudonym, kp.public());
            self.pseudonym_certs.entry(Partition::Op).or_default().push(cert.clone());
            self.pseudonym_owner.insert(kp.public(), cav.handle.clone());
            certificates.push(cert);
            pseudonyms.push(kp);
        }
        Ok(PseudonymSet {
            owner: cav.handle.clone(),
            pseudonyms,
            certificates,
            active_index: 0,
        })
    }

    /// Grants pseudonym resolution rights. Only legal authorities qualify.
    pub fn register_law_enforcement(&mut self, p: &Participant) -> Result<(), IdentityError> {
        if p.kind != EntityKind::LegalAuthority {
            return Err(IdentityError::PermissionDenied(p.handle.clone()));
        }
        self.law_enforcement.insert(p.handle.clone());
        Ok(())
    }

    pub fn is_law_enforcement(&self, handle: &str) -> bool {
        self.law_enforcement.contains(handle)
    }

    /// Maps a pseudonym to its owner's handle. Every attempt is audit-logged.
    pub fn resolve_pseudonym(
        &mut self,
        requester: &Participant,
        pseudonym: &PublicKey,
    ) -> Result<String, IdentityError> {
        let result = if !self.law_enforcement.contains(&requester.handle) {
            Err(IdentityError::PermissionDenied(requester.handle.clone()))
        } else {
            self.pseudonym_owner
                .get(pseudonym)
                .cloned()
                .ok_or_else(|| IdentityError::NotFound(pseudonym.short()))
        };
        self.audit.push(ResolutionAudit {
            requester: requester.handle.clone(),
            pseudonym: pseudonym.short(),
            outcome: match &result {
                Ok(owner) => format!("resolved:{owner}"),
                Err(e) => e.to_string(),
            },
        });
        result
    }

    pub fn audit_log(&self) -> &[ResolutionAudit] {
        &self.audit
    }

    pub fn identity_key(&self, handle: &str) -> Option<PublicKey> {
        self.identities.get(handle).map(|r| r.key)
    }

    pub fn identity_kind(&self, handle: &str) -> Option<EntityKind> {
        self.identities.get(handle).map(|r| r.kind)
    }

    /// Builds the membership directory a validator of `partition` uses to
    /// authorize signers. Every entry is checked against the genesis
    /// credential on insertion.
    pub fn directory(&self, partition: Partition) -> Directory {
        let mut dir = Directory::new(self.genesis_credential(partition));
        for cert in self.identity_certs.get(&partition).into_iter().flatten() {
            dir.admit(cert.clone());
        }
        for cert in self.pseudonym_certs.get(&partition).into_iter().flatten() {
            dir.admit(cert.clone());
        }
        dir
    }
}

/// Public membership view of one partition: certified keys only, no
/// pseudonym owners.
#[derive(Debug, Clone)]
pub struct Directory {
    credential: GenesisCredential,
    members: BTreeMap<PublicKey, Certificate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberRef<'a> {
    Known { handle: &'a str, kind: EntityKind },
    Pseudonym,
}

impl Directory {
    pub fn new(credential: GenesisCredential) -> Self {
        Self {
            credential,
            members: BTreeMap::new(),
        }
    }

    pub fn credential(&self) -> &GenesisCredential {
        &self.credential
    }

    /// Adds a certificate if it verifies under this partition's credential.
    pub fn admit(&mut self, cert: Certificate) -> bool {
        if !cert.verify(&self.credential) {
            return false;
        }
        self.members.insert(cert.key, cert);
        true
    }

    pub fn lookup(&self, key: &PublicKey) -> Option<MemberRef<'_>> {
        self.members.get(key).map(|c| match &c.subject {
            Subject::Identity { handle, kind } => MemberRef::Known {
                handle: handle.as_str(),
                kind: *kind,
            },
            Subject::Pseudonym => MemberRef::Pseudonym,
        })
    }

    pub fn handle_of(&self, key: &PublicKey) -> Option<&str> {
        match self.lookup(key)? {
            MemberRef::Known { handle, .. } => Some(handle),
            MemberRef::Pseudonym => None,
        }
    }

    pub fn kind_of(&self, key: &PublicKey) -> Option<EntityKind> {
        match self.lookup(key)? {
            MemberRef::Known { kind, .. } => Some(kind),
            MemberRef::Pseudonym => None,
        }
    }

    pub fn key_of(&self, handle: &str) -> Option<PublicKey> {
        self.members.values().find_map(|c| match &c.subject {
            Subject::Identity { handle: h, .. } if h == handle => Some(c.key),
            _ => None,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}
