//! The five evidence transaction kinds, their canonical encoding and
//! structural verification.
//!
//! `t_id` is the SHA-256 of the canonical body encoding. Signers sign
//! `"bfica-tx-sig" ‖ t_id ‖ submitted_at`, so the submission time is covered
//! even though it is not part of the body. ESE, PET, ET and RET carry one
//! signature; NET carries exactly two (issuer, then target vehicle).

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::crypto::{hash, Digest, KeyPair, PublicKey, Signature};
use crate::identity::{EntityKind, Participant, Partition};

fn hex_bytes<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TransactionKind {
    #[serde(rename = "ESE")]
    Ese,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "NET")]
    Net,
    #[serde(rename = "ET")]
    Et,
    #[serde(rename = "RET")]
    Ret,
}

impl TransactionKind {
    pub const ALL: [TransactionKind; 5] = [
        TransactionKind::Ese,
        TransactionKind::Pet,
        TransactionKind::Net,
        TransactionKind::Et,
        TransactionKind::Ret,
    ];

    pub fn tag(self) -> u8 {
        match self {
            TransactionKind::Ese => 1,
            TransactionKind::Pet => 2,
            TransactionKind::Net => 3,
            TransactionKind::Et => 4,
            TransactionKind::Ret => 5,
        }
    }

    pub fn required_signatures(self) -> usize {
        match self {
            TransactionKind::Net => 2,
            _ => 1,
        }
    }

    pub fn partition(self) -> Partition {
        match self {
            TransactionKind::Ret => Partition::Dp,
            _ => Partition::Op,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransactionKind::Ese => "ESE",
            TransactionKind::Pet => "PET",
            TransactionKind::Net => "NET",
            TransactionKind::Et => "ET",
            TransactionKind::Ret => "RET",
        }
    }
}

impl fmt::Display for TransactionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Geographic position in integer micro-degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Location {
    pub lat_e6: i64,
    pub lon_e6: i64,
}

impl Location {
    pub fn from_degrees(lat: f64, lon: f64) -> Self {
        Self {
            lat_e6: (lat * 1e6).round() as i64,
            lon_e6: (lon * 1e6).round() as i64,
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat_e6 as f64 / 1e6
    }

    pub fn lon(&self) -> f64 {
        self.lon_e6 as f64 / 1e6
    }

    /// Equirectangular distance in metres; accurate to well under a metre at
    /// the sub-kilometre scales the consistency checks care about.
    pub fn distance_m(&self, other: &Location) -> f64 {
        const EARTH_RADIUS_M: f64 = 6_371_000.0;
        let (la1, la2) = (self.lat().to_radians(), other.lat().to_radians());
        let dlat = la2 - la1;
        let dlon = (other.lon() - self.lon()).to_radians() * ((la1 + la2) / 2.0).cos();
        EARTH_RADIUS_M * (dlat * dlat + dlon * dlon).sqrt()
    }

    /// Moves the location `metres` due north.
    pub fn offset_north(&self, metres: f64) -> Location {
        let dlat = (metres / 6_371_000.0).to_degrees();
        Location::from_degrees(self.lat() + dlat, self.lon())
    }

    fn encode(&self, e: &mut Encoder) {
        e.i64(self.lat_e6).i64(self.lon_e6);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            lat_e6: d.i64()?,
            lon_e6: d.i64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyEvent {
    HardBrake,
    WrongWay,
    SlipperyRoad,
    OverSpeed,
}

impl SafetyEvent {
    fn tag(self) -> u8 {
        match self {
            SafetyEvent::HardBrake => 1,
            SafetyEvent::WrongWay => 2,
            SafetyEvent::SlipperyRoad => 3,
            SafetyEvent::OverSpeed => 4,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, CodecError> {
        Ok(match tag {
            1 => SafetyEvent::HardBrake,
            2 => SafetyEvent::WrongWay,
            3 => SafetyEvent::SlipperyRoad,
            4 => SafetyEvent::OverSpeed,
            tag => return Err(CodecError::Tag { what: "safety event", tag }),
        })
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "hard_brake" => SafetyEvent::HardBrake,
            "wrong_way" => SafetyEvent::WrongWay,
            "slippery_road" => SafetyEvent::SlipperyRoad,
            "over_speed" => SafetyEvent::OverSpeed,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EseBody {
    pub event: SafetyEvent,
    pub ts: u64,
    pub loc: Location,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WitnessCiphertext {
    pub witness: PublicKey,
    #[serde(serialize_with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
}

/// The collision payload (`T_data`) of a PET.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CollisionRecord {
    pub loc: Location,
    pub ts: u64,
    #[serde(serialize_with = "hex_bytes")]
    pub ve_px: Vec<u8>,
    pub ts_data: Digest,
    pub witness_ciphertexts: Vec<WitnessCiphertext>,
    pub h_tdata: Digest,
}

impl CollisionRecord {
    /// Builds a record with a freshly computed `h_tdata`.
    pub fn new(
        loc: Location,
        ts: u64,
        ve_px: Vec<u8>,
        ts_data: Digest,
        witness_ciphertexts: Vec<WitnessCiphertext>,
    ) -> Self {
        let mut r = Self {
            loc,
            ts,
            ve_px,
            ts_data,
            witness_ciphertexts,
            h_tdata: Digest::ZERO,
        };
        r.h_tdata = r.compute_hash();
        r
    }

    fn encode_fields(&self, e: &mut Encoder) {
        self.loc.encode(e);
        e.u64(self.ts).bytes(&self.ve_px).digest(&self.ts_data);
        e.len(self.witness_ciphertexts.len());
        for w in &self.witness_ciphertexts {
            e.key(&w.witness).bytes(&w.ciphertext);
        }
    }

    /// Hash over `loc ‖ ts ‖ ve_px ‖ ts_data ‖ witness_ciphertexts`.
    pub fn compute_hash(&self) -> Digest {
        let mut e = Encoder::new();
        self.encode_fields(&mut e);
        hash(&e.finish())
    }

    pub fn is_consistent(&self) -> bool {
        self.compute_hash() == self.h_tdata
    }

    /// Recomputes `h_tdata` after a mutation, as an attacker would.
    pub fn rehash(&mut self) {
        self.h_tdata = self.compute_hash();
    }

    fn encode(&self, e: &mut Encoder) {
        self.encode_fields(e);
        e.digest(&self.h_tdata);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let loc = Location::decode(d)?;
        let ts = d.u64()?;
        let ve_px = d.bytes()?;
        let ts_data = d.digest()?;
        let n = d.count()?;
        let mut witness_ciphertexts = Vec::with_capacity(n);
        for _ in 0..n {
            witness_ciphertexts.push(WitnessCiphertext {
                witness: d.key()?,
                ciphertext: d.bytes()?,
            });
        }
        Ok(Self {
            loc,
            ts,
            ve_px,
            ts_data,
            witness_ciphertexts,
            h_tdata: d.digest()?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        e.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    SoftwareUpdate,
    PartChange,
}

impl InstructionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "software_update" => Some(InstructionKind::SoftwareUpdate),
            "part_change" => Some(InstructionKind::PartChange),
            _ => None,
        }
    }
}

/// Instruction payload of a NET.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UpdateMeta {
    pub instruction_kind: InstructionKind,
    pub update_file_hash: Option<Digest>,
    /// Vehicle subsystem the instruction concerns (e.g. `braking`).
    pub subsystem: String,
    pub metadata: String,
    pub file_pointer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetBody {
    pub issuer: PublicKey,
    pub target: PublicKey,
    pub meta: UpdateMeta,
    pub issued_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EtBody {
    pub net_ref: Digest,
    pub status: ExecutionStatus,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetBody {
    pub proposer: PublicKey,
    /// Pseudonym that signed the originating PET.
    pub host: PublicKey,
    pub record: CollisionRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Body {
    #[serde(rename = "ESE")]
    Ese(EseBody),
    #[serde(rename = "PET")]
    Pet(CollisionRecord),
    #[serde(rename = "NET")]
    Net(NetBody),
    #[serde(rename = "ET")]
    Et(EtBody),
    #[serde(rename = "RET")]
    Ret(RetBody),
}

impl Body {
    pub fn kind(&self) -> TransactionKind {
        match self {
            Body::Ese(_) => TransactionKind::Ese,
            Body::Pet(_) => TransactionKind::Pet,
            Body::Net(_) => TransactionKind::Net,
            Body::Et(_) => TransactionKind::Et,
            Body::Ret(_) => TransactionKind::Ret,
        }
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.u8(self.kind().tag());
        match self {
            Body::Ese(b) => {
                e.u8(b.event.tag()).u64(b.ts);
                b.loc.encode(e);
            }
            Body::Pet(r) => r.encode(e),
            Body::Net(n) => {
                e.key(&n.issuer).key(&n.target);
                e.u8(match n.meta.instruction_kind {
                    InstructionKind::SoftwareUpdate => 1,
                    InstructionKind::PartChange => 2,
                });
                match &n.meta.update_file_hash {
                    Some(h) => e.bool(true).digest(h),
                    None => e.bool(false),
                };
                e.str(&n.meta.subsystem)
                    .str(&n.meta.metadata)
                    .str(&n.meta.file_pointer)
                    .u64(n.issued_at);
            }
            Body::Et(b) => {
                e.digest(&b.net_ref)
                    .u8(match b.status {
                        ExecutionStatus::Success => 1,
                        ExecutionStatus::Failure => 0,
                    })
                    .u64(b.ts);
            }
            Body::Ret(b) => {
                e.key(&b.proposer).key(&b.host);
                b.record.encode(e);
            }
        }
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match d.u8()? {
            1 => Body::Ese(EseBody {
                event: SafetyEvent::from_tag(d.u8()?)?,
                ts: d.u64()?,
                loc: Location::decode(d)?,
            }),
            2 => Body::Pet(CollisionRecord::decode(d)?),
            3 => {
                let issuer = d.key()?;
                let target = d.key()?;
                let instruction_kind = match d.u8()? {
                    1 => InstructionKind::SoftwareUpdate,
                    2 => InstructionKind::PartChange,
                    tag => return Err(CodecError::Tag { what: "instruction kind", tag }),
                };
                let update_file_hash = if d.bool()? { Some(d.digest()?) } else { None };
                Body::Net(NetBody {
                    issuer,
                    target,
                    meta: UpdateMeta {
                        instruction_kind,
                        update_file_hash,
                        subsystem: d.str()?,
                        metadata: d.str()?,
                        file_pointer: d.str()?,
                    },
                    issued_at: d.u64()?,
                })
            }
            4 => Body::Et(EtBody {
                net_ref: d.digest()?,
                status: match d.u8()? {
                    1 => ExecutionStatus::Success,
                    0 => ExecutionStatus::Failure,
                    tag => return Err(CodecError::Tag { what: "execution status", tag }),
                },
                ts: d.u64()?,
            }),
            5 => Body::Ret(RetBody {
                proposer: d.key()?,
                host: d.key()?,
                record: CollisionRecord::decode(d)?,
            }),
            tag => return Err(CodecError::Tag { what: "transaction kind", tag }),
        })
    }

    /// Canonical serialization; the basis for `t_id` and every block ID.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        e.finish()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let body = Self::decode(&mut d)?;
        d.finish()?;
        Ok(body)
    }

    pub fn t_id(&self) -> Digest {
        hash(&self.canonical_bytes())
    }

    /// Event time carried inside the payload, when the kind has one.
    pub fn event_ts(&self) -> Option<u64> {
        match self {
            Body::Ese(b) => Some(b.ts),
            Body::Pet(r) => Some(r.ts),
            Body::Net(n) => Some(n.issued_at),
            Body::Et(b) => Some(b.ts),
            Body::Ret(b) => Some(b.record.ts),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("collision record hash does not match its fields")]
    HashMismatch,
    #[error("event time {ts} is after submission time {submitted_at}")]
    FromTheFuture { ts: u64, submitted_at: u64 },
    #[error("{0} is not an operational-partition validator")]
    NotAnOpValidator(String),
    #[error("{0} is not a proposer in the decision partition")]
    NotADpProposer(String),
    #[error("countersigning vehicle is not the NET target")]
    TargetMismatch,
    #[error("NET already countersigned")]
    AlreadyCountersigned,
    #[error("software updates must carry an update file hash")]
    MissingUpdateHash,
    #[error("expected a PET")]
    NotAPet,
    #[error("PET has not been validated in the operational partition")]
    PetNotValidated,
    #[error("target is not a vehicle")]
    TargetNotVehicle,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructuralError {
    #[error("t_id does not match body hash")]
    IdMismatch,
    #[error("{kind} requires {expected} signatures, found {got}")]
    SignatureCount {
        kind: TransactionKind,
        expected: usize,
        got: usize,
    },
    #[error("signature {0} does not verify")]
    BadSignature(usize),
    #[error("signer keys do not match the parties named in the body")]
    SignerMismatch,
    #[error("payload integrity: {0}")]
    PayloadIntegrity(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transaction {
    pub t_id: Digest,
    pub body: Body,
    pub signer_keys: Vec<PublicKey>,
    pub signatures: Vec<Signature>,
    pub submitted_at: u64,
}

/// Bytes each signer signs. The signer's full key is included so the
/// encryption half of a signer key cannot be swapped.
pub fn signing_message(t_id: &Digest, submitted_at: u64, signer: &PublicKey) -> Vec<u8> {
    let mut e = Encoder::new();
    e.raw(b"bfica-tx-sig").digest(t_id).u64(submitted_at).key(signer);
    e.finish()
}

impl Transaction {
    /// Builds and signs a single-signature transaction.
    pub fn single_signed(body: Body, signer: &KeyPair, submitted_at: u64) -> Self {
        let t_id = body.t_id();
        let sig = signer.sign(&signing_message(&t_id, submitted_at, &signer.public()));
        Self {
            t_id,
            body,
            signer_keys: vec![signer.public()],
            signatures: vec![sig],
            submitted_at,
        }
    }

    pub fn kind(&self) -> TransactionKind {
        self.body.kind()
    }

    /// Ordering key used by validators: `(submitted_at, t_id)`.
    pub fn order_key(&self) -> (u64, Digest) {
        (self.submitted_at, self.t_id)
    }

    pub fn primary_signer(&self) -> Option<&PublicKey> {
        self.signer_keys.first()
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.bytes(&self.body.canonical_bytes());
        e.len(self.signer_keys.len());
        for k in &self.signer_keys {
            e.key(k);
        }
        e.len(self.signatures.len());
        for s in &self.signatures {
            e.signature(s);
        }
        e.u64(self.submitted_at);
    }

    /// Full canonical encoding: body, signer keys, signatures, submission
    /// time. `t_id` is recomputed on decode rather than stored.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let body = Body::parse(&d.bytes()?)?;
        let nk = d.count()?;
        let mut signer_keys = Vec::with_capacity(nk);
        for _ in 0..nk {
            signer_keys.push(d.key()?);
        }
        let ns = d.count()?;
        let mut signatures = Vec::with_capacity(ns);
        for _ in 0..ns {
            signatures.push(d.signature()?);
        }
        let submitted_at = d.u64()?;
        Ok(Self {
            t_id: body.t_id(),
            body,
            signer_keys,
            signatures,
            submitted_at,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let tx = Self::decode(&mut d)?;
        d.finish()?;
        Ok(tx)
    }

    /// Checks everything that can be checked from the transaction alone:
    /// id, signature count, signature validity, signer/body agreement and
    /// PET/RET collision-record hashes. Membership is not checked here.
    pub fn verify_structure(&self) -> Result<(), StructuralError> {
        if self.body.t_id() != self.t_id {
            return Err(StructuralError::IdMismatch);
        }
        let kind = self.kind();
        let expected = kind.required_signatures();
        if self.signatures.len() != expected || self.signer_keys.len() != expected {
            return Err(StructuralError::SignatureCount {
                kind,
                expected,
                got: self.signatures.len().min(self.signer_keys.len()),
            });
        }
        match &self.body {
            Body::Net(n) if self.signer_keys != [n.issuer, n.target] => {
                return Err(StructuralError::SignerMismatch)
            }
            Body::Ret(r) if self.signer_keys[0] != r.proposer => {
                return Err(StructuralError::SignerMismatch)
            }
            _ => {}
        }
        for (i, (k, s)) in self.signer_keys.iter().zip(&self.signatures).enumerate() {
            if !k.verify(&signing_message(&self.t_id, self.submitted_at, k), s) {
                return Err(StructuralError::BadSignature(i));
            }
        }
        match &self.body {
            Body::Pet(r) | Body::Ret(RetBody { record: r, .. }) if !r.is_consistent() => {
                Err(StructuralError::PayloadIntegrity("h_tdata mismatch"))
            }
            Body::Net(n)
                if n.meta.instruction_kind == InstructionKind::SoftwareUpdate
                    && n.meta.update_file_hash.is_none() =>
            {
                Err(StructuralError::PayloadIntegrity("software update without file hash"))
            }
            _ => Ok(()),
        }
    }

    pub fn collision_record(&self) -> Option<&CollisionRecord> {
        match &self.body {
            Body::Pet(r) => Some(r),
            Body::Ret(b) => Some(&b.record),
            _ => None,
        }
    }

    pub fn as_net(&self) -> Option<&NetBody> {
        match &self.body {
            Body::Net(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_et(&self) -> Option<&EtBody> {
        match &self.body {
            Body::Et(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_ese(&self) -> Option<&EseBody> {
        match &self.body {
            Body::Ese(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_ret(&self) -> Option<&RetBody> {
        match &self.body {
            Body::Ret(b) => Some(b),
            _ => None,
        }
    }

    /// JSON rendering for traces. Diagnostic only; hashes are always over
    /// the canonical bytes.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("transaction serializes")
    }
}

/// Anything that can tell whether a transaction was validated in the
/// operational partition.
pub trait ValidatedLookup {
    fn is_validated(&self, t_id: &Digest) -> bool;
}

impl<F: Fn(&Digest) -> bool> ValidatedLookup for F {
    fn is_validated(&self, t_id: &Digest) -> bool {
        self(t_id)
    }
}

pub fn make_ese(signer: &KeyPair, event: SafetyEvent, loc: Location, ts: u64) -> Transaction {
    Transaction::single_signed(Body::Ese(EseBody { event, ts, loc }), signer, ts)
}

pub fn make_pet(
    signer: &KeyPair,
    record: CollisionRecord,
    submitted_at: u64,
) -> Result<Transaction, TxError> {
    if !record.is_consistent() {
        return Err(TxError::HashMismatch);
    }
    if record.ts > submitted_at {
        return Err(TxError::FromTheFuture {
            ts: record.ts,
            submitted_at,
        });
    }
    Ok(Transaction::single_signed(Body::Pet(record), signer, submitted_at))
}

/// A NET signed by its issuer and awaiting the target vehicle's
/// acknowledgement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingNet {
    pub t_id: Digest,
    pub body: NetBody,
    pub issuer_signature: Signature,
    pub submitted_at: u64,
    countersigned: bool,
}

impl PendingNet {
    /// The NET as it would look if submitted without acknowledgement.
    pub fn as_incomplete(&self) -> Transaction {
        Transaction {
            t_id: self.t_id,
            body: Body::Net(self.body.clone()),
            signer_keys: vec![self.body.issuer],
            signatures: vec![self.issuer_signature],
            submitted_at: self.submitted_at,
        }
    }
}

pub fn make_net(
    issuer: &Participant,
    target: PublicKey,
    meta: UpdateMeta,
    issued_at: u64,
) -> Result<PendingNet, TxError> {
    let validates = issuer.role_in(Partition::Op).is_some_and(|r| r.validates());
    if !validates || !matches!(issuer.kind, EntityKind::Manufacturer | EntityKind::Technician) {
        return Err(TxError::NotAnOpValidator(issuer.handle.clone()));
    }
    if meta.instruction_kind == InstructionKind::SoftwareUpdate && meta.update_file_hash.is_none() {
        return Err(TxError::MissingUpdateHash);
    }
    let body = NetBody {
        issuer: issuer.public(),
        target,
        meta,
        issued_at,
    };
    let t_id = Body::Net(body.clone()).t_id();
    let issuer_signature = issuer.keys.sign(&signing_message(&t_id, issued_at, &issuer.public()));
    Ok(PendingNet {
        t_id,
        body,
        issuer_signature,
        submitted_at: issued_at,
        countersigned: false,
    })
}

/// Target vehicle acknowledges a NET with its known key, completing the
/// multiSig transaction.
pub fn countersign_net(target: &Participant, pending: &mut PendingNet) -> Result<Transaction, TxError> {
    countersign_net_with(&target.keys, pending)
}

/// Countersigns with raw key material; used when a scenario compromises a
/// vehicle key.
pub fn countersign_net_with(keys: &KeyPair, pending: &mut PendingNet) -> Result<Transaction, TxError> {
    if keys.public() != pending.body.target {
        return Err(TxError::TargetMismatch);
    }
    if pending.countersigned {
        return Err(TxError::AlreadyCountersigned);
    }
    pending.countersigned = true;
    let sig = keys.sign(&signing_message(&pending.t_id, pending.submitted_at, &keys.public()));
    Ok(Transaction {
        t_id: pending.t_id,
        body: Body::Net(pending.body.clone()),
        signer_keys: vec![pending.body.issuer, pending.body.target],
        signatures: vec![pending.issuer_signature, sig],
        submitted_at: pending.submitted_at,
    })
}

pub fn make_et(cav: &Participant, net_ref: Digest, status: ExecutionStatus, ts: u64) -> Transaction {
    Transaction::single_signed(Body::Et(EtBody { net_ref, status, ts }), &cav.keys, ts)
}

/// Request transaction embedding the PET's collision record verbatim.
pub fn make_ret(
    proposer: &Participant,
    pet: &Transaction,
    validated: &impl ValidatedLookup,
    submitted_at: u64,
) -> Result<Transaction, TxError> {
    if !proposer.role_in(Partition::Dp).is_some_and(|r| r.proposes()) {
        return Err(TxError::NotADpProposer(proposer.handle.clone()));
    }
    let Body::Pet(record) = &pet.body else {
        return Err(TxError::NotAPet);
    };
    if !validated.is_validated(&pet.t_id) {
        return Err(TxError::PetNotValidated);
    }
    let host = *pet.primary_signer().ok_or(TxError::NotAPet)?;
    Ok(Transaction::single_signed(
        Body::Ret(RetBody {
            proposer: proposer.public(),
            host,
            record: record.clone(),
        }),
        &proposer.keys,
        submitted_at,
    ))
}

/// A vehicle's own account of the event, carried as `ve_px`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    /// Place in the traffic queue; 0 is the leading vehicle.
    pub position: u32,
    pub speed_cm_s: u32,
    /// Hard stop without a hazard that explains it.
    pub anomalous_stop: bool,
    pub fault_subsystem: Option<String>,
}

impl EventRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u32(self.position).u32(self.speed_cm_s).bool(self.anomalous_stop);
        match &self.fault_subsystem {
            Some(s) => e.bool(true).str(s),
            None => e.bool(false),
        };
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let r = Self {
            position: d.u32()?,
            speed_cm_s: d.u32()?,
            anomalous_stop: d.bool()?,
            fault_subsystem: if d.bool()? { Some(d.str()?) } else { None },
        };
        d.finish()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub subject: PublicKey,
    pub position: u32,
    pub anomalous_stop: bool,
}

/// A witness vehicle's perception, encrypted into a host's PET.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WitnessRecord {
    pub observer: PublicKey,
    pub loc: Location,
    pub ts: u64,
    pub observations: Vec<Observation>,
}

impl WitnessRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.key(&self.observer);
        self.loc.encode(&mut e);
        e.u64(self.ts).len(self.observations.len());
        for o in &self.observations {
            e.key(&o.subject).u32(o.position).bool(o.anomalous_stop);
        }
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let observer = d.key()?;
        let loc = Location::decode(&mut d)?;
        let ts = d.u64()?;
        let n = d.count()?;
        let mut observations = Vec::with_capacity(n);
        for _ in 0..n {
            observations.push(Observation {
                subject: d.key()?,
                position: d.u32()?,
                anomalous_stop: d.bool()?,
            });
        }
        d.finish()?;
        Ok(Self {
            observer,
            loc,
            ts,
            observations,
        })
    }
}
