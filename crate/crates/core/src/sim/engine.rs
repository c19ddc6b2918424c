//! The discrete-event run loop.
//!
//! Events dequeue in `(time, insertion sequence)` order. Per-hop latency is
//! derived from a hash of the run seed, the message and the endpoints, so a
//! message's delay does not depend on what else happened in the run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::adjudication::{
    classify_liability, owner_read_audit, ComplementaryInputs, DeviceState, LiabilityDecision,
};
use crate::adversary::{
    attacks_csv, AttackError, AttackKind, AttackScript, AttackVariant, DetectionMechanism, DetectionReport,
};
use crate::crypto::{encrypt_for, hash_parts, Digest, PublicKey};
use crate::dp::{
    unicast_complimentary_evidence, BlockContent, CaseAnalysis, CheckKind, DpCluster, DpLedger, DpValidator,
    FirstLevelDecision,
};
use crate::dump::{dump_dp, dump_op};
use crate::identity::{
    CertificateAuthority, Directory, EntityKind, IdentityError, Participant, Partition, PseudonymSet,
};
use crate::offchain::{Content, OffchainStore, StorageProof};
use crate::op::{
    AgreementRule, DivergenceCause, EscalationSnapshot, OpCluster, OpLedger, OpValidator, Recovery, Resolution,
    RoundOutcome, RoundReport,
};
use crate::time::{from_secs, to_secs, MILLIS, MINUTE, SECOND};
use crate::tx::{
    make_et, make_ese, make_net, make_pet, make_ret, countersign_net, countersign_net_with, Body,
    CollisionRecord, EventRecord, ExecutionStatus, InstructionKind, Location, Observation, PendingNet,
    RetBody, Transaction, TransactionKind, UpdateMeta, WitnessCiphertext, WitnessRecord,
};

use super::config::{ConfigError, CostModel, Mode, SimConfig};
use super::metrics::{metrics_csv, Metric, MetricsRecord};
use super::scenario::{firmware_hash, Action, CollisionSpec, Expectation, Scenario};
use super::workload::{generate_workload, stream_rng, WorkloadEvent, WorkloadKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("scenario: {0}")]
    Scenario(String),
}

/// What a message carries, for partition gating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Tx(TransactionKind),
    NetRequest,
    NetAck,
    OpBlock,
    DpBlock,
    Escalation,
    Resolution,
    Response,
}

impl Payload {
    pub fn name(self) -> &'static str {
        match self {
            Payload::Tx(k) => k.name(),
            Payload::NetRequest => "net_request",
            Payload::NetAck => "net_ack",
            Payload::OpBlock => "op_block",
            Payload::DpBlock => "dp_block",
            Payload::Escalation => "escalation",
            Payload::Resolution => "resolution",
            Payload::Response => "response",
        }
    }

    /// Whether `to` may receive this payload. Escalations, resolutions and
    /// unicast responses are the only edges that cross partitions.
    pub fn allowed(self, to: &Participant) -> bool {
        let validates = |p| to.role_in(p).is_some_and(|r| r.validates());
        match self {
            Payload::Tx(k) => validates(k.partition()),
            Payload::NetRequest => to.kind == EntityKind::Vehicle && to.is_member(Partition::Op),
            Payload::NetAck | Payload::Resolution => validates(Partition::Op),
            Payload::OpBlock => to.is_member(Partition::Op),
            Payload::DpBlock => to.is_member(Partition::Dp),
            Payload::Escalation => validates(Partition::Dp),
            Payload::Response => to.role_in(Partition::Dp).is_some_and(|r| r.proposes()),
        }
    }
}

struct Node {
    participant: Participant,
    pseudonyms: Option<PseudonymSet>,
    /// NETs this vehicle countersigned itself.
    acked: BTreeSet<Digest>,
    /// NETs the owner audit has already reported.
    flagged: BTreeSet<Digest>,
    inbox: BTreeMap<&'static str, usize>,
}

impl Node {
    /// Key used for vehicle evidence: the active pseudonym when there is one.
    fn evidence_keys(&self) -> &crate::crypto::KeyPair {
        self.pseudonyms.as_ref().map_or(&self.participant.keys, |p| p.active())
    }
}

enum Event {
    Action(usize),
    Workload(usize),
    Attack(usize),
    SubmitOp { from: String, tx: Box<Transaction> },
    OpRound { tx: Box<Transaction>, verify: f64, validate: f64 },
    NetRequest(usize),
    NetAck { idx: usize, tx: Box<Transaction> },
    AutoEt { cav: String, net: Digest },
    FileRet { pet: Digest, proposer: String },
    DpProcess { ret: Box<Transaction>, proposer: String, received: u64 },
    Escalated(Box<EscalationSnapshot>),
    Resolved(Box<Resolution>),
    Settle(usize),
    OwnerAudit,
}

struct NetState {
    pending: PendingNet,
    issuer: String,
    cav: String,
    auto_et: bool,
}

struct PetInfo {
    host: String,
    host_key: PublicKey,
}

struct OpenCase {
    rets: BTreeSet<Digest>,
    last: u64,
    done: bool,
}

struct AttackState {
    script: AttackScript,
    injected: Option<u64>,
    detected: Option<(DetectionMechanism, u64)>,
    /// Forged transaction or modified request, when there is one.
    forged: Option<Digest>,
    /// Evidence key of the targeted vehicle's altered or modified record.
    host: Option<PublicKey>,
    notes: Vec<String>,
}

impl AttackState {
    fn armed(&self, now: u64) -> bool {
        self.script.trigger <= now && self.injected.is_none()
    }

    fn live(&self) -> bool {
        self.injected.is_some() && self.detected.is_none()
    }
}

/// Level-1 and level-2 outcome for one case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseDecision {
    pub case_id: String,
    pub decided_at: u64,
    pub level1: FirstLevelDecision,
    pub analyses_agreed: bool,
    pub failed_checks: Vec<String>,
    pub level2: Option<LiabilityDecision>,
    pub level2_error: Option<String>,
    pub storage: Vec<(String, StorageProof)>,
}

impl CaseDecision {
    /// Liable vehicle, liability kind and liable entity.
    pub fn outcome(&self) -> (Option<String>, Option<(String, String)>) {
        (
            self.level1.liable_cav.clone(),
            self.level2
                .as_ref()
                .map(|d| (d.kind.name().to_string(), d.liable_entity.clone())),
        )
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub mode: Mode,
    pub trace: Vec<Value>,
    pub metrics: Vec<MetricsRecord>,
    pub op_ledger: OpLedger,
    pub dp_ledger: DpLedger,
    pub decisions: Vec<CaseDecision>,
    pub detections: Vec<DetectionReport>,
    pub manifest: String,
    pub violations: usize,
    /// Messages observed per node and payload.
    pub inboxes: BTreeMap<String, BTreeMap<&'static str, usize>>,
    pub expectations: Vec<(Expectation, bool)>,
}

impl RunOutput {
    pub fn trace_ndjson(&self) -> String {
        let mut out = String::new();
        for v in &self.trace {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn decisions_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.decisions).expect("decisions serialize");
        s.push('\n');
        s
    }

    /// Output files by name.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("trace.ndjson", self.trace_ndjson()),
            ("metrics.csv", metrics_csv(&self.metrics)),
            ("op_ledger.txt", dump_op(&self.op_ledger)),
            ("dp_ledger.txt", dump_dp(&self.dp_ledger)),
            ("decisions.json", self.decisions_json()),
            ("store_manifest.csv", self.manifest.clone()),
            ("attacks.csv", attacks_csv(&self.detections)),
        ]
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<Vec<(String, Digest)>> {
        std::fs::create_dir_all(dir)?;
        let mut digests = Vec::new();
        for (name, content) in self.files() {
            std::fs::write(dir.join(name), &content)?;
            digests.push((name.to_string(), crate::crypto::hash(content.as_bytes())));
        }
        Ok(digests)
    }

    pub fn expectations_met(&self) -> bool {
        self.expectations.iter().all(|(_, ok)| *ok)
    }

    pub fn metric_values(&self, kind: Option<&str>, metric: Metric) -> Vec<f64> {
        self.metrics
            .iter()
            .filter(|m| m.metric == metric && kind.is_none_or(|k| m.kind == k))
            .map(|m| m.value)
            .collect()
    }
}

pub struct Simulation {
    cfg: SimConfig,
    costs: CostModel,
    scenario: Scenario,
    duration: Option<u64>,
    ca: CertificateAuthority,
    nodes: BTreeMap<String, Node>,
    op_validators: Vec<String>,
    dp_validators: Vec<String>,
    op: OpCluster,
    dp: DpCluster,
    op_dir: Directory,
    police: Option<String>,
    store: OffchainStore,
    queue: BTreeMap<(u64, u64), Event>,
    seq: u64,
    now: u64,
    op_busy: u64,
    trace: Vec<Value>,
    metrics: Vec<MetricsRecord>,
    workload: Vec<WorkloadEvent>,
    nets: Vec<NetState>,
    net_labels: BTreeMap<String, Digest>,
    pets: BTreeMap<Digest, PetInfo>,
    videos: BTreeMap<Digest, String>,
    cases: Vec<OpenCase>,
    /// Requests belonging to decided cases. Pseudonyms are reused, so a
    /// later incident must not reopen an earlier case through its host key.
    decided: BTreeSet<Digest>,
    decisions: Vec<CaseDecision>,
    attacks: Vec<AttackState>,
    violations: usize,
}

fn kb(bytes: usize) -> f64 {
    bytes as f64 / 1024.0
}

fn short(d: &Digest) -> String {
    d.to_hex()[..12].to_string()
}

impl Simulation {
    pub fn new(cfg: SimConfig, scenario: Scenario) -> Result<Self, SimError> {
        cfg.validate()?;
        for a in &scenario.attacks {
            a.check_roles(&scenario)?;
        }
        let mut ca = CertificateAuthority::new(cfg.seed);
        let mut nodes = BTreeMap::new();
        for p in &scenario.participants {
            let participant = ca.issue_identity(&p.handle, p.kind, &p.memberships)?;
            nodes.insert(
                p.handle.clone(),
                Node {
                    participant,
                    pseudonyms: None,
                    acked: BTreeSet::new(),
                    flagged: BTreeSet::new(),
                    inbox: BTreeMap::new(),
                },
            );
        }
        let mut police = None;
        for p in &scenario.participants {
            let node = nodes.get_mut(&p.handle).expect("issued");
            match p.kind {
                EntityKind::Vehicle if p.memberships.contains(&Partition::Op) => {
                    let n = scenario.pseudonyms.get(&p.handle).copied().unwrap_or(3);
                    node.pseudonyms = Some(ca.issue_pseudonyms(&node.participant, n)?);
                }
                EntityKind::LegalAuthority => {
                    ca.register_law_enforcement(&node.participant)?;
                    police.get_or_insert_with(|| p.handle.clone());
                }
                _ => {}
            }
        }
        let op_validators: Vec<String> = scenario
            .participants
            .iter()
            .filter(|p| scenario.validates_in(&p.handle, Partition::Op))
            .map(|p| p.handle.clone())
            .collect();
        let dp_validators: Vec<String> = scenario
            .participants
            .iter()
            .filter(|p| scenario.validates_in(&p.handle, Partition::Dp))
            .map(|p| p.handle.clone())
            .collect();
        if op_validators.is_empty() || dp_validators.is_empty() {
            return Err(SimError::Scenario(
                "needs at least one validator in each partition".into(),
            ));
        }
        let op_dir = ca.directory(Partition::Op);
        let dp_dir = ca.directory(Partition::Dp);
        let op = OpCluster::new(
            op_validators
                .iter()
                .map(|h| OpValidator::new(h.clone(), op_dir.clone(), cfg.b_max))
                .collect(),
            AgreementRule::Unanimity,
        );
        let dp = DpCluster::new(
            dp_validators
                .iter()
                .map(|h| {
                    DpValidator::new(
                        h.clone(),
                        dp_dir.clone(),
                        ca.evidence_keys().clone(),
                        cfg.b_max,
                        cfg.mode.dp_content(),
                        cfg.thresholds,
                    )
                })
                .collect(),
        );
        let duration = cfg.duration.or(scenario.duration);
        let workload = if scenario.workload {
            generate_workload(
                cfg.seed,
                cfg.pet_rate,
                cfg.net_period,
                duration.unwrap_or(crate::time::DAY),
                scenario.vehicles().len(),
            )
        } else {
            Vec::new()
        };
        let attacks = scenario
            .attacks
            .iter()
            .map(|s| AttackState {
                script: s.clone(),
                injected: None,
                detected: None,
                forged: None,
                host: None,
                notes: Vec::new(),
            })
            .collect();
        let costs = cfg.effective_costs();
        Ok(Self {
            cfg,
            costs,
            scenario,
            duration,
            ca,
            nodes,
            op_validators,
            dp_validators,
            op,
            dp,
            op_dir,
            police,
            store: OffchainStore::new(),
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            op_busy: 0,
            trace: Vec::new(),
            metrics: Vec::new(),
            workload,
            nets: Vec::new(),
            net_labels: BTreeMap::new(),
            pets: BTreeMap::new(),
            videos: BTreeMap::new(),
            cases: Vec::new(),
            decided: BTreeSet::new(),
            decisions: Vec::new(),
            attacks,
            violations: 0,
        })
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.queue.insert((at, self.seq), ev);
        self.seq += 1;
    }

    fn record(&mut self, ev: &str, body: Value) {
        let mut v = json!({ "t": self.now, "ev": ev });
        if let (Value::Object(out), Value::Object(fields)) = (&mut v, body) {
            out.extend(fields);
        }
        self.trace.push(v);
    }

    fn metric(&mut self, kind: &str, metric: Metric, value: f64) {
        self.metrics.push(MetricsRecord {
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            kind: kind.to_string(),
            metric,
            value,
        });
    }

    fn participant(&self, handle: &str) -> &Participant {
        &self.nodes[handle].participant
    }

    fn latency(&self, id: &Digest, from: &str, to: &str, payload: Payload) -> u64 {
        let d = hash_parts(&[
            b"latency",
            &self.cfg.seed.to_be_bytes(),
            id.as_bytes(),
            from.as_bytes(),
            to.as_bytes(),
            payload.name().as_bytes(),
        ]);
        let x = u64::from_be_bytes(d.as_bytes()[..8].try_into().expect("8 bytes"));
        let span = self.cfg.latency_max - self.cfg.latency_min + 1;
        self.cfg.latency_min + x % span
    }

    /// Sends one message; returns its arrival time, or `None` when partition
    /// gating drops it.
    pub fn deliver(&mut self, from: &str, to: &str, payload: Payload, id: &Digest, send_at: u64) -> Option<u64> {
        let Some(node) = self.nodes.get(to) else {
            self.record("violation", json!({"from": from, "to": to, "payload": payload.name(), "reason": "unknown node"}));
            self.violations += 1;
            return None;
        };
        if !payload.allowed(&node.participant) {
            self.violations += 1;
            self.record(
                "violation",
                json!({"from": from, "to": to, "payload": payload.name(), "id": short(id)}),
            );
            return None;
        }
        let arrive = send_at + self.latency(id, from, to, payload);
        *self.nodes.get_mut(to).expect("checked").inbox.entry(payload.name()).or_default() += 1;
        self.record(
            "deliver",
            json!({"from": from, "to": to, "payload": payload.name(), "id": short(id), "arrive": arrive}),
        );
        Some(arrive)
    }

    fn broadcast(&mut self, from: &str, to: &[String], payload: Payload, id: &Digest, send_at: u64) -> Option<u64> {
        let mut latest = None;
        for h in to {
            if let Some(a) = self.deliver(from, h, payload, id, send_at) {
                latest = latest.max(Some(a));
            }
        }
        latest
    }

    fn members(&self, partition: Partition) -> Vec<String> {
        self.scenario
            .participants
            .iter()
            .filter(|p| p.memberships.contains(&partition))
            .map(|p| p.handle.clone())
            .collect()
    }

    // ---- costs -------------------------------------------------------

    fn op_verify_cost(&self, tx: &Transaction) -> f64 {
        let c = &self.costs;
        let mut t = c.policy_check + c.verify_sig * tx.signatures.len() as f64 + c.hash_per_kb * kb(tx.to_bytes().len());
        if tx.kind() == TransactionKind::Pet && self.cfg.mode != Mode::B4f {
            t += c.completeness_check;
        }
        t
    }

    fn op_validate_cost(&self) -> f64 {
        self.costs.fold + self.costs.consistency_round
    }

    fn ret_security_cost(&self, ret: &Transaction) -> f64 {
        let c = &self.costs;
        let ciphertext: usize = ret
            .as_ret()
            .map(|r| r.record.witness_ciphertexts.iter().map(|w| w.ciphertext.len()).sum())
            .unwrap_or(0);
        c.hash_per_kb * kb(ret.to_bytes().len()) + c.encrypt_per_kb * kb(ciphertext)
    }

    fn dp_request_cost(&self, ret: &Transaction) -> f64 {
        let c = &self.costs;
        let mut t = c.policy_check + c.verify_sig + self.ret_security_cost(ret) + c.dp_checks + c.consistency_round;
        if self.cfg.mode == Mode::B4f {
            t += c.storage_retrieval + c.hash_per_kb * kb(ret.to_bytes().len());
        }
        t
    }

    /// Assembling a block: fixed agreement cost plus a signature check and
    /// a hash of each request's data. Hash-only blocks also hash the IDs
    /// that go on-chain.
    fn dp_block_cost(&self, txs: &[Transaction]) -> f64 {
        let c = &self.costs;
        let per_tx: f64 = txs
            .iter()
            .map(|t| {
                let mut x = c.verify_sig + c.hash_per_kb * kb(t.to_bytes().len());
                if self.cfg.mode.dp_content() == BlockContent::HashOnly {
                    x += c.hash_per_kb * kb(32);
                }
                x
            })
            .sum();
        c.dp_block_base + per_tx + c.consistency_round
    }

    // ---- run loop ----------------------------------------------------

    pub fn run(mut self) -> RunOutput {
        for (i, a) in self.scenario.actions.clone().iter().enumerate() {
            self.schedule(a.at, Event::Action(i));
        }
        for i in 0..self.workload.len() {
            let at = self.workload[i].at
                + match self.workload[i].kind {
                    WorkloadKind::Net { vehicle, .. } => vehicle as u64 * SECOND,
                    WorkloadKind::Pet { .. } => 0,
                };
            self.schedule(at, Event::Workload(i));
        }
        for i in 0..self.attacks.len() {
            let at = self.attacks[i].script.trigger;
            self.schedule(at, Event::Attack(i));
        }
        let last_scripted = self
            .scenario
            .actions
            .iter()
            .map(|a| a.at)
            .chain(self.attacks.iter().map(|a| a.script.trigger))
            .chain(self.workload.last().map(|w| w.at))
            .max()
            .unwrap_or(0);
        let audit_horizon = self.duration.unwrap_or(last_scripted + self.cfg.owner_audit_period);
        let mut t = self.cfg.owner_audit_period;
        while t <= audit_horizon {
            self.schedule(t, Event::OwnerAudit);
            t += self.cfg.owner_audit_period;
        }

        while let Some(((at, _), ev)) = self.queue.pop_first() {
            if self.duration.is_some_and(|d| at >= d) {
                break;
            }
            self.now = at;
            self.handle(ev);
        }
        self.finish()
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Action(i) => self.action(i),
            Event::Workload(i) => self.workload_event(i),
            Event::Attack(i) => self.inject(i),
            Event::SubmitOp { from, tx } => self.submit_op(&from, *tx),
            Event::OpRound { tx, verify, validate } => self.op_round(*tx, verify, validate),
            Event::NetRequest(idx) => self.net_request(idx),
            Event::NetAck { idx, tx } => {
                let issuer = self.nets[idx].issuer.clone();
                self.submit_op(&issuer, *tx);
            }
            Event::AutoEt { cav, net } => {
                let et = make_et(self.participant(&cav), net, ExecutionStatus::Success, self.now);
                self.submit_op(&cav, et);
            }
            Event::FileRet { pet, proposer } => self.file_ret(pet, &proposer),
            Event::DpProcess { ret, proposer, received } => self.dp_process(*ret, &proposer, received),
            Event::Escalated(snapshot) => self.escalated(*snapshot),
            Event::Resolved(resolution) => self.resolved(*resolution),
            Event::Settle(idx) => self.settle(idx),
            Event::OwnerAudit => self.owner_audit(),
        }
    }

    fn action(&mut self, i: usize) {
        let action = self.scenario.actions[i].action.clone();
        match action {
            Action::Net {
                label,
                issuer,
                cav,
                kind,
                subsystem,
                firmware,
            } => {
                let meta = UpdateMeta {
                    instruction_kind: kind,
                    update_file_hash: firmware.as_deref().map(firmware_hash),
                    subsystem,
                    metadata: firmware.unwrap_or_default(),
                    file_pointer: format!("cloud://{issuer}/{label}"),
                };
                if let Some(t_id) = self.issue_net(&issuer, &cav, meta, false) {
                    self.net_labels.insert(label, t_id);
                }
            }
            Action::Et { cav, net, status } => {
                let Some(net_ref) = self.net_labels.get(&net).copied() else {
                    self.record("error", json!({"what": "et for unissued net", "net": net}));
                    return;
                };
                let et = make_et(self.participant(&cav), net_ref, status, self.now);
                self.submit_op(&cav, et);
            }
            Action::Ese { cav, event, location } => {
                let ese = make_ese(self.nodes[&cav].evidence_keys(), event, location, self.now);
                self.submit_op(&cav, ese);
            }
            Action::Collision(spec) => self.collision(&spec),
            Action::Misroute { from, to } => {
                let loc = Location::from_degrees(super::scenario::DEFAULT_LOCATION.0, super::scenario::DEFAULT_LOCATION.1);
                let ese = make_ese(
                    self.nodes[&from].evidence_keys(),
                    crate::tx::SafetyEvent::HardBrake,
                    loc,
                    self.now,
                );
                self.deliver(&from, &to, Payload::Tx(TransactionKind::Ese), &ese.t_id, self.now);
            }
        }
    }

    fn workload_event(&mut self, i: usize) {
        let vehicles = self.scenario.vehicles();
        match self.workload[i].kind.clone() {
            WorkloadKind::Pet { vehicle, location } => {
                let host = vehicles[vehicle].clone();
                let mut rng = stream_rng(self.cfg.seed, &format!("workload-pet/{i}"));
                let mut others: Vec<usize> = (0..vehicles.len()).filter(|v| *v != vehicle).collect();
                let mut witnesses = Vec::new();
                while witnesses.len() < 2 && !others.is_empty() {
                    let k = rand::Rng::gen_range(&mut rng, 0..others.len());
                    witnesses.push(vehicles[others.swap_remove(k)].clone());
                }
                self.rotate(&host);
                let host_key = self.nodes[&host].evidence_keys().public();
                let own = EventRecord {
                    position: 0,
                    speed_cm_s: 0,
                    anomalous_stop: false,
                    fault_subsystem: None,
                };
                let mut ciphertexts = Vec::new();
                for (j, w) in witnesses.iter().enumerate() {
                    let record = WitnessRecord {
                        observer: self.nodes[w].evidence_keys().public(),
                        loc: location.offset_north(15.0 * (j as f64 + 1.0)),
                        ts: self.now,
                        observations: vec![Observation {
                            subject: host_key,
                            position: 0,
                            anomalous_stop: false,
                        }],
                    };
                    ciphertexts.push(WitnessCiphertext {
                        witness: record.observer,
                        ciphertext: encrypt_for(&self.ca.evidence_public(), &record.to_bytes(), &mut rng),
                    });
                }
                let label = format!("w{i}");
                self.submit_pet(&host, &label, location, own, ciphertexts, self.now);
            }
            WorkloadKind::Net { vehicle, round } => {
                let cav = vehicles[vehicle].clone();
                let issuer = self
                    .scenario
                    .manufacturers
                    .get(&cav)
                    .cloned()
                    .or_else(|| self.scenario.of_kind(EntityKind::Manufacturer).into_iter().next());
                let Some(issuer) = issuer else { return };
                let fw = format!("fw-{round}");
                let meta = UpdateMeta {
                    instruction_kind: InstructionKind::SoftwareUpdate,
                    update_file_hash: Some(firmware_hash(&fw)),
                    subsystem: "firmware".into(),
                    metadata: fw.clone(),
                    file_pointer: format!("cloud://{issuer}/{fw}"),
                };
                self.issue_net(&issuer, &cav, meta, true);
            }
        }
    }

    fn rotate(&mut self, cav: &str) {
        if let Some(p) = self.nodes.get_mut(cav).and_then(|n| n.pseudonyms.as_mut()) {
            p.rotate();
        }
    }

    /// Stores the video off-chain and schedules the PET's submission.
    fn submit_pet(
        &mut self,
        host: &str,
        label: &str,
        loc: Location,
        own: EventRecord,
        witnesses: Vec<WitnessCiphertext>,
        send_at: u64,
    ) {
        let seed = u64::from_be_bytes(
            hash_parts(&[b"video", &self.cfg.seed.to_be_bytes(), label.as_bytes(), host.as_bytes()]).as_bytes()[..8]
                .try_into()
                .expect("8 bytes"),
        );
        let owner_key = self.participant(host).public();
        let obj = self.store.put(host, owner_key, Content::synthetic(self.cfg.video_size, seed));
        for v in self.op_validators.clone() {
            let k = self.participant(&v).public();
            self.store.grant(&obj.handle, &owner_key, k).expect("owner grants");
        }
        let record = CollisionRecord::new(loc, self.now, own.to_bytes(), obj.content_hash, witnesses);
        let keys = self.nodes[host].evidence_keys();
        let host_key = keys.public();
        let pet = make_pet(keys, record, send_at).expect("record is consistent and not from the future");
        self.videos.insert(obj.content_hash, obj.handle.clone());
        self.pets.insert(
            pet.t_id,
            PetInfo {
                host: host.to_string(),
                host_key,
            },
        );
        self.record(
            "pet_created",
            json!({"host": host, "id": short(&pet.t_id), "video": obj.handle, "witnesses": pet.collision_record().map_or(0, |r| r.witness_ciphertexts.len())}),
        );
        self.schedule(
            send_at,
            Event::SubmitOp {
                from: host.to_string(),
                tx: Box::new(pet),
            },
        );
    }

    fn collision(&mut self, spec: &CollisionSpec) {
        let ts = self.now;
        let mut falsified = BTreeSet::new();
        let mut strip = false;
        for a in &mut self.attacks {
            let s = &a.script;
            if s.kind == AttackKind::SensorAlteration
                && a.armed(ts)
                && s.cav.as_ref().is_some_and(|c| spec.vehicles.contains(c))
            {
                a.injected = Some(ts);
                falsified.insert(s.cav.clone().expect("checked"));
                strip |= s.variant == AttackVariant::NoWitnesses;
            }
        }
        for v in &spec.vehicles {
            self.rotate(v);
        }
        let keys: Vec<PublicKey> = spec
            .vehicles
            .iter()
            .map(|v| self.nodes[v].evidence_keys().public())
            .collect();
        for a in &mut self.attacks {
            if a.script.kind == AttackKind::SensorAlteration && a.injected == Some(ts) {
                let i = spec.vehicles.iter().position(|v| Some(v) == a.script.cav.as_ref());
                a.host = i.map(|i| keys[i]);
            }
        }
        let locs: Vec<Location> = (0..spec.vehicles.len())
            .map(|i| spec.location.offset_north(-8.0 * i as f64))
            .collect();
        let stop = spec.stop.as_ref().and_then(|s| spec.vehicles.iter().position(|v| v == s));
        let mut rng = stream_rng(self.cfg.seed, &format!("collision/{}", spec.label));
        for (i, v) in spec.vehicles.iter().enumerate() {
            let stopped = stop == Some(i);
            let mut own = EventRecord {
                position: i as u32,
                speed_cm_s: if stopped { 0 } else { 450 },
                anomalous_stop: stopped,
                fault_subsystem: if stopped { spec.fault.clone() } else { None },
            };
            if falsified.contains(v) {
                own.speed_cm_s = 900;
                own.anomalous_stop = false;
                own.fault_subsystem = None;
            }
            let mut witnesses = Vec::new();
            if spec.witnesses && !strip {
                for (o, observer) in keys.iter().enumerate().filter(|(o, _)| *o != i) {
                    let record = WitnessRecord {
                        observer: *observer,
                        loc: locs[o],
                        ts,
                        observations: (0..keys.len())
                            .filter(|p| *p != o)
                            .map(|p| Observation {
                                subject: keys[p],
                                position: p as u32,
                                anomalous_stop: stop == Some(p),
                            })
                            .collect(),
                    };
                    witnesses.push(WitnessCiphertext {
                        witness: *observer,
                        ciphertext: encrypt_for(&self.ca.evidence_public(), &record.to_bytes(), &mut rng),
                    });
                }
            }
            let send_at = ts + (i as u64 + 1) * 10 * MILLIS;
            self.submit_pet(v, &spec.label, locs[i], own, witnesses, send_at);
        }
        self.record(
            "collision",
            json!({"label": spec.label, "vehicles": spec.vehicles, "stop": spec.stop, "witnesses": spec.witnesses && !strip}),
        );
    }

    /// Issuer signs a NET and asks the target vehicle to countersign.
    fn issue_net(&mut self, issuer: &str, cav: &str, meta: UpdateMeta, auto_et: bool) -> Option<Digest> {
        let target = self.participant(cav).public();
        let pending = match make_net(self.participant(issuer), target, meta, self.now) {
            Ok(p) => p,
            Err(e) => {
                self.record("error", json!({"what": "make_net", "issuer": issuer, "error": e.to_string()}));
                return None;
            }
        };
        let t_id = pending.t_id;
        let idx = self.nets.len();
        self.nets.push(NetState {
            pending,
            issuer: issuer.to_string(),
            cav: cav.to_string(),
            auto_et,
        });
        let send_at = self.now + from_secs(self.costs.sign);
        if let Some(a) = self.deliver(issuer, cav, Payload::NetRequest, &t_id, send_at) {
            self.schedule(a, Event::NetRequest(idx));
        }
        Some(t_id)
    }

    fn net_request(&mut self, idx: usize) {
        let cav = self.nets[idx].cav.clone();
        let issuer = self.nets[idx].issuer.clone();
        let node = self.nodes.get_mut(&cav).expect("vehicle exists");
        let tx = match countersign_net(&node.participant, &mut self.nets[idx].pending) {
            Ok(tx) => tx,
            Err(e) => {
                self.record("error", json!({"what": "countersign", "error": e.to_string()}));
                return;
            }
        };
        node.acked.insert(tx.t_id);
        let send_at = self.now + from_secs(self.costs.sign);
        if let Some(a) = self.deliver(&cav, &issuer, Payload::NetAck, &tx.t_id, send_at) {
            self.schedule(a, Event::NetAck { idx, tx: Box::new(tx) });
        }
    }

    /// Broadcasts to the operational validators and queues the round.
    /// Rounds run one at a time in submission order.
    fn submit_op(&mut self, from: &str, tx: Transaction) {
        let validators = self.op_validators.clone();
        let Some(latest) = self.broadcast(from, &validators, Payload::Tx(tx.kind()), &tx.t_id, self.now) else {
            return;
        };
        let verify = self.op_verify_cost(&tx);
        let validate = self.op_validate_cost();
        let done = latest.max(self.op_busy) + from_secs(verify + validate);
        self.op_busy = done;
        self.schedule(
            done,
            Event::OpRound {
                tx: Box::new(tx),
                verify,
                validate,
            },
        );
    }

    fn op_round(&mut self, tx: Transaction, verify: f64, validate: f64) {
        let kind = tx.kind().name();
        self.metric(kind, Metric::VerificationTime, verify);
        self.metric(kind, Metric::ValidationTime, validate);
        match self.op.submit(&tx) {
            None => self.record("op_backlog", json!({"id": short(&tx.t_id), "kind": kind})),
            Some(report) => self.handle_round(report, Some(&tx)),
        }
    }

    fn handle_round(&mut self, report: RoundReport, tx: Option<&Transaction>) {
        let RoundReport {
            round,
            accepted,
            recovery,
            sealed,
            escalation,
        } = report;
        if let Some(tx) = tx {
            let verdicts: BTreeMap<&String, String> = round
                .verdicts
                .iter()
                .map(|(h, v)| (h, format!("{v:?}").to_lowercase()))
                .collect();
            self.record(
                "op_round",
                json!({
                    "id": short(&tx.t_id),
                    "kind": tx.kind().name(),
                    "outcome": if round.outcome == RoundOutcome::Consistent { "consistent" } else { "divergent" },
                    "accepted": accepted,
                    "verdicts": verdicts,
                }),
            );
        }
        if let Some(recovery) = &recovery {
            let (escalated, findings) = match recovery {
                Recovery::Recovered { findings } => (false, findings),
                Recovery::Escalated { findings } => (true, findings),
            };
            for f in findings {
                self.record(
                    "tamper_finding",
                    json!({
                        "validator": f.validator,
                        "cause": f.cause,
                        "missing": f.missing.iter().map(short).collect::<Vec<_>>(),
                        "undelivered": f.undelivered.iter().map(short).collect::<Vec<_>>(),
                        "escalated": escalated,
                    }),
                );
                let mechanism = match f.cause {
                    DivergenceCause::DynamicBlockId => DetectionMechanism::DynamicBlockId,
                    DivergenceCause::TAltBidTracking => DetectionMechanism::TAltBidTracking,
                };
                let now = self.now;
                for a in &mut self.attacks {
                    let op_side = matches!(
                        (a.script.kind, a.script.variant),
                        (AttackKind::TxDeletion, _)
                            | (AttackKind::SignFakeTx, AttackVariant::BackDated)
                            | (AttackKind::OpCollusionFalseTx, _)
                    );
                    if op_side && a.live() && a.script.actors.contains(&f.validator) {
                        a.detected = Some((mechanism, now));
                    }
                }
            }
        }
        if let Some(header) = sealed {
            self.record(
                "op_seal",
                json!({"seq": header.seq_num, "block_id": short(&header.block_id)}),
            );
            let members = self.members(Partition::Op);
            let from = self.op_validators[0].clone();
            self.broadcast(&from, &members, Payload::OpBlock, &header.block_id, self.now);
        }
        if let Some(tx) = tx.filter(|_| accepted) {
            match tx.kind() {
                TransactionKind::Pet => {
                    if let Some(info) = self.pets.get(&tx.t_id) {
                        let mut proposers = Vec::new();
                        proposers.extend(self.scenario.insurers.get(&info.host).cloned());
                        proposers.extend(self.scenario.manufacturers.get(&info.host).cloned());
                        for p in proposers {
                            self.schedule(
                                self.now + self.cfg.request_delay,
                                Event::FileRet {
                                    pet: tx.t_id,
                                    proposer: p,
                                },
                            );
                        }
                    }
                }
                TransactionKind::Net => {
                    if let Some(n) = self.nets.iter().find(|n| n.pending.t_id == tx.t_id && n.auto_et) {
                        let cav = n.cav.clone();
                        self.schedule(self.now + MINUTE, Event::AutoEt { cav, net: tx.t_id });
                    }
                }
                _ => {}
            }
        }
        if let Some(snapshot) = escalation {
            self.record(
                "escalate",
                json!({"seq": snapshot.seq_num, "validators": snapshot.validators, "stream": snapshot.stream.len()}),
            );
            let from = self.op_validators[0].clone();
            let to = self.dp_validators.clone();
            let id = hash_parts(&[b"escalation", &snapshot.seq_num.to_be_bytes(), &self.now.to_be_bytes()]);
            if let Some(a) = self.broadcast(&from, &to, Payload::Escalation, &id, self.now) {
                let cost = self.costs.consistency_round + self.costs.fold * snapshot.stream.len() as f64;
                self.schedule(a + from_secs(cost), Event::Escalated(Box::new(snapshot)));
            }
        }
    }

    fn escalated(&mut self, snapshot: EscalationSnapshot) {
        let resolution = crate::dp::resolve_escalation(&snapshot);
        self.record(
            "resolution",
            json!({
                "seq": resolution.seq_num,
                "block_id": short(&resolution.header.block_id),
                "implicated": resolution.implicated,
                "warnings": resolution.warnings,
            }),
        );
        for a in &mut self.attacks {
            if a.script.kind == AttackKind::OpCollusionFalseTx && a.injected.is_some() {
                let names: Vec<&str> = resolution.implicated.iter().map(|(h, _)| h.as_str()).collect();
                a.notes.push(format!("escalated; implicated {}", names.join("+")));
            }
        }
        let from = self.dp_validators[0].clone();
        let to = self.op_validators.clone();
        if let Some(a) = self.broadcast(&from, &to, Payload::Resolution, &resolution.header.block_id, self.now) {
            self.schedule(a, Event::Resolved(Box::new(resolution)));
        }
    }

    fn resolved(&mut self, resolution: Resolution) {
        self.record("resolution_applied", json!({"seq": resolution.seq_num}));
        for report in self.op.apply_resolution(&resolution) {
            let tx = self.op.reference_ledger().find(&report.round.tx_ref).cloned();
            self.handle_round(report, tx.as_ref());
        }
    }

    /// A DP proposer turns a validated PET into a request.
    fn file_ret(&mut self, pet_id: Digest, proposer: &str) {
        let Some(info) = self.pets.get(&pet_id) else { return };
        let host = info.host.clone();
        let host_key = info.host_key;
        let now = self.now;
        let is_insurer = self.scenario.insurers.get(&host).is_some_and(|i| i == proposer);
        let modify = self.attacks.iter().position(|a| {
            a.script.kind == AttackKind::DpCollusionModify
                && a.armed(now)
                && a.script.cav.as_deref() == Some(host.as_str())
        });
        if let Some(i) = modify {
            if is_insurer && self.attacks[i].script.variant == AttackVariant::SoleSource {
                self.record("ret_suppressed", json!({"proposer": proposer, "pet": short(&pet_id)}));
                return;
            }
        }
        let Some(pet) = self.op.reference_ledger().find(&pet_id).cloned() else {
            self.record("error", json!({"what": "pet not on ledger", "pet": short(&pet_id)}));
            return;
        };
        let view = self.op.validator(proposer).map(|v| v.ledger()).unwrap_or(self.op.reference_ledger());
        let lookup = |d: &Digest| view.contains(d);
        let mut ret = match make_ret(self.participant(proposer), &pet, &lookup, now) {
            Ok(r) => r,
            Err(e) => {
                self.record("error", json!({"what": "make_ret", "error": e.to_string()}));
                return;
            }
        };
        if let Some(i) = modify.filter(|i| self.attacks[*i].script.actors.iter().any(|a| a == proposer)) {
            let variant = self.attacks[i].script.variant;
            let mut record = ret.as_ret().expect("ret").record.clone();
            match variant {
                AttackVariant::Location => record.loc = record.loc.offset_north(300.0),
                AttackVariant::Timestamp => record.ts += 3 * self.cfg.thresholds.delta_t,
                _ => {
                    if let Ok(mut own) = EventRecord::from_bytes(&record.ve_px) {
                        own.anomalous_stop = false;
                        own.fault_subsystem = None;
                        own.speed_cm_s = 900;
                        record.ve_px = own.to_bytes();
                    }
                }
            }
            record.rehash();
            let p = self.participant(proposer);
            ret = Transaction::single_signed(
                Body::Ret(RetBody {
                    proposer: p.public(),
                    host: host_key,
                    record,
                }),
                &p.keys,
                now,
            );
            let a = &mut self.attacks[i];
            a.injected = Some(now);
            a.forged = Some(ret.t_id);
            a.host = Some(host_key);
            self.record(
                "attack_injected",
                json!({"kind": AttackKind::DpCollusionModify, "variant": variant, "ret": short(&ret.t_id)}),
            );
        }
        self.submit_dp(proposer, ret);
    }

    fn submit_dp(&mut self, proposer: &str, ret: Transaction) {
        let validators = self.dp_validators.clone();
        let Some(received) = self.broadcast(proposer, &validators, Payload::Tx(TransactionKind::Ret), &ret.t_id, self.now)
        else {
            return;
        };
        let cost = self.dp_request_cost(&ret);
        self.schedule(
            received + from_secs(cost),
            Event::DpProcess {
                ret: Box::new(ret),
                proposer: proposer.to_string(),
                received,
            },
        );
    }

    fn dp_process(&mut self, ret: Transaction, proposer: &str, received: u64) {
        let report = self.dp.submit(&ret);
        self.record(
            "dp_submit",
            json!({"id": short(&ret.t_id), "proposer": proposer, "rejections": report.rejections, "divergent": report.divergent}),
        );
        if let Some(header) = report.sealed {
            let block = self.dp.reference_ledger().sealed().last().expect("just sealed").txs.clone();
            let cost = self.dp_block_cost(&block);
            self.metric("block", Metric::BlockProcessingTime, cost);
            self.record(
                "dp_block",
                json!({"seq": header.seq_num, "block_id": short(&header.block_id), "txs": block.len(), "processing_s": cost}),
            );
            let members = self.members(Partition::Dp);
            let from = self.dp_validators[0].clone();
            self.broadcast(&from, &members, Payload::DpBlock, &header.block_id, self.now);
        }
        if !report.rejections.is_empty() {
            return;
        }
        let Some(own) = ret.as_ret() else { return };
        let window = 2 * self.cfg.thresholds.delta_t;
        let rets: Vec<Transaction> = self
            .dp
            .reference_ledger()
            .transactions()
            .filter(|t| !self.decided.contains(&t.t_id))
            .filter(|t| {
                t.as_ret()
                    .is_some_and(|r| r.host == own.host || r.record.ts.abs_diff(own.record.ts) <= window)
            })
            .cloned()
            .collect();
        let (analyses, agreed) = self.dp.decide(&rets);
        let Some(analysis) = analyses.into_iter().find(|a| a.bundle.rets.iter().any(|t| t.t_id == ret.t_id)) else {
            return;
        };
        let failed: Vec<String> = analysis
            .report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}:{}", c.kind, c.subject))
            .collect();
        self.record(
            "dp_case",
            json!({"case": analysis.decision.case_id, "rets": analysis.bundle.rets.len(), "agreed": agreed, "failed": failed}),
        );
        self.detect_dp(&analysis);

        let proposer_key = self.participant(proposer).public();
        if let Ok(resp) = unicast_complimentary_evidence(&analysis.decision, &analysis.bundle, &proposer_key) {
            let id = crate::crypto::hash(&resp.payload_bytes());
            let from = self.dp_validators[0].clone();
            if let Some(arrive) = self.deliver(&from, proposer, Payload::Response, &id, self.now) {
                let overhead = to_secs(arrive - received);
                self.metric("RET", Metric::TimeOverhead, overhead);
            }
        }

        let ids: BTreeSet<Digest> = analysis.bundle.rets.iter().map(|t| t.t_id).collect();
        let now = self.now;
        let idx = match self.cases.iter().position(|c| !c.done && !c.rets.is_disjoint(&ids)) {
            Some(i) => {
                self.cases[i].rets.extend(ids);
                self.cases[i].last = now;
                i
            }
            None => {
                self.cases.push(OpenCase {
                    rets: ids,
                    last: now,
                    done: false,
                });
                self.cases.len() - 1
            }
        };
        self.schedule(now + self.cfg.settle, Event::Settle(idx));
    }

    fn detect_dp(&mut self, analysis: &CaseAnalysis) {
        let now = self.now;
        let failed = analysis.report.failed_kinds();
        let hosts = analysis.bundle.hosts();
        let spatiotemporal = failed.contains(&CheckKind::Temporal)
            || failed.contains(&CheckKind::Spatial)
            || failed.contains(&CheckKind::Perception);
        for a in &mut self.attacks {
            // a cross-proposer mismatch supersedes an earlier spatiotemporal flag
            let upgradable = a.script.kind == AttackKind::DpCollusionModify
                && matches!(a.detected, Some((DetectionMechanism::SpatiotemporalConsistency, _)));
            if a.injected.is_none() || (a.detected.is_some() && !upgradable) {
                continue;
            }
            let Some(host) = a.host else { continue };
            match a.script.kind {
                AttackKind::DpCollusionModify => {
                    let Some(forged) = a.forged else { continue };
                    if !analysis.bundle.rets.iter().any(|t| t.t_id == forged) {
                        continue;
                    }
                    let subject = format!("host:{}", host.short());
                    let cross = analysis
                        .report
                        .checks
                        .iter()
                        .any(|c| !c.passed && c.kind == CheckKind::CrossProposerHash && c.subject == subject);
                    if cross {
                        a.detected = Some((DetectionMechanism::CrossProposerHash, now));
                    } else if spatiotemporal && a.detected.is_none() {
                        a.detected = Some((DetectionMechanism::SpatiotemporalConsistency, now));
                    }
                }
                AttackKind::SensorAlteration if hosts.contains(&host) && spatiotemporal => {
                    a.detected = Some((DetectionMechanism::SpatiotemporalConsistency, now));
                }
                _ => {}
            }
        }
    }

    fn settle(&mut self, idx: usize) {
        let case = &self.cases[idx];
        if case.done || self.now < case.last + self.cfg.settle {
            return;
        }
        let ids = case.rets.clone();
        self.cases[idx].done = true;
        self.decided.extend(ids.iter().copied());
        let rets: Vec<Transaction> = self
            .dp
            .reference_ledger()
            .transactions()
            .filter(|t| ids.contains(&t.t_id))
            .cloned()
            .collect();
        let (analyses, agreed) = self.dp.decide(&rets);
        for analysis in analyses {
            self.finalize(analysis, agreed);
        }
    }

    /// Level 1 with pseudonym resolution, storage proofs, then level 2 on
    /// the requester's view of the operational ledger.
    fn finalize(&mut self, analysis: CaseAnalysis, agreed: bool) {
        let mut level1 = analysis.decision.clone();
        if let (Some(key), Some(police)) = (level1.liable_key, self.police.clone()) {
            let requester = self.nodes[&police].participant.clone();
            match self.ca.resolve_pseudonym(&requester, &key) {
                Ok(h) => level1.liable_cav = Some(h),
                Err(e) => self.record("error", json!({"what": "resolve_pseudonym", "error": e.to_string()})),
            }
        }
        let mut storage = Vec::new();
        for t in &analysis.bundle.rets {
            let Some(r) = t.as_ret() else { continue };
            let handle = self.videos.get(&r.record.ts_data).cloned();
            let proof = match &handle {
                Some(h) => self.store.proof_of_storage(h, &r.record.ts_data),
                None => StorageProof::Unavailable,
            };
            let entry = (handle.unwrap_or_else(|| short(&r.record.ts_data)), proof);
            if !storage.contains(&entry) {
                storage.push(entry);
            }
        }
        let (level2, level2_error) = match level1.liable_cav.clone() {
            None => (None, Some("no liable vehicle identified".to_string())),
            Some(cav) => {
                let inputs = ComplementaryInputs {
                    devices: self
                        .scenario
                        .devices
                        .iter()
                        .filter(|d| d.cav == cav)
                        .map(|d| {
                            (
                                d.subsystem.clone(),
                                DeviceState {
                                    device_id: format!("{cav}/{}", d.subsystem),
                                    file_hash: firmware_hash(&d.firmware),
                                    install_ts: d.install_ts,
                                },
                            )
                        })
                        .collect(),
                    manufacturer: self.scenario.manufacturers.get(&cav).cloned(),
                };
                let requester = analysis
                    .bundle
                    .rets
                    .first()
                    .and_then(|t| t.as_ret())
                    .and_then(|r| self.op_dir.handle_of(&r.proposer).map(str::to_string));
                let ledger = requester
                    .and_then(|h| self.op.validator(&h))
                    .map(|v| v.ledger())
                    .unwrap_or(self.op.reference_ledger());
                match classify_liability(ledger, &self.op_dir, &level1, &inputs, &self.cfg.policy) {
                    Ok(d) => (Some(d), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            }
        };
        let decision = CaseDecision {
            case_id: level1.case_id.clone(),
            decided_at: self.now,
            level1,
            analyses_agreed: agreed,
            failed_checks: analysis
                .report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{}:{}", c.kind, c.subject))
                .collect(),
            level2,
            level2_error,
            storage,
        };
        self.record(
            "decision",
            json!({
                "case": decision.case_id,
                "rule": decision.level1.rule,
                "liable_cav": decision.level1.liable_cav,
                "kind": decision.level2.as_ref().map(|d| d.kind),
                "liable_entity": decision.level2.as_ref().map(|d| d.liable_entity.clone()),
                "error": decision.level2_error,
            }),
        );
        self.decisions.push(decision);
    }

    fn owner_audit(&mut self) {
        let now = self.now;
        for v in self.scenario.vehicles() {
            let node = &self.nodes[&v];
            let key = node.participant.public();
            let fresh: Vec<Digest> = owner_read_audit(self.op.reference_ledger(), &key, &node.acked)
                .into_iter()
                .filter(|d| !node.flagged.contains(d))
                .collect();
            if fresh.is_empty() {
                continue;
            }
            self.nodes.get_mut(&v).expect("exists").flagged.extend(fresh.iter().copied());
            self.record(
                "owner_audit_flag",
                json!({"cav": v, "nets": fresh.iter().map(short).collect::<Vec<_>>()}),
            );
            for a in &mut self.attacks {
                if a.live() && a.script.kind == AttackKind::SignFakeTx && a.forged.is_some_and(|f| fresh.contains(&f)) {
                    a.detected = Some((DetectionMechanism::OwnerReadAudit, now));
                }
            }
        }
    }

    // ---- attacks -----------------------------------------------------

    fn forged_net(&mut self, issuer: &str, cav: &str, issued_at: u64) -> Option<Transaction> {
        let meta = UpdateMeta {
            instruction_kind: InstructionKind::SoftwareUpdate,
            update_file_hash: Some(firmware_hash("forged")),
            subsystem: self
                .scenario
                .devices
                .iter()
                .find(|d| d.cav == cav)
                .map_or("firmware".to_string(), |d| d.subsystem.clone()),
            metadata: "forged".into(),
            file_pointer: format!("cloud://{issuer}/forged"),
        };
        let target = self.participant(cav).public();
        let mut pending = make_net(self.participant(issuer), target, meta, issued_at).ok()?;
        // the scenario hands the attacker the vehicle's key
        countersign_net_with(&self.participant(cav).keys.clone(), &mut pending).ok()
    }

    fn inject(&mut self, i: usize) {
        let script = self.attacks[i].script.clone();
        let cav = script.cav.clone().expect("role check requires cav");
        let now = self.now;
        let mut injected = true;
        match (script.kind, script.variant) {
            (AttackKind::TxDeletion, _) => {
                let target = self
                    .pets
                    .iter()
                    .filter(|(_, p)| p.host == cav)
                    .map(|(id, _)| *id)
                    .rfind(|id| self.op.reference_ledger().contains(id));
                let rogue = &script.actors[0];
                let removed = target.and_then(|t| {
                    self.op
                        .validator_mut(rogue)
                        .and_then(|v| v.ledger_mut().tamper_remove(&t))
                });
                match removed {
                    Some(tx) => self.attacks[i].forged = Some(tx.t_id),
                    None => {
                        injected = false;
                        self.attacks[i].notes.push("target not in the dynamic block; no-op".into());
                        self.record("warning", json!({"what": "tx_deletion target not in dynamic block", "cav": cav}));
                    }
                }
            }
            (AttackKind::SignFakeTx, variant) => {
                let rogue = script.actors[0].clone();
                let back_dated = variant == AttackVariant::BackDated;
                let issued_at = if back_dated {
                    now.saturating_sub(self.cfg.policy.grace + crate::time::DAY)
                } else {
                    now
                };
                match self.forged_net(&rogue, &cav, issued_at) {
                    Some(tx) => {
                        self.attacks[i].forged = Some(tx.t_id);
                        if back_dated {
                            if let Some(v) = self.op.validator_mut(&rogue) {
                                v.ledger_mut().tamper_append(tx);
                            }
                        } else {
                            self.submit_op(&rogue, tx);
                        }
                    }
                    None => injected = false,
                }
            }
            (AttackKind::OpCollusionFalseTx, _) => match self.forged_net(&script.actors[0], &cav, now) {
                Some(tx) => {
                    self.attacks[i].forged = Some(tx.t_id);
                    for c in &script.actors {
                        if let Some(v) = self.op.validator_mut(c) {
                            v.ledger_mut().tamper_append(tx.clone());
                            v.insist_on(tx.clone());
                        }
                    }
                }
                None => injected = false,
            },
            // armed now, applied when the targeted data is produced
            (AttackKind::DpCollusionModify | AttackKind::SensorAlteration, _) => return,
        }
        if injected {
            self.attacks[i].injected = Some(now);
            self.record(
                "attack_injected",
                json!({"kind": script.kind, "variant": script.variant, "actors": script.actors, "forged": self.attacks[i].forged.as_ref().map(short)}),
            );
        }
    }

    fn finish(mut self) -> RunOutput {
        let mut detections = Vec::new();
        for a in &self.attacks {
            let (detected, mechanism, time) = match a.detected {
                Some((m, t)) => (true, m, a.injected.map(|i| to_secs(t - i))),
                None => (false, DetectionMechanism::None, None),
            };
            let mut notes = a.notes.clone();
            if a.injected.is_none() {
                notes.push("never injected".into());
            } else if a.script.variant == AttackVariant::SoleSource {
                notes.push("sole request source: no cross-proposer comparison possible".into());
            }
            detections.push(DetectionReport {
                attack_kind: a.script.kind,
                variant: a.script.variant,
                detected,
                mechanism,
                detection_time_s: time,
                seed: self.cfg.seed,
                expected_detected: a.script.variant.expected_detected(),
                decision_unchanged: None,
                note: notes.join("; "),
            });
        }
        let expectations = self
            .scenario
            .expectations
            .iter()
            .map(|e| {
                let ok = match e {
                    Expectation::Level1(cav) => self
                        .decisions
                        .iter()
                        .any(|d| d.level1.liable_cav.as_deref() == Some(cav.as_str())),
                    Expectation::Level2 { kind, entity } => self.decisions.iter().any(|d| {
                        d.level2
                            .as_ref()
                            .is_some_and(|l| l.kind == *kind && l.liable_entity == *entity)
                    }),
                };
                (e.clone(), ok)
            })
            .collect();
        // nothing happened inside the horizon: leave the trace empty
        if !self.trace.is_empty() {
            self.record(
                "end",
                json!({"violations": self.violations, "decisions": self.decisions.len(), "pending_events": self.queue.len()}),
            );
        }
        RunOutput {
            seed: self.cfg.seed,
            mode: self.cfg.mode,
            trace: self.trace,
            metrics: self.metrics,
            op_ledger: self.op.reference_ledger().clone(),
            dp_ledger: self.dp.reference_ledger().clone(),
            decisions: self.decisions,
            detections,
            manifest: self.store.manifest_csv(),
            violations: self.violations,
            inboxes: self.nodes.iter().map(|(h, n)| (h.clone(), n.inbox.clone())).collect(),
            expectations,
        }
    }
}

/// Runs a scenario to completion.
pub fn run_scenario(cfg: SimConfig, scenario: Scenario) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(cfg, scenario)?.run())
}
