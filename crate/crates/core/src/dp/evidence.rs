use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::crypto::{hash_parts, Digest, KeyPair, PublicKey};
use crate::time::SECOND;
use crate::tx::{CollisionRecord, EventRecord, Location, Transaction, WitnessRecord};

/// Thresholds for case grouping and consistency checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyThresholds {
    /// Maximum timestamp difference, microseconds.
    pub delta_t: u64,
    /// Maximum location difference, metres.
    pub delta_d: f64,
}

impl Default for ConsistencyThresholds {
    fn default() -> Self {
        Self {
            delta_t: 120 * SECOND,
            delta_d: 200.0,
        }
    }
}

/// Requests about one collision, with the witness accounts they carry.
#[derive(Debug, Clone, Serialize)]
pub struct EvidenceBundle {
    pub case_id: String,
    pub rets: Vec<Transaction>,
    /// Decrypted witness accounts, keyed by the `t_id` of the RET carrying
    /// them. Filled by [`integrity_check`].
    pub witness_records: BTreeMap<Digest, Vec<WitnessRecord>>,
}

impl EvidenceBundle {
    fn anchor(&self) -> &CollisionRecord {
        self.rets[0].collision_record().expect("bundles hold RETs")
    }

    pub fn hosts(&self) -> BTreeSet<PublicKey> {
        self.rets
            .iter()
            .filter_map(|t| t.as_ret().map(|r| r.host))
            .collect()
    }

    pub fn proposers(&self) -> BTreeSet<PublicKey> {
        self.rets
            .iter()
            .filter_map(|t| t.as_ret().map(|r| r.proposer))
            .collect()
    }
}

fn case_id(record: &CollisionRecord) -> String {
    let d = hash_parts(&[
        &record.loc.lat_e6.to_be_bytes(),
        &record.loc.lon_e6.to_be_bytes(),
        &record.ts.to_be_bytes(),
    ]);
    format!("case-{}", &d.to_hex()[..12])
}

fn close(a: &CollisionRecord, b_loc: &Location, b_ts: u64, th: &ConsistencyThresholds) -> bool {
    a.ts.abs_diff(b_ts) <= th.delta_t && a.loc.distance_m(b_loc) <= th.delta_d
}

/// Groups RETs into collision cases. A RET joins a bundle that already
/// holds its host, otherwise one whose anchor is within both thresholds.
pub fn group_cases(rets: &[Transaction], th: &ConsistencyThresholds) -> Vec<EvidenceBundle> {
    let mut bundles: Vec<EvidenceBundle> = Vec::new();
    for tx in rets {
        let Some(ret) = tx.as_ret() else { continue };
        let slot = bundles
            .iter()
            .position(|b| b.hosts().contains(&ret.host))
            .or_else(|| {
                bundles
                    .iter()
                    .position(|b| close(b.anchor(), &ret.record.loc, ret.record.ts, th))
            });
        match slot {
            Some(i) => bundles[i].rets.push(tx.clone()),
            None => bundles.push(EvidenceBundle {
                case_id: case_id(&ret.record),
                rets: vec![tx.clone()],
                witness_records: BTreeMap::new(),
            }),
        }
    }
    bundles
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Recomputed `h(T_data)` against the embedded value.
    HashRecompute,
    /// `h(T_data)` for one host compared across proposers.
    CrossProposerHash,
    WitnessDecrypt,
    Temporal,
    Spatial,
    /// A host's own account against what witnesses saw of it.
    Perception,
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckKind::HashRecompute => "hash_recompute",
            CheckKind::CrossProposerHash => "cross_proposer_hash",
            CheckKind::WitnessDecrypt => "witness_decrypt",
            CheckKind::Temporal => "temporal",
            CheckKind::Spatial => "spatial",
            CheckKind::Perception => "perception",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub kind: CheckKind,
    pub subject: String,
    pub passed: bool,
    /// Distinct collision records (by `h_tdata`) this check implicates when
    /// it fails.
    #[serde(skip)]
    pub suspects: Vec<Digest>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub checks: Vec<CheckResult>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_kinds(&self) -> BTreeSet<CheckKind> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.kind).collect()
    }

    pub fn count(&self, kind: CheckKind) -> usize {
        self.checks.iter().filter(|c| c.kind == kind).count()
    }

    fn push(&mut self, kind: CheckKind, subject: String, passed: bool, suspects: Vec<Digest>) {
        self.checks.push(CheckResult {
            kind,
            subject,
            passed,
            suspects: if passed { Vec::new() } else { suspects },
        });
    }

    fn suspects(&self) -> BTreeSet<Digest> {
        self.checks.iter().flat_map(|c| c.suspects.iter().copied()).collect()
    }
}

/// A distinct collision record in a bundle and the RETs carrying it.
#[derive(Debug, Clone)]
struct Claim<'a> {
    host: PublicKey,
    record: &'a CollisionRecord,
    rets: Vec<Digest>,
}

fn claims(bundle: &EvidenceBundle) -> Vec<Claim<'_>> {
    let mut out: Vec<Claim<'_>> = Vec::new();
    for tx in &bundle.rets {
        let Some(ret) = tx.as_ret() else { continue };
        match out
            .iter_mut()
            .find(|c| c.host == ret.host && c.record.h_tdata == ret.record.h_tdata)
        {
            Some(c) => c.rets.push(tx.t_id),
            None => out.push(Claim {
                host: ret.host,
                record: &ret.record,
                rets: vec![tx.t_id],
            }),
        }
    }
    out
}

/// Records per host backed by a strict majority of that host's RETs.
fn chosen_records(claims: &[Claim<'_>]) -> BTreeMap<PublicKey, Digest> {
    let mut per_host: BTreeMap<PublicKey, Vec<&Claim<'_>>> = BTreeMap::new();
    for c in claims {
        per_host.entry(c.host).or_default().push(c);
    }
    per_host
        .into_iter()
        .filter_map(|(host, cs)| {
            let total: usize = cs.iter().map(|c| c.rets.len()).sum();
            cs.iter()
                .find(|c| c.rets.len() * 2 > total && c.record.is_consistent())
                .map(|c| (host, c.record.h_tdata))
        })
        .collect()
}

fn short(d: &Digest) -> String {
    d.to_hex()[..8].to_string()
}

/// Runs every integrity and consistency check on a bundle and stores the
/// decrypted witness accounts in it.
pub fn integrity_check(
    bundle: &mut EvidenceBundle,
    evidence_keys: &KeyPair,
    th: &ConsistencyThresholds,
) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    let claims = claims(bundle);

    for tx in &bundle.rets {
        if let Some(r) = tx.collision_record() {
            report.push(
                CheckKind::HashRecompute,
                format!("ret:{}", short(&tx.t_id)),
                r.is_consistent(),
                vec![r.h_tdata],
            );
        }
    }

    let hosts: BTreeSet<PublicKey> = claims.iter().map(|c| c.host).collect();
    for host in &hosts {
        let mine: Vec<&Claim<'_>> = claims.iter().filter(|c| c.host == *host).collect();
        let n: usize = mine.iter().map(|c| c.rets.len()).sum();
        if n < 2 {
            continue;
        }
        let best = mine.iter().map(|c| c.rets.len()).max().unwrap_or(0);
        let majority = best * 2 > n;
        let suspects = mine
            .iter()
            .filter(|c| !majority || c.rets.len() != best)
            .map(|c| c.record.h_tdata)
            .collect();
        report.push(
            CheckKind::CrossProposerHash,
            format!("host:{}", host.short()),
            mine.len() == 1,
            suspects,
        );
    }

    // witness accounts, decrypted once per distinct ciphertext
    let mut seen_ct = BTreeSet::new();
    let mut witnesses: Vec<WitnessRecord> = Vec::new();
    let mut opened_by_ret = BTreeMap::new();
    for tx in &bundle.rets {
        let Some(r) = tx.collision_record() else { continue };
        let mut opened = Vec::new();
        for wc in &r.witness_ciphertexts {
            let rec = evidence_keys
                .decrypt(&wc.ciphertext)
                .ok()
                .and_then(|pt| WitnessRecord::from_bytes(&pt).ok())
                .filter(|w| w.observer == wc.witness);
            if seen_ct.insert(wc.ciphertext.clone()) {
                report.push(
                    CheckKind::WitnessDecrypt,
                    format!("witness:{}", wc.witness.short()),
                    rec.is_some(),
                    vec![r.h_tdata],
                );
                if let Some(w) = &rec {
                    witnesses.push(w.clone());
                }
            }
            if let Some(w) = rec {
                opened.push(w);
            }
        }
        opened_by_ret.insert(tx.t_id, opened);
    }

    // host records against each other
    for (i, a) in claims.iter().enumerate() {
        for b in &claims[i + 1..] {
            let subject = format!("{} vs {}", short(&a.record.h_tdata), short(&b.record.h_tdata));
            let pair = vec![a.record.h_tdata, b.record.h_tdata];
            report.push(
                CheckKind::Temporal,
                subject.clone(),
                a.record.ts.abs_diff(b.record.ts) <= th.delta_t,
                pair.clone(),
            );
            report.push(
                CheckKind::Spatial,
                subject,
                a.record.loc.distance_m(&b.record.loc) <= th.delta_d,
                pair,
            );
        }
    }

    // host records against witness accounts; witnesses are independent
    // observers, so the host record is the suspect
    for c in &claims {
        for w in &witnesses {
            if w.observer == c.host {
                continue;
            }
            let subject = format!("{} vs witness:{}", short(&c.record.h_tdata), w.observer.short());
            report.push(
                CheckKind::Temporal,
                subject.clone(),
                c.record.ts.abs_diff(w.ts) <= th.delta_t,
                vec![c.record.h_tdata],
            );
            report.push(
                CheckKind::Spatial,
                subject.clone(),
                c.record.loc.distance_m(&w.loc) <= th.delta_d,
                vec![c.record.h_tdata],
            );
            let Ok(ev) = EventRecord::from_bytes(&c.record.ve_px) else { continue };
            for o in w.observations.iter().filter(|o| o.subject == c.host) {
                report.push(
                    CheckKind::Perception,
                    subject.clone(),
                    o.position == ev.position && o.anomalous_stop == ev.anomalous_stop,
                    vec![c.record.h_tdata],
                );
            }
        }
    }

    // pairwise host failures only implicate a record that disagrees with
    // most of the others
    let n = claims.len();
    let mut blame: BTreeMap<Digest, usize> = BTreeMap::new();
    for c in report.checks.iter().filter(|c| {
        !c.passed && matches!(c.kind, CheckKind::Temporal | CheckKind::Spatial) && c.suspects.len() == 2
    }) {
        for s in &c.suspects {
            *blame.entry(*s).or_default() += 1;
        }
    }
    for check in report.checks.iter_mut().filter(|c| c.suspects.len() == 2) {
        check.suspects.retain(|s| blame.get(s).copied().unwrap_or(0) * 2 > n.saturating_sub(1));
    }
    bundle.witness_records = opened_by_ret;
    report
}

/// Liability rule applied to a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// The leading vehicle stopped without cause.
    LeaderAnomalousStop,
    /// Ordinary rear-end: the vehicle behind the leader is liable.
    FollowingVehicle,
    /// Only one vehicle involved.
    SingleVehicle,
    /// Nothing trustworthy left after exclusions.
    Undecidable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FirstLevelDecision {
    pub case_id: String,
    pub liable_key: Option<PublicKey>,
    /// Resolved identity of the liable vehicle, filled in by law enforcement.
    pub liable_cav: Option<String>,
    pub basis: Vec<Digest>,
    pub contested: bool,
    pub rule: DecisionRule,
    /// Subsystem the liable vehicle's own trusted record blames, if any.
    pub fault_subsystem: Option<String>,
    pub accident_ts: u64,
}

#[derive(Debug, Default)]
struct VehicleView {
    own: Option<EventRecord>,
    seen_positions: Vec<u32>,
    seen_anomalous: bool,
}

impl VehicleView {
    fn position(&self) -> Option<u32> {
        if self.seen_positions.is_empty() {
            return self.own.as_ref().map(|e| e.position);
        }
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for p in &self.seen_positions {
            *counts.entry(*p).or_default() += 1;
        }
        counts.into_iter().max_by_key(|(p, n)| (*n, std::cmp::Reverse(*p))).map(|(p, _)| p)
    }

    fn anomalous(&self) -> bool {
        self.seen_anomalous || self.own.as_ref().is_some_and(|e| e.anomalous_stop)
    }
}

/// Applies the liability rule table to a checked bundle.
pub fn first_level_decision(bundle: &EvidenceBundle, report: &ConsistencyReport) -> FirstLevelDecision {
    let claims = claims(bundle);
    let chosen = chosen_records(&claims);
    let suspects = report.suspects();
    let trusted: Vec<&Claim<'_>> = claims
        .iter()
        .filter(|c| chosen.get(&c.host) == Some(&c.record.h_tdata) && !suspects.contains(&c.record.h_tdata))
        .collect();

    let mut views: BTreeMap<PublicKey, VehicleView> = BTreeMap::new();
    for c in &claims {
        views.entry(c.host).or_default();
    }
    let mut basis: BTreeSet<Digest> = BTreeSet::new();
    for c in &trusted {
        basis.extend(c.rets.iter().copied());
        if let Ok(ev) = EventRecord::from_bytes(&c.record.ve_px) {
            views.entry(c.host).or_default().own = Some(ev);
        }
        for rid in &c.rets {
            for w in bundle.witness_records.get(rid).into_iter().flatten() {
                for o in &w.observations {
                    let v = views.entry(o.subject).or_default();
                    v.seen_positions.push(o.position);
                    v.seen_anomalous |= o.anomalous_stop;
                }
            }
        }
    }
    // witness accounts are identical across copies of one record, so
    // positions were counted once per RET; that only scales the tally

    let accident_ts = trusted
        .iter()
        .map(|c| c.record.ts)
        .min()
        .or_else(|| claims.iter().map(|c| c.record.ts).min())
        .unwrap_or(0);
    let contested = !report.passed() || trusted.len() < claims.len();
    let mut decision = FirstLevelDecision {
        case_id: bundle.case_id.clone(),
        liable_key: None,
        liable_cav: None,
        basis: basis.into_iter().collect(),
        contested,
        rule: DecisionRule::Undecidable,
        fault_subsystem: None,
        accident_ts,
    };
    if decision.basis.is_empty() {
        decision.contested = true;
        return decision;
    }

    let (liable, rule) = if views.len() == 1 {
        (*views.keys().next().expect("one vehicle"), DecisionRule::SingleVehicle)
    } else {
        let mut ranked: Vec<(u32, PublicKey)> = views
            .iter()
            .filter_map(|(k, v)| v.position().map(|p| (p, *k)))
            .collect();
        ranked.sort();
        match ranked.as_slice() {
            [] => {
                decision.contested = true;
                return decision;
            }
            [(_, only)] => (*only, DecisionRule::SingleVehicle),
            [(_, leader), (_, follower), ..] => {
                if views[leader].anomalous() {
                    (*leader, DecisionRule::LeaderAnomalousStop)
                } else {
                    (*follower, DecisionRule::FollowingVehicle)
                }
            }
        }
    };
    decision.liable_key = Some(liable);
    decision.rule = rule;
    decision.fault_subsystem = views
        .get(&liable)
        .and_then(|v| v.own.as_ref())
        .and_then(|e| e.fault_subsystem.clone());
    decision
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{encrypt_for, hash};
    use crate::tx::{make_pet, make_ret, Observation, WitnessCiphertext};
    use crate::identity::{CertificateAuthority, EntityKind, Partition, Participant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Crash {
        ca: CertificateAuthority,
        cavs: Vec<KeyPair>,
        ins: Participant,
        maker: Participant,
        base: Location,
        ts: u64,
    }

    fn crash() -> Crash {
        let mut ca = CertificateAuthority::new(5);
        let ins = ca
            .issue_identity("ins", EntityKind::Insurer, &[Partition::Op, Partition::Dp])
            .unwrap();
        let maker = ca
            .issue_identity("maker", EntityKind::Manufacturer, &[Partition::Op, Partition::Dp])
            .unwrap();
        let cavs = (0..3).map(|i| KeyPair::from_seed([i + 1; 32])).collect();
        Crash {
            ca,
            cavs,
            ins,
            maker,
            base: Location::from_degrees(-33.8688, 151.2093),
            ts: 1_000 * SECOND,
        }
    }

    impl Crash {
        fn loc(&self, pos: usize) -> Location {
            self.base.offset_north(-8.0 * pos as f64)
        }

        fn witness(&self, observer: usize, anomalous_leader: bool, rng: &mut ChaCha8Rng) -> WitnessCiphertext {
            let w = WitnessRecord {
                observer: self.cavs[observer].public(),
                loc: self.loc(observer),
                ts: self.ts,
                observations: (0..3)
                    .filter(|&p| p != observer)
                    .map(|p| Observation {
                        subject: self.cavs[p].public(),
                        position: p as u32,
                        anomalous_stop: p == 0 && anomalous_leader,
                    })
                    .collect(),
            };
            WitnessCiphertext {
                witness: w.observer,
                ciphertext: encrypt_for(&self.ca.evidence_public(), &w.to_bytes(), rng),
            }
        }

        fn record(&self, pos: usize, anomalous: bool, witnesses: bool, rng: &mut ChaCha8Rng) -> CollisionRecord {
            let ev = EventRecord {
                position: pos as u32,
                speed_cm_s: if pos == 0 { 0 } else { 900 },
                anomalous_stop: anomalous,
                fault_subsystem: None,
            };
            let ws = if witnesses {
                (0..3).filter(|&o| o != pos).map(|o| self.witness(o, true, rng)).collect()
            } else {
                vec![]
            };
            CollisionRecord::new(self.loc(pos), self.ts, ev.to_bytes(), hash(b"video"), ws)
        }

        fn ret(&self, proposer: &Participant, pos: usize, record: CollisionRecord) -> Transaction {
            let pet = make_pet(&self.cavs[pos], record, self.ts + SECOND).unwrap();
            make_ret(proposer, &pet, &|_: &Digest| true, self.ts + 10 * SECOND).unwrap()
        }

        fn bundle(&self, rets: Vec<Transaction>) -> (EvidenceBundle, ConsistencyReport) {
            let th = ConsistencyThresholds::default();
            let mut bundles = group_cases(&rets, &th);
            assert_eq!(bundles.len(), 1);
            let mut b = bundles.remove(0);
            let r = integrity_check(&mut b, self.ca.evidence_keys(), &th);
            (b, r)
        }
    }

    #[test]
    fn staged_leader_is_liable() {
        let c = crash();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rets = (0..3).map(|p| c.ret(&c.ins, p, c.record(p, p == 0, true, &mut rng))).collect();
        let (b, r) = c.bundle(rets);
        assert!(r.passed(), "{:?}", r.failed_kinds());
        let d = first_level_decision(&b, &r);
        assert_eq!(d.liable_key, Some(c.cavs[0].public()));
        assert_eq!(d.rule, DecisionRule::LeaderAnomalousStop);
        assert!(!d.contested);
        assert_eq!(d.basis.len(), 3);
    }

    #[test]
    fn genuine_rear_end_blames_follower() {
        let c = crash();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rets = (0..3).map(|p| c.ret(&c.ins, p, c.record(p, false, false, &mut rng))).collect();
        let (b, r) = c.bundle(rets);
        let d = first_level_decision(&b, &r);
        assert_eq!(d.liable_key, Some(c.cavs[1].public()));
        assert_eq!(d.rule, DecisionRule::FollowingVehicle);
    }

    #[test]
    fn single_vehicle() {
        let c = crash();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (b, r) = c.bundle(vec![c.ret(&c.ins, 0, c.record(0, false, false, &mut rng))]);
        let d = first_level_decision(&b, &r);
        assert_eq!(d.liable_key, Some(c.cavs[0].public()));
        assert_eq!(d.rule, DecisionRule::SingleVehicle);
    }

    #[test]
    fn modified_ret_caught_by_cross_proposer_hash() {
        let c = crash();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let records: Vec<_> = (0..3).map(|p| c.record(p, p == 0, true, &mut rng)).collect();
        let mut rets: Vec<_> = (0..3).map(|p| c.ret(&c.ins, p, records[p].clone())).collect();
        let mut forged = records[0].clone();
        forged.loc = forged.loc.offset_north(300.0);
        forged.rehash();
        rets.push(c.ret(&c.maker, 0, forged));
        let (b, r) = c.bundle(rets);
        let failed = r.failed_kinds();
        assert!(failed.contains(&CheckKind::CrossProposerHash));
        assert!(failed.contains(&CheckKind::Spatial));
        let d = first_level_decision(&b, &r);
        assert_eq!(d.liable_key, Some(c.cavs[0].public()));
        assert!(d.contested);
    }

    #[test]
    fn temporal_threshold_boundary() {
        let c = crash();
        let th = ConsistencyThresholds::default();
        for (offset, pass) in [(th.delta_t - SECOND, true), (th.delta_t + SECOND, false)] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut rets: Vec<_> = (0..2).map(|p| c.ret(&c.ins, p, c.record(p, false, false, &mut rng))).collect();
            let mut shifted = c.record(2, false, false, &mut rng);
            shifted.ts += offset;
            shifted.rehash();
            let pet = make_pet(&c.cavs[2], shifted, c.ts + offset + SECOND).unwrap();
            rets.push(make_ret(&c.ins, &pet, &|_: &Digest| true, c.ts + offset + 2 * SECOND).unwrap());
            let mut b = EvidenceBundle {
                case_id: "t".into(),
                rets,
                witness_records: BTreeMap::new(),
            };
            let r = integrity_check(&mut b, c.ca.evidence_keys(), &th);
            assert_eq!(!r.failed_kinds().contains(&CheckKind::Temporal), pass, "offset {offset}");
        }
    }

    #[test]
    fn falsified_leader_record_contradicted_by_witnesses() {
        let c = crash();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rets = vec![c.ret(&c.ins, 0, c.record(0, false, false, &mut rng))];
        rets.extend((1..3).map(|p| c.ret(&c.ins, p, c.record(p, false, true, &mut rng))));
        let (b, r) = c.bundle(rets);
        assert!(r.failed_kinds().contains(&CheckKind::Perception));
        let d = first_level_decision(&b, &r);
        assert_eq!(d.liable_key, Some(c.cavs[0].public()));

        // without witnesses the falsification stands
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rets = (0..3).map(|p| c.ret(&c.ins, p, c.record(p, false, false, &mut rng))).collect();
        let (b, r) = c.bundle(rets);
        assert!(r.passed());
        assert_eq!(first_level_decision(&b, &r).liable_key, Some(c.cavs[1].public()));
    }

    #[test]
    fn far_apart_crashes_form_separate_cases() {
        let c = crash();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = c.ret(&c.ins, 0, c.record(0, false, false, &mut rng));
        let mut far = c.record(1, false, false, &mut rng);
        far.loc = far.loc.offset_north(5_000.0);
        far.rehash();
        let b = c.ret(&c.ins, 1, far);
        assert_eq!(group_cases(&[a, b], &ConsistencyThresholds::default()).len(), 2);
    }
}
