//! Acceptance criteria. Runs as a plain binary so every criterion prints
//! one PASS/FAIL line; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

use bfica::adversary::{AttackVariant, DetectionMechanism};
use bfica::crypto::{hash, KeyPair};
use bfica::dump::{dump_op, verify_dump, DumpError};
use bfica::identity::{CertificateAuthority, EntityKind, Partition};
use bfica::offchain::TransferCostModel;
use bfica::op::OpLedger;
use bfica::sim::{measure_modes, run_attack_matrix, run_scenario, standard_matrix, workload_stats, Mode, Scenario, SimConfig};
use bfica::time::DAY;
use bfica::tx::{
    countersign_net, make_ese, make_net, make_pet, CollisionRecord, InstructionKind, Location, SafetyEvent,
    Transaction, UpdateMeta,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 1: tamper evidence --------------------------------------------------

struct TxFactory {
    vehicle: KeyPair,
    maker: bfica::identity::Participant,
    car: bfica::identity::Participant,
}

impl TxFactory {
    fn new() -> Self {
        let mut ca = CertificateAuthority::new(77);
        let maker = ca
            .issue_identity("maker", EntityKind::Manufacturer, &[Partition::Op, Partition::Dp])
            .unwrap();
        let car = ca.issue_identity("car", EntityKind::Vehicle, &[Partition::Op]).unwrap();
        Self {
            vehicle: KeyPair::from_seed([5; 32]),
            maker,
            car,
        }
    }

    fn random(&self, rng: &mut ChaCha8Rng, ts: u64) -> Transaction {
        let loc = Location::from_degrees(rng.gen_range(-34.0..-33.0), rng.gen_range(150.0..152.0));
        match rng.gen_range(0..3) {
            0 => make_ese(&self.vehicle, SafetyEvent::HardBrake, loc, ts),
            1 => {
                let px: Vec<u8> = (0..rng.gen_range(4..40)).map(|_| rng.gen()).collect();
                let record = CollisionRecord::new(loc, ts, px, hash(&ts.to_be_bytes()), Vec::new());
                make_pet(&self.vehicle, record, ts + 1).unwrap()
            }
            _ => {
                let fw = format!("fw-{ts}");
                let meta = UpdateMeta {
                    instruction_kind: InstructionKind::SoftwareUpdate,
                    update_file_hash: Some(hash(fw.as_bytes())),
                    subsystem: "brakes".into(),
                    metadata: fw,
                    file_pointer: "cloud://maker/fw".into(),
                };
                let mut pending = make_net(&self.maker, self.car.public(), meta, ts).unwrap();
                countersign_net(&self.car, &mut pending).unwrap()
            }
        }
    }
}

/// Height of the block holding the `k`-th `tx` line of a dump.
fn tx_lines(dump: &str) -> Vec<(usize, u64)> {
    let mut height = 0u64;
    let mut seen_block = false;
    let mut out = Vec::new();
    for (i, line) in dump.lines().enumerate() {
        if line.starts_with("block ") || line.starts_with("dblock ") {
            if seen_block {
                height += 1;
            }
            seen_block = true;
        } else if line.starts_with("tx ") {
            out.push((i, height));
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let factory = TxFactory::new();
    let genesis = CertificateAuthority::new(77).genesis_credential(Partition::Op);
    let (mut flips, mut false_passes, mut late) = (0usize, 0usize, 0usize);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=50);
        let mut ledger = OpLedger::new(genesis, 7);
        for i in 0..n {
            ledger.validate(factory.random(&mut rng, 1_000_000 * (i as u64 + 1))).unwrap();
            if ledger.is_full() {
                ledger.seal().unwrap();
            }
        }
        let dump = dump_op(&ledger);
        assert!(verify_dump(&dump).is_ok(), "untampered ledger {seed} must verify");
        let lines: Vec<&str> = dump.lines().collect();
        let txs = tx_lines(&dump);
        for _ in 0..3 {
            let (idx, height) = txs[rng.gen_range(0..txs.len())];
            let mut bytes = hex::decode(&lines[idx][3..]).unwrap();
            let at = rng.gen_range(0..bytes.len());
            bytes[at] ^= rng.gen_range(1..=255u8);
            let mut tampered: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
            tampered[idx] = format!("tx {}", hex::encode(&bytes));
            flips += 1;
            match verify_dump(&(tampered.join("\n") + "\n")) {
                Ok(_) => false_passes += 1,
                Err(DumpError::Chain(e)) if e.height <= height => {}
                Err(_) => late += 1,
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        false_passes == 0 && late == 0 && elapsed < Duration::from_secs(60),
        format!("{flips} single-byte flips over 1000 ledgers: {false_passes} false passes, {late} caught late, {elapsed:.1?}"),
    )
}

// ---- 2: fold oracle ------------------------------------------------------

/// Independent fold: sha256 over t_id then previous ID, starting from the
/// genesis block ID.
fn oracle_fold(prev: [u8; 32], t_id: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(t_id);
    h.update(prev);
    h.finalize().into()
}

fn criterion_2() -> Outcome {
    let factory = TxFactory::new();
    let genesis = CertificateAuthority::new(77).genesis_credential(Partition::Op);
    let genesis_id: [u8; 32] = {
        let mut h = Sha256::new();
        h.update(b"bfica-genesis");
        h.update([Partition::Op.tag()]);
        h.update(genesis.ca_verification_key.as_bytes());
        h.finalize().into()
    };
    let mut steps = 0usize;
    for seed in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + seed);
        let mut ledger = OpLedger::new(genesis, 7);
        let mut expected = genesis_id;
        for i in 0..rng.gen_range(1..=20u64) {
            let tx = factory.random(&mut rng, (i + 1) * 1000);
            expected = oracle_fold(expected, tx.t_id.as_bytes());
            let got = ledger.validate(tx).unwrap();
            steps += 1;
            if got.as_bytes() != &expected {
                return Err(format!("sequence {seed} step {i}: engine {got} != oracle {}", hex::encode(expected)));
            }
            if ledger.is_full() {
                ledger.seal().unwrap();
                if ledger.tip_id().as_bytes() != &expected {
                    return Err(format!("sequence {seed}: sealed ID differs from oracle"));
                }
            }
        }
    }
    Ok(format!("10000 sequences, {steps} steps, all block IDs equal the oracle"))
}

// ---- 3: sealing ------------------------------------------------------------

fn traffic_scenario(n: usize) -> String {
    format!(
        "participant maker manufacturer\nparticipant tech technician\nparticipant ins insurer\n\
         participant police legal_authority\nparticipant cav1 vehicle\nparticipant cav2 vehicle\n\
         traffic 1m cav1,cav2 1m {n}\n"
    )
}

fn criterion_3() -> Outcome {
    for n in 0..=50usize {
        let scenario = Scenario::parse(&traffic_scenario(n)).map_err(|e| e.to_string())?;
        let out = run_scenario(SimConfig::default(), scenario).map_err(|e| e.to_string())?;
        let sealed = out.op_ledger.sealed().len();
        let rest = out.op_ledger.dblock().len();
        if sealed != n / 7 || rest != n % 7 || out.op_ledger.tx_count() != n {
            return Err(format!("N={n}: {sealed} sealed, {rest} in dblock"));
        }
    }
    Ok("N=0..=50 validated through the simulator: floor(N/7) sealed, N mod 7 dynamic".into())
}

// ---- 4: attack matrix ------------------------------------------------------

fn criterion_4() -> Outcome {
    let scenario = Scenario::load("rear_end_3cav").map_err(|e| e.to_string())?;
    let scripts = standard_matrix(&scenario);
    let expected: BTreeMap<AttackVariant, (bool, DetectionMechanism)> = [
        (AttackVariant::Dblock, (true, DetectionMechanism::DynamicBlockId)),
        (AttackVariant::BackDated, (true, DetectionMechanism::TAltBidTracking)),
        (AttackVariant::AfterPet, (true, DetectionMechanism::DynamicBlockId)),
        (AttackVariant::Location, (true, DetectionMechanism::CrossProposerHash)),
        (AttackVariant::Timestamp, (true, DetectionMechanism::CrossProposerHash)),
        (AttackVariant::NoWitnesses, (false, DetectionMechanism::None)),
    ]
    .into_iter()
    .collect();
    let mut hits: BTreeMap<AttackVariant, usize> = BTreeMap::new();
    let mut problems = Vec::new();
    for seed in 1..=100u64 {
        let cfg = SimConfig { seed, ..SimConfig::default() };
        let reports = run_attack_matrix(&cfg, &scenario, &scripts).map_err(|e| e.to_string())?;
        for r in reports {
            let Some(&(detected, mechanism)) = expected.get(&r.variant) else { continue };
            if r.detected == detected && r.mechanism == mechanism {
                *hits.entry(r.variant).or_default() += 1;
            } else if problems.len() < 5 {
                problems.push(format!("seed {seed} {}: {} via {}", r.variant.name(), r.detected, r.mechanism.name()));
            }
            if detected && r.decision_unchanged != Some(true) && problems.len() < 5 {
                problems.push(format!("seed {seed} {}: decision changed", r.variant.name()));
            }
        }
    }
    let summary: Vec<String> = expected
        .keys()
        .map(|v| format!("{}={}/100", v.name(), hits.get(v).copied().unwrap_or(0)))
        .collect();
    check(
        problems.is_empty() && hits.values().all(|h| *h == 100) && hits.len() == expected.len(),
        format!("{} {}", summary.join(" "), problems.join("; ")),
    )
}

// ---- 5: adjudication combinations ------------------------------------------

fn adjudication_scenario(et: bool, audit_pass: bool, audit_available: bool) -> String {
    let mut s = String::from(
        "participant maker manufacturer\nparticipant tech technician\nparticipant ins insurer\n\
         participant police legal_authority\nparticipant cav1 vehicle\nparticipant cav2 vehicle\n\
         participant cav3 vehicle\n",
    );
    for c in ["cav1", "cav2", "cav3"] {
        s.push_str(&format!("manufacturer {c} maker\ninsurer {c} ins\n"));
    }
    s.push_str("net n1 1d maker cav1 software_update brakes brake-fw-2.1\n");
    if et {
        s.push_str("et 2d cav1 n1 success\n");
    }
    if audit_available {
        let fw = if audit_pass { "brake-fw-2.1" } else { "brake-fw-2.0" };
        s.push_str(&format!("device cav1 brakes {fw} 2d\n"));
    }
    s.push_str("collision c1 20d -33.8688 151.2093 cav1,cav2,cav3 stop=cav1 fault=brakes\n");
    s
}

fn criterion_5() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    for mask in 0..8u8 {
        let (et, pass, avail) = (mask & 1 != 0, mask & 2 != 0, mask & 4 != 0);
        let scenario = Scenario::parse(&adjudication_scenario(et, pass, avail)).map_err(|e| e.to_string())?;
        let out = run_scenario(SimConfig::default(), scenario).map_err(|e| e.to_string())?;
        let negligent = !et && (!avail || !pass);
        let want = if negligent { ("negligence", "cav1") } else { ("product", "maker") };
        let got = out.decisions.first().map(|d| d.outcome());
        let good = out.decisions.len() == 1
            && got.as_ref().is_some_and(|(cav, l2)| {
                cav.as_deref() == Some("cav1")
                    && l2.as_ref().is_some_and(|(k, e)| k == want.0 && e == want.1)
            });
        ok &= good;
        rows.push(format!(
            "et={} pass={} avail={}->{}",
            et as u8,
            pass as u8,
            avail as u8,
            got.and_then(|g| g.1).map_or("none".into(), |(k, _)| k)
        ));
    }
    check(ok, rows.join(" "))
}

// ---- 6, 7: modes -----------------------------------------------------------

fn criteria_6_7() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cfg = SimConfig {
        duration: Some(DAY),
        ..SimConfig::default()
    };
    let seeds: Vec<u64> = (1..=14).collect();
    let cmp = match measure_modes(&cfg, &Scenario::workload_default(10), &seeds) {
        Ok(c) => c,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let elapsed = start.elapsed();
    let o = |m| cmp.overhead(m).unwrap_or(f64::NAN);
    let (bfica, base, b4f) = (o(Mode::Bfica), o(Mode::Baseline), o(Mode::B4f));
    let pet_gap = cmp.pet_verification(Mode::Bfica).unwrap_or(f64::NAN) - cmp.pet_verification(Mode::B4f).unwrap_or(f64::NAN);
    let sec_gap = bfica - base;
    let c6 = check(
        b4f > bfica
            && bfica > base
            && (sec_gap - 0.13).abs() <= 0.02
            && (pet_gap - 0.30).abs() <= 0.05
            && elapsed < Duration::from_secs(120),
        format!(
            "overhead b4f={b4f:.4} bfica={bfica:.4} baseline={base:.4}; bfica-baseline={sec_gap:.4}s; PET verification gap={pet_gap:.4}s; {elapsed:.1?}"
        ),
    );
    let full = cmp.block_processing(Mode::Bfica).unwrap_or(f64::NAN);
    let hashed = cmp.block_processing(Mode::B4f).unwrap_or(f64::NAN);
    let rel = (full - hashed).abs() / full.max(hashed);
    let c7 = check(
        rel < 0.01,
        format!("full-data {full:.3}s hash-only {hashed:.3}s relative difference {:.4}%", rel * 100.0),
    );
    (c6, c7)
}

// ---- 8: transfer bands -----------------------------------------------------

fn criterion_8() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    for (label, model) in [
        ("default", TransferCostModel::default()),
        ("calibration", SimConfig::default().transfer),
    ] {
        let two = model.estimate_transfer_time(2_000_000_000);
        let eight = model.estimate_transfer_time(8_000_000_000);
        ok &= (20.0..=60.0).contains(&two) && (60.0..=180.0).contains(&eight);
        rows.push(format!("{label}: 2GB={two:.2}s 8GB={eight:.2}s"));
    }
    check(ok, rows.join("; "))
}

// ---- 9: workload statistics --------------------------------------------------

fn criterion_9() -> Outcome {
    let stats = workload_stats(1, 100, 42.0);
    let poisson = Poisson::new(42.0).unwrap();
    let n = stats.counts.len() as f64;
    // bins of consecutive counts, each with expected frequency at least 5
    let mut edges = Vec::new();
    let (mut lo, mut acc) = (0u64, 0.0);
    for k in 0..=200u64 {
        acc += poisson.pmf(k) * n;
        if acc >= 5.0 {
            edges.push((lo, k));
            lo = k + 1;
            acc = 0.0;
        }
    }
    if let Some(last) = edges.last_mut() {
        last.1 = u64::MAX;
    }
    edges[0].0 = 0;
    let mut chi2 = 0.0;
    for &(a, b) in &edges {
        let observed = stats.counts.iter().filter(|c| (a..=b).contains(*c)).count() as f64;
        let p: f64 = if b == u64::MAX {
            1.0 - (0..a).map(|k| poisson.pmf(k)).sum::<f64>()
        } else {
            (a..=b).map(|k| poisson.pmf(k)).sum()
        };
        let expected = p * n;
        chi2 += (observed - expected).powi(2) / expected;
    }
    let df = (edges.len() - 1) as f64;
    let critical = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
    check(
        (stats.mean - 42.0).abs() <= 2.0 && chi2 < critical,
        format!(
            "mean={:.2} over 100 seeds; chi2={chi2:.2} < {critical:.2} ({} bins, df={df})",
            stats.mean,
            edges.len()
        ),
    )
}

// ---- 10: CLI determinism -----------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
        }
    }
    out
}

fn criterion_10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_bfica");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let op_dump = dir.join("run").join("op_ledger.txt");
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("run", vec!["run".into(), "--seed".into(), "1".into(), "--scenario".into(), "rear_end_3cav".into()]),
        ("attack", vec!["attack".into(), "--seed".into(), "3".into()]),
        ("compare", vec!["compare".into(), "--runs".into(), "2".into(), "--duration".into(), "6h".into()]),
        ("workload", vec!["workload".into(), "--runs".into(), "20".into()]),
        ("verify", vec!["verify".into(), op_dump.display().to_string()]),
    ];
    let mut rows = Vec::new();
    for (name, args) in &commands {
        let out_dir = dir.join(name);
        let mut full = args.clone();
        if *name != "verify" {
            full.extend(["--out".into(), out_dir.display().to_string()]);
        }
        let mut results = Vec::new();
        for _ in 0..2 {
            let o = Command::new(bin).args(&full).output().map_err(|e| e.to_string())?;
            results.push((o.status.code(), o.stdout, o.stderr, snapshot(&out_dir)));
        }
        if results[0] != results[1] {
            return Err(format!("`{name}` differs between identical runs"));
        }
        if results[0].0 != Some(0) {
            return Err(format!("`{name}` exited with {:?}", results[0].0));
        }
        rows.push(format!("{name}({} files)", results[0].3.len()));
    }
    Ok(format!("identical stdout, stderr, exit code and files: {}", rows.join(" ")))
}

fn main() {
    let names = [
        "1 hash-chain tamper evidence",
        "2 fold oracle",
        "3 B_Max sealing",
        "4 attack matrix",
        "5 two-level adjudication",
        "6 mode ordering and anchors",
        "7 DP block processing parity",
        "8 transfer cost bands",
        "9 workload statistics",
        "10 CLI determinism",
    ];
    let (c6, c7) = criteria_6_7();
    let results = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        c6,
        c7,
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    let mut failed = 0;
    for (name, r) in names.iter().zip(results) {
        match r {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
