use bfica::adversary::{AttackKind, AttackScript, AttackVariant, DetectionMechanism};
use bfica::sim::{
    measure_modes, run_attack, run_scenario, CostModel, Metric, Mode, Scenario, SimConfig,
};
use bfica::time::{DAY, HOUR};

fn rear_end() -> Scenario {
    Scenario::load("rear_end_3cav").unwrap()
}

const OP_ONLY: [&str; 7] = ["ESE", "PET", "NET", "ET", "op_block", "net_request", "net_ack"];

#[test]
fn honest_rear_end_meets_scripted_expectations() {
    let out = run_scenario(SimConfig::default(), rear_end()).unwrap();
    assert!(out.expectations_met(), "{:?}", out.expectations);
    assert_eq!(out.violations, 0);
    assert_eq!(out.decisions.len(), 1);
    let d = &out.decisions[0];
    assert!(d.analyses_agreed);
    assert!(d.failed_checks.is_empty(), "{:?}", d.failed_checks);
    // every stored video proves out against its on-chain hash
    assert!(!d.storage.is_empty());
    for (_, proof) in &d.storage {
        assert_eq!(*proof, bfica::offchain::StorageProof::Intact);
    }
}

#[test]
fn same_inputs_same_outputs() {
    let a = run_scenario(SimConfig::default(), rear_end()).unwrap();
    let b = run_scenario(SimConfig::default(), rear_end()).unwrap();
    assert_eq!(a.files(), b.files());
    let c = run_scenario(SimConfig { seed: 2, ..SimConfig::default() }, rear_end()).unwrap();
    assert_ne!(a.trace_ndjson(), c.trace_ndjson(), "latency depends on the seed");
}

#[test]
fn zero_duration_is_empty() {
    let cfg = SimConfig {
        duration: Some(0),
        ..SimConfig::default()
    };
    let out = run_scenario(cfg, rear_end()).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.op_ledger.tx_count(), 0);
    assert_eq!(out.dp_ledger.transactions().count(), 0);
    assert!(out.decisions.is_empty());
}

#[test]
fn partitions_stay_isolated() {
    let out = run_scenario(SimConfig::default(), rear_end()).unwrap();
    for dp_only in ["police", "transport"] {
        let inbox = &out.inboxes[dp_only];
        for p in OP_ONLY {
            assert!(!inbox.contains_key(p), "{dp_only} received {p}: {inbox:?}");
        }
    }
    // need-to-know: technicians and vehicles never see decision blocks
    for op_only in ["tech", "cav1", "cav2", "cav3"] {
        assert!(!out.inboxes[op_only].contains_key("dp_block"));
        assert!(!out.inboxes[op_only].contains_key("RET"));
    }
    assert!(out.inboxes["police"].contains_key("RET"));
}

#[test]
fn misrouted_ese_is_dropped_and_logged() {
    let mut text = rear_end_text();
    text.push_str("misroute 3d cav2 police\nmisroute 3d cav2 tech\n");
    let out = run_scenario(SimConfig::default(), Scenario::parse(&text).unwrap()).unwrap();
    assert_eq!(out.violations, 1);
    assert!(!out.inboxes["police"].contains_key("ESE"));
    // an operational validator may receive it
    assert_eq!(out.inboxes["tech"].get("ESE").copied(), Some(13));
    let logged: Vec<_> = out.trace.iter().filter(|v| v["ev"] == "violation").collect();
    assert_eq!(logged.len(), 1);
    assert_eq!(logged[0]["to"], "police");
}

fn rear_end_text() -> String {
    bfica::sim::builtin("rear_end_3cav").unwrap().to_string()
}

#[test]
fn net_has_the_largest_verification_time() {
    let cfg = SimConfig {
        duration: Some(28 * DAY),
        ..SimConfig::default()
    };
    let out = run_scenario(cfg, Scenario::workload_default(4)).unwrap();
    let mean = |k: &str| {
        let v = out.metric_values(Some(k), Metric::VerificationTime);
        assert!(!v.is_empty(), "no {k} rows");
        v.iter().sum::<f64>() / v.len() as f64
    };
    let net = mean("NET");
    for k in ["PET", "ET"] {
        assert!(net > mean(k), "NET {net} vs {k} {}", mean(k));
    }
}

#[test]
fn weekly_nets_over_four_weeks() {
    let cfg = SimConfig {
        duration: Some(28 * DAY),
        pet_rate: 0.0,
        ..SimConfig::default()
    };
    let out = run_scenario(cfg, Scenario::workload_default(1)).unwrap();
    let kinds: Vec<&str> = out.op_ledger.transactions().map(|t| t.kind().name()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "NET").count(), 4);
    assert_eq!(kinds.iter().filter(|k| **k == "ET").count(), 4);
}

#[test]
fn zero_costs_make_modes_equal() {
    let cfg = SimConfig {
        duration: Some(6 * HOUR),
        costs: CostModel::zero(),
        ..SimConfig::default()
    };
    let cmp = measure_modes(&cfg, &Scenario::workload_default(6), &[1, 2]).unwrap();
    let base = cmp.overhead(Mode::Baseline).unwrap();
    assert_eq!(cmp.overhead(Mode::Bfica).unwrap(), base);
    assert_eq!(cmp.overhead(Mode::B4f).unwrap(), base);
}

#[test]
fn mode_ordering_holds_per_seed() {
    let cfg = SimConfig {
        duration: Some(12 * HOUR),
        ..SimConfig::default()
    };
    for seed in 1..=3 {
        let cmp = measure_modes(&cfg, &Scenario::workload_default(6), &[seed]).unwrap();
        let o = |m| cmp.overhead(m).unwrap();
        assert!(o(Mode::B4f) >= o(Mode::Bfica) && o(Mode::Bfica) >= o(Mode::Baseline), "seed {seed}");
    }
}

fn script(variant: AttackVariant, actors: &[&str], trigger: u64) -> AttackScript {
    AttackScript {
        kind: variant.kind(),
        variant,
        actors: actors.iter().map(|s| s.to_string()).collect(),
        cav: Some("cav1".into()),
        trigger,
    }
}

#[test]
fn collusion_escalates_and_implicates_colluders() {
    let mut s = rear_end();
    s.attacks = vec![script(AttackVariant::AfterPet, &["maker", "tech"], 20 * DAY + 60_000_000)];
    let out = run_scenario(SimConfig::default(), s).unwrap();
    let resolution = out.trace.iter().find(|v| v["ev"] == "resolution").expect("escalated");
    let implicated: Vec<&str> = resolution["implicated"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p[0].as_str().unwrap())
        .collect();
    assert_eq!(implicated, ["maker", "tech"]);
    // the forged NET never reaches the authoritative ledger
    let forged = out.trace.iter().find(|v| v["ev"] == "attack_injected").unwrap()["forged"].clone();
    let forged = forged.as_str().unwrap();
    assert!(out.op_ledger.transactions().all(|t| !t.t_id.to_hex().starts_with(forged)));
}

#[test]
fn pipeline_fake_net_is_caught_by_owner_audit() {
    let r = run_attack(
        &SimConfig::default(),
        &rear_end(),
        &script(AttackVariant::Pipeline, &["tech"], 10 * DAY),
    )
    .unwrap();
    assert!(r.detected);
    assert_eq!(r.mechanism, DetectionMechanism::OwnerReadAudit);
    assert!(r.detection_time_s.unwrap() <= 86_400.0);
}

#[test]
fn sole_source_modification_outcome_is_recorded() {
    let r = run_attack(
        &SimConfig::default(),
        &rear_end(),
        &script(AttackVariant::SoleSource, &["maker"], 20 * DAY),
    )
    .unwrap();
    assert_eq!(r.attack_kind, AttackKind::DpCollusionModify);
    assert_eq!(r.expected_detected, None);
    assert_ne!(r.mechanism, DetectionMechanism::CrossProposerHash);
    assert!(r.note.contains("sole request source"));
}

#[test]
fn bad_attack_roles_are_rejected_before_running() {
    let mut s = rear_end();
    s.attacks = vec![script(AttackVariant::Location, &["tech"], DAY)];
    assert!(run_scenario(SimConfig::default(), s).is_err());
}
