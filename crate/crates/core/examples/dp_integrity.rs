//! A manufacturer alters the location in one vehicle's request. The
//! decision partition compares it with the other proposer's copy.

use bfica::adversary::{AttackScript, AttackVariant};
use bfica::sim::{run_attack, Scenario, SimConfig};
use bfica::time::DAY;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load("rear_end_3cav")?;
    for variant in [AttackVariant::Location, AttackVariant::Timestamp, AttackVariant::SoleSource] {
        let script = AttackScript {
            kind: variant.kind(),
            variant,
            actors: vec!["maker".into()],
            cav: Some("cav1".into()),
            trigger: 20 * DAY,
        };
        let r = run_attack(&SimConfig::default(), &scenario, &script)?;
        println!(
            "{:<12} detected={} via {} decision_unchanged={:?} {}",
            variant.name(),
            r.detected,
            r.mechanism.name(),
            r.decision_unchanged,
            r.note
        );
    }
    Ok(())
}
