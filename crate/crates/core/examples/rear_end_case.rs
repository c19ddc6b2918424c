//! Runs the built-in three-vehicle rear-end scenario and prints the
//! decisions and the trace summary.

use bfica::sim::{run_scenario, Scenario, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load("rear_end_3cav")?;
    let out = run_scenario(SimConfig::default(), scenario)?;
    for d in &out.decisions {
        let (cav, level2) = d.outcome();
        println!(
            "case {} liable vehicle {:?} level2 {:?} failed checks {:?}",
            &d.case_id[..12.min(d.case_id.len())],
            cav,
            level2.or(d.level2_error.clone().map(|e| (e, String::new()))),
            d.failed_checks
        );
    }
    for (e, ok) in &out.expectations {
        println!("expect {e:?}: {}", if *ok { "met" } else { "NOT MET" });
    }
    println!(
        "{} trace events, {} OP txs, {} DP txs, {} partition violations",
        out.trace.len(),
        out.op_ledger.tx_count(),
        out.dp_ledger.transactions().count(),
        out.violations
    );
    Ok(())
}
