//! Runs every attack variant against the rear-end scenario and prints the
//! detection report as CSV.

use bfica::adversary::DetectionReport;
use bfica::sim::{run_attack_matrix, standard_matrix, Scenario, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let scenario = Scenario::load("rear_end_3cav")?;
    let cfg = SimConfig { seed, ..SimConfig::default() };
    let reports = run_attack_matrix(&cfg, &scenario, &standard_matrix(&scenario))?;
    println!("{},decision_unchanged,note", DetectionReport::CSV_HEADER);
    for r in &reports {
        println!("{},{:?},{}", r.csv_row(), r.decision_unchanged, r.note);
    }
    Ok(())
}
