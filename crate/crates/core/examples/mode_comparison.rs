//! Compares the three implementations over a simulated day of generated
//! traffic and prints per-mode means.

use bfica::sim::{measure_modes, Mode, Scenario, SimConfig};
use bfica::time::DAY;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: Vec<u64> = (1..=14).collect();
    let cfg = SimConfig {
        duration: Some(DAY),
        ..SimConfig::default()
    };
    let cmp = measure_modes(&cfg, &Scenario::workload_default(10), &seeds)?;
    println!("mode,ret_overhead_s,pet_verification_s,dp_block_s");
    for mode in Mode::ALL {
        println!(
            "{mode},{:.4},{:.4},{:.4}",
            cmp.overhead(mode).unwrap_or(f64::NAN),
            cmp.pet_verification(mode).unwrap_or(f64::NAN),
            cmp.block_processing(mode).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
