//! Dumps both ledgers of a simulated run, replays them, then flips one
//! character in a sealed block and shows where replay fails.

use bfica::dump::{dump_op, verify_dump, DumpError};
use bfica::sim::{run_scenario, Scenario, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = run_scenario(SimConfig::default(), Scenario::load("rear_end_3cav")?)?;
    let text = dump_op(&out.op_ledger);
    let summary = verify_dump(&text)?;
    println!("op ledger ok: {} sealed, {} txs", summary.sealed_blocks, summary.transactions);

    let at = text.find("block 1 ").ok_or("no sealed block")? + "block 1 ".len();
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    match verify_dump(&String::from_utf8(bytes)?) {
        Err(DumpError::Chain(e)) => println!("tampered dump rejected at height {}: {}", e.height, e.fault),
        Err(e) => println!("tampered dump malformed: {e}"),
        Ok(_) => println!("tampered dump accepted"),
    }
    Ok(())
}
