//! Second-level liability for a vehicle that stopped after a brake update,
//! across the combinations of execution confirmation and firmware audit.

use bfica::sim::{run_scenario, Scenario, SimConfig};

fn scenario(et: bool, device: Option<&str>) -> String {
    let mut s = String::from(
        "participant maker manufacturer\nparticipant ins insurer\nparticipant police legal_authority\n\
         participant cav1 vehicle\nparticipant cav2 vehicle\n\
         manufacturer cav1 maker\nmanufacturer cav2 maker\ninsurer cav1 ins\ninsurer cav2 ins\n\
         net n1 1d maker cav1 software_update brakes brake-fw-2.1\n",
    );
    if et {
        s.push_str("et 2d cav1 n1 success\n");
    }
    if let Some(fw) = device {
        s.push_str(&format!("device cav1 brakes {fw} 2d\n"));
    }
    s.push_str("collision c1 20d -33.8688 151.2093 cav1,cav2 stop=cav1 fault=brakes\n");
    s
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for et in [true, false] {
        for device in [Some("brake-fw-2.1"), Some("brake-fw-2.0"), None] {
            let out = run_scenario(SimConfig::default(), Scenario::parse(&scenario(et, device))?)?;
            for d in &out.decisions {
                let (cav, level2) = d.outcome();
                println!(
                    "et={et:<5} device={:<13} liable={} level2={}",
                    device.unwrap_or("unreadable"),
                    cav.unwrap_or_default(),
                    level2.map_or_else(|| d.level2_error.clone().unwrap_or_default(), |(k, e)| format!("{k}:{e}"))
                );
            }
        }
    }
    Ok(())
}
