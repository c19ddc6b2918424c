//! Three operational validators agree on a few transactions. One of them
//! then drops a PET from its dynamic block; the next round diverges, the
//! tampered copy is rolled back and replayed from the agreed prefix.

use bfica::crypto::hash;
use bfica::identity::{CertificateAuthority, EntityKind, Partition};
use bfica::op::{AgreementRule, OpCluster, OpValidator, Recovery};
use bfica::tx::{make_ese, make_pet, CollisionRecord, Location, SafetyEvent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ca = CertificateAuthority::new(3);
    for (h, k) in [("maker", EntityKind::Manufacturer), ("tech", EntityKind::Technician), ("ins", EntityKind::Insurer)] {
        ca.issue_identity(h, k, &k.default_memberships())?;
    }
    let cav = ca.issue_identity("cav1", EntityKind::Vehicle, &[Partition::Op])?;
    let dir = ca.directory(Partition::Op);
    let validators = ["maker", "tech", "ins"].iter().map(|h| OpValidator::new(*h, dir.clone(), 7)).collect();
    let mut cluster = OpCluster::new(validators, AgreementRule::Unanimity);

    let here = Location::from_degrees(-33.8688, 151.2093);
    let record = CollisionRecord::new(here, 5_000_000, vec![0], hash(b"dashcam"), vec![]);
    let pet = make_pet(&cav.keys, record, 5_000_000)?;
    for tx in [make_ese(&cav.keys, SafetyEvent::HardBrake, here, 1_000_000), pet.clone()] {
        let r = cluster.submit(&tx).expect("cluster not blocked");
        println!("{} accepted={} {:?}", tx.kind().name(), r.accepted, r.round.outcome);
    }

    cluster.validator_mut("tech").unwrap().ledger_mut().tamper_remove(&pet.t_id);
    let r = cluster
        .submit(&make_ese(&cav.keys, SafetyEvent::HardBrake, here, 9_000_000))
        .expect("cluster not blocked");
    println!("after tampering: {:?}", r.round.outcome);
    for (v, id) in &r.round.proposed_ids {
        println!("  {v} proposed {}", &id.to_hex()[..16]);
    }
    match r.recovery {
        Some(Recovery::Recovered { findings }) | Some(Recovery::Escalated { findings }) => {
            for f in findings {
                println!("  {} caught by {:?}, missing {}", f.validator, f.cause, f.missing.len());
            }
        }
        None => println!("  nothing to recover"),
    }
    for v in cluster.validators() {
        println!("{} block id {} holds pet: {}", v.handle, &v.header().block_id.to_hex()[..16], v.ledger().contains(&pet.t_id));
    }
    Ok(())
}
