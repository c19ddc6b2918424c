//! Issues identities and pseudonyms, then shows that only a legal
//! authority can map a pseudonym back to its vehicle.

use bfica::identity::{CertificateAuthority, EntityKind, Partition};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut ca = CertificateAuthority::new(7);
    let police = ca.issue_identity("police", EntityKind::LegalAuthority, &[Partition::Dp])?;
    let ins = ca.issue_identity("ins", EntityKind::Insurer, &[Partition::Op, Partition::Dp])?;
    let cav = ca.issue_identity("cav1", EntityKind::Vehicle, &[Partition::Op])?;
    ca.register_law_enforcement(&police)?;

    println!("op genesis {}", ca.genesis_credential(Partition::Op).genesis_block_id().to_hex());
    println!("dp genesis {}", ca.genesis_credential(Partition::Dp).genesis_block_id().to_hex());
    println!("cav1 in dp: {}", cav.verifies_under(&ca.genesis_credential(Partition::Dp)));

    let mut set = ca.issue_pseudonyms(&cav, 4)?;
    set.rotate();
    let p = set.active().public();
    println!("active pseudonym #{} {}", set.active_index(), p.short());

    match ca.resolve_pseudonym(&ins, &p) {
        Ok(owner) => println!("insurer resolved {owner}"),
        Err(e) => println!("insurer refused: {e}"),
    }
    println!("police resolved {}", ca.resolve_pseudonym(&police, &p)?);
    for a in ca.audit_log() {
        println!("audit {} {} {}", a.requester, a.pseudonym, a.outcome);
    }
    Ok(())
}
