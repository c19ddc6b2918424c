//! Stores a collision video off-chain, grants a validator read access,
//! then corrupts one byte and checks the proof of storage against the
//! on-chain hash.

use bfica::crypto::KeyPair;
use bfica::offchain::{Content, OffchainStore, TransferCostModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cav = KeyPair::from_seed([1; 32]).public();
    let validator = KeyPair::from_seed([2; 32]).public();
    let mut store = OffchainStore::new();
    let video = store.put("cav1", cav, Content::synthetic(4 << 20, 9));
    let onchain = video.content_hash;
    println!("stored {} ({} bytes) hash {}", video.handle, video.content.len(), &onchain.to_hex()[..16]);

    println!("validator read before grant: {:?}", store.get(&validator, &video.handle).err());
    store.grant(&video.handle, &cav, validator)?;
    println!("validator read after grant: {} bytes", store.get(&validator, &video.handle)?.len());

    println!("proof: {:?}", store.proof_of_storage(&video.handle, &onchain));
    store.tamper(&video.handle, 1234)?;
    println!("proof after tamper: {:?}", store.proof_of_storage(&video.handle, &onchain));
    store.delete(&video.handle)?;
    println!("proof after delete: {:?}", store.proof_of_storage(&video.handle, &onchain));

    let cost = TransferCostModel::default();
    for gb in [1u64, 2, 4, 8] {
        println!("transfer {gb} GB: {:.1} s", cost.estimate_transfer_time(gb * 1_000_000_000));
    }
    Ok(())
}
