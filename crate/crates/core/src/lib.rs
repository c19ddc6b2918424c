//! Blockchain-based forensic evidence and liability attribution for
//! connected autonomous vehicles.

pub mod adjudication;
pub mod adversary;
pub mod codec;
pub mod crypto;
pub mod dp;
pub mod dump;
pub mod identity;
pub mod offchain;
pub mod op;
pub mod sim;
pub mod time;
pub mod tx;
