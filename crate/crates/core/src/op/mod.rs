//! Operational partition: dynamic-block validation, consensus by
//! computational consistency, rollback-and-replay and escalation.

mod cluster;
mod ledger;
mod validator;

pub use cluster::{
    AgreementRule, ConsensusRound, DivergenceCause, EscalationSnapshot, OpCluster, Recovery,
    Resolution, RoundOutcome, RoundReport, TamperFinding, ValidatorView,
};
pub(crate) use ledger::check_block;
pub use ledger::{
    fold, fold_step, ChainError, ChainFault, DynamicBlock, DynamicBlockHeader, OpError, OpLedger,
    SealedBlock, DEFAULT_B_MAX,
};
pub use validator::{Checkpoint, OpValidator, Proposal, Rejection, Verdict};
