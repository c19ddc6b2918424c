//! Decision partition: request verification, batch blocks, cross-proposer
//! integrity checks, first-level liability decisions and escalation
//! resolution.

mod evidence;
mod ledger;
mod validator;

pub use evidence::{
    first_level_decision, group_cases, integrity_check, CheckKind, CheckResult, ConsistencyReport,
    ConsistencyThresholds, DecisionRule, EvidenceBundle, FirstLevelDecision,
};
pub use ledger::{canonical_order, dp_block_id, BlockContent, DpBlock, DpBlockHeader, DpLedger, DpRejection};
pub use validator::{
    resolve_escalation, unicast_complimentary_evidence, CaseAnalysis, ComplementaryEvidence, DpCluster,
    DpError, DpSubmitReport, DpValidator, WitnessSummary,
};
