use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudication::AdjudicationPolicy;
use crate::dp::{BlockContent, ConsistencyThresholds};
use crate::offchain::TransferCostModel;
use crate::time::{DAY, MILLIS, MINUTE, SECOND};

pub const DEFAULT_CALIBRATION: &str = include_str!("../../calibration/default_costs.toml");

/// Implementation being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full data on both ledgers, hashed and encrypted.
    Bfica,
    /// Same flow without hashing or encryption.
    Baseline,
    /// Only hashes on-chain; data in a per-validator personal store.
    B4f,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Bfica, Mode::Baseline, Mode::B4f];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Bfica => "bfica",
            Mode::Baseline => "baseline",
            Mode::B4f => "b4f",
        }
    }

    pub fn dp_content(self) -> BlockContent {
        match self {
            Mode::B4f => BlockContent::HashOnly,
            _ => BlockContent::FullData,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown mode {s}")))
    }
}

/// Per-operation processing costs, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub verify_sig: f64,
    pub policy_check: f64,
    pub hash_per_kb: f64,
    pub encrypt_per_kb: f64,
    pub completeness_check: f64,
    pub fold: f64,
    pub consistency_round: f64,
    pub dp_checks: f64,
    pub storage_retrieval: f64,
    pub dp_block_base: f64,
    pub sign: f64,
}

impl CostModel {
    pub fn zero() -> Self {
        Self {
            verify_sig: 0.0,
            policy_check: 0.0,
            hash_per_kb: 0.0,
            encrypt_per_kb: 0.0,
            completeness_check: 0.0,
            fold: 0.0,
            consistency_round: 0.0,
            dp_checks: 0.0,
            storage_retrieval: 0.0,
            dp_block_base: 0.0,
            sign: 0.0,
        }
    }

    fn fields(&self) -> [f64; 11] {
        [
            self.verify_sig,
            self.policy_check,
            self.hash_per_kb,
            self.encrypt_per_kb,
            self.completeness_check,
            self.fold,
            self.consistency_round,
            self.dp_checks,
            self.storage_retrieval,
            self.dp_block_base,
            self.sign,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.fields().iter().all(|c| c.is_finite() && *c >= 0.0)
    }

    /// Costs as seen by `mode`: the baseline neither hashes nor encrypts.
    pub fn for_mode(&self, mode: Mode) -> Self {
        let mut c = *self;
        if mode == Mode::Baseline {
            c.hash_per_kb = 0.0;
            c.encrypt_per_kb = 0.0;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub costs: CostModel,
    pub transfer: TransferCostModel,
}

impl Calibration {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: Calibration = toml::from_str(text).map_err(|e| ConfigError::Calibration(e.to_string()))?;
        if !c.costs.is_valid() || !c.transfer.is_valid() {
            return Err(ConfigError::Invalid("calibration costs must be nonnegative".into()));
        }
        Ok(c)
    }
}

impl Default for Calibration {
    fn default() -> Self {
        Self::parse(DEFAULT_CALIBRATION).expect("bundled calibration parses")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Simulation parameters. Times are microseconds unless noted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub b_max: usize,
    /// Stop after this much simulated time. `None` runs until the script
    /// and all follow-up work are done.
    pub duration: Option<u64>,
    /// Generated PETs per simulated day.
    pub pet_rate: f64,
    pub net_period: u64,
    pub latency_min: u64,
    pub latency_max: u64,
    pub costs: CostModel,
    pub transfer: TransferCostModel,
    pub mode: Mode,
    pub thresholds: ConsistencyThresholds,
    pub policy: AdjudicationPolicy,
    /// Delay between a PET's validation and its RETs.
    pub request_delay: u64,
    /// Quiet period after which a case is decided.
    pub settle: u64,
    pub owner_audit_period: u64,
    /// Size of the synthetic video stored per collision record, bytes.
    pub video_size: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let cal = Calibration::default();
        Self {
            seed: 1,
            b_max: crate::op::DEFAULT_B_MAX,
            duration: None,
            pet_rate: 42.0,
            net_period: 7 * DAY,
            latency_min: 5 * MILLIS,
            latency_max: 50 * MILLIS,
            costs: cal.costs,
            transfer: cal.transfer,
            mode: Mode::Bfica,
            thresholds: ConsistencyThresholds::default(),
            policy: AdjudicationPolicy::default(),
            request_delay: 30 * SECOND,
            settle: 10 * MINUTE,
            owner_audit_period: DAY,
            video_size: 64 * 1024,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.b_max == 0 {
            return bad("b_max must be at least 1");
        }
        if !(self.pet_rate.is_finite() && self.pet_rate >= 0.0) {
            return bad("pet_rate must be nonnegative");
        }
        if self.latency_min > self.latency_max {
            return bad("latency_min exceeds latency_max");
        }
        if self.net_period == 0 || self.owner_audit_period == 0 {
            return bad("periods must be positive");
        }
        if !self.costs.is_valid() || !self.transfer.is_valid() {
            return bad("costs must be nonnegative");
        }
        Ok(())
    }

    pub fn with_calibration(mut self, cal: &Calibration) -> Self {
        self.costs = cal.costs;
        self.transfer = cal.transfer;
        self
    }

    /// Effective costs for the configured mode.
    pub fn effective_costs(&self) -> CostModel {
        self.costs.for_mode(self.mode)
    }
}
