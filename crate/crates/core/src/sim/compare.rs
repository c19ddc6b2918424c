//! Multi-run drivers: attack runs against an honest twin, and the
//! three-mode overhead comparison.

use std::collections::BTreeSet;

use crate::adversary::{AttackScript, AttackVariant, DetectionReport};
use crate::identity::EntityKind;
use crate::time::{DAY, MINUTE};

use super::config::{Mode, SimConfig};
use super::engine::{run_scenario, RunOutput, SimError};
use super::metrics::{summarize, Metric, MetricsRecord, SummaryRow};
use super::scenario::{Action, Scenario};

type Outcomes = BTreeSet<(Option<String>, Option<(String, String)>)>;

fn outcomes(run: &RunOutput) -> Outcomes {
    run.decisions.iter().map(|d| d.outcome()).collect()
}

/// Every honest outcome survives and no new party is held liable. Extra
/// undecidable cases, such as a modified record split off on its own, do
/// not count as a change.
fn same_decisions(honest: &Outcomes, attacked: &Outcomes) -> bool {
    let liable = |o: &Outcomes| -> BTreeSet<String> { o.iter().filter_map(|(c, _)| c.clone()).collect() };
    honest.is_subset(attacked) && liable(attacked) == liable(honest)
}

/// Runs each script alone against `scenario` and reports whether it was
/// caught and whether the final decisions differ from the honest run.
pub fn run_attack_matrix(
    cfg: &SimConfig,
    scenario: &Scenario,
    scripts: &[AttackScript],
) -> Result<Vec<DetectionReport>, SimError> {
    let mut honest = scenario.clone();
    honest.attacks.clear();
    let baseline = outcomes(&run_scenario(cfg.clone(), honest.clone())?);
    let mut reports = Vec::new();
    for s in scripts {
        let mut attacked = honest.clone();
        attacked.attacks = vec![s.clone()];
        let run = run_scenario(cfg.clone(), attacked)?;
        let mut report = run.detections.first().cloned().expect("one script, one report");
        report.decision_unchanged = Some(same_decisions(&baseline, &outcomes(&run)));
        reports.push(report);
    }
    Ok(reports)
}

pub fn run_attack(cfg: &SimConfig, scenario: &Scenario, script: &AttackScript) -> Result<DetectionReport, SimError> {
    Ok(run_attack_matrix(cfg, scenario, std::slice::from_ref(script))?.remove(0))
}

/// One script per attack variant, aimed at the scenario's first collision.
/// Returns an empty list when the scenario lacks a collision or any of the
/// needed roles.
pub fn standard_matrix(scenario: &Scenario) -> Vec<AttackScript> {
    let Some((tc, collision)) = scenario.actions.iter().find_map(|a| match &a.action {
        Action::Collision(c) => Some((a.at, c)),
        _ => None,
    }) else {
        return Vec::new();
    };
    let Some(cav) = collision.stop.clone().or_else(|| collision.vehicles.first().cloned()) else {
        return Vec::new();
    };
    let first = |k| scenario.of_kind(k).into_iter().next();
    let maker = scenario.manufacturers.get(&cav).cloned().or_else(|| first(EntityKind::Manufacturer));
    let (Some(maker), Some(tech), Some(ins)) = (maker, first(EntityKind::Technician), first(EntityKind::Insurer))
    else {
        return Vec::new();
    };
    let script = |variant: AttackVariant, actors: Vec<String>, trigger: u64| AttackScript {
        kind: variant.kind(),
        variant,
        actors,
        cav: Some(cav.clone()),
        trigger,
    };
    vec![
        script(AttackVariant::Dblock, vec![ins], tc + MINUTE),
        script(AttackVariant::BackDated, vec![tech.clone()], tc + MINUTE),
        script(AttackVariant::Pipeline, vec![tech.clone()], tc.saturating_sub(10 * DAY)),
        script(AttackVariant::AfterPet, vec![maker.clone(), tech], tc + MINUTE),
        script(AttackVariant::Location, vec![maker.clone()], tc),
        script(AttackVariant::Timestamp, vec![maker.clone()], tc),
        script(AttackVariant::SoleSource, vec![maker], tc),
        script(AttackVariant::Witnessed, vec![cav.clone()], tc),
        script(AttackVariant::NoWitnesses, vec![cav.clone()], tc),
    ]
}

/// Per-mode results of [`measure_modes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModeComparison {
    pub seeds: Vec<u64>,
    pub summary: Vec<SummaryRow>,
    pub records: Vec<MetricsRecord>,
}

impl ModeComparison {
    /// Mean over seeds of the per-seed mean of `metric` for `kind`.
    pub fn mean(&self, mode: Mode, kind: &str, metric: Metric) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.mode == mode && r.kind == kind && r.metric == metric)
            .map(|r| r.mean)
    }

    pub fn overhead(&self, mode: Mode) -> Option<f64> {
        self.mean(mode, "RET", Metric::TimeOverhead)
    }

    pub fn pet_verification(&self, mode: Mode) -> Option<f64> {
        self.mean(mode, "PET", Metric::VerificationTime)
    }

    pub fn block_processing(&self, mode: Mode) -> Option<f64> {
        self.mean(mode, "block", Metric::BlockProcessingTime)
    }
}

/// Runs the generated workload for every seed under all three modes.
pub fn measure_modes(base: &SimConfig, scenario: &Scenario, seeds: &[u64]) -> Result<ModeComparison, SimError> {
    let mut records = Vec::new();
    for mode in Mode::ALL {
        for &seed in seeds {
            let cfg = SimConfig {
                seed,
                mode,
                ..base.clone()
            };
            records.extend(run_scenario(cfg, scenario.clone())?.metrics);
        }
    }
    Ok(ModeComparison {
        seeds: seeds.to_vec(),
        summary: summarize(&records),
        records,
    })
}
