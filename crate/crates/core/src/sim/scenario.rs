//! Line-oriented scenario files. See `scenarios/README.md` for the grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::adversary::{AttackKind, AttackScript, AttackVariant};
use crate::adjudication::LiabilityKind;
use crate::crypto::{hash_parts, Digest};
use crate::identity::{EntityKind, Partition};
use crate::time::{DAY, HOUR, MILLIS, MINUTE, SECOND};
use crate::tx::{ExecutionStatus, InstructionKind, Location, SafetyEvent};

pub const REAR_END_3CAV: &str = include_str!("../../scenarios/rear_end_3cav.scn");

/// Bundled scenarios by name.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "rear_end_3cav" => Some(REAR_END_3CAV),
        _ => None,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read scenario {path}: {msg}")]
    Io { path: String, msg: String },
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Parse { line, msg: msg.into() })
}

/// Hash standing in for a firmware image called `label`.
pub fn firmware_hash(label: &str) -> Digest {
    hash_parts(&[b"firmware", label.as_bytes()])
}

/// Parses `1d+2h`, `90s`, `250ms`, `3m` or plain seconds.
pub fn parse_time(s: &str) -> Option<u64> {
    let mut total = 0u64;
    for term in s.split('+') {
        let split = term.find(|c: char| !c.is_ascii_digit() && c != '.').unwrap_or(term.len());
        let (num, unit) = term.split_at(split);
        let value: f64 = num.parse().ok()?;
        let scale = match unit {
            "" | "s" => SECOND,
            "us" => 1,
            "ms" => MILLIS,
            "m" => MINUTE,
            "h" => HOUR,
            "d" => DAY,
            _ => return None,
        };
        if !(value.is_finite() && value >= 0.0) {
            return None;
        }
        total = total.checked_add((value * scale as f64).round() as u64)?;
    }
    Some(total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipantSpec {
    pub handle: String,
    pub kind: EntityKind,
    pub memberships: Vec<Partition>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceSpec {
    pub cav: String,
    pub subsystem: String,
    pub firmware: String,
    pub install_ts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionSpec {
    pub label: String,
    pub location: Location,
    /// Vehicles in queue order, leader first.
    pub vehicles: Vec<String>,
    /// Vehicle that stopped without cause.
    pub stop: Option<String>,
    /// Subsystem the stopping vehicle's own record blames.
    pub fault: Option<String>,
    pub witnesses: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Net {
        label: String,
        issuer: String,
        cav: String,
        kind: InstructionKind,
        subsystem: String,
        firmware: Option<String>,
    },
    Et {
        cav: String,
        net: String,
        status: ExecutionStatus,
    },
    Ese {
        cav: String,
        event: SafetyEvent,
        location: Location,
    },
    Collision(CollisionSpec),
    /// Sends an ESE straight to one node, bypassing routing.
    Misroute { from: String, to: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedAction {
    pub at: u64,
    pub line: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Level1(String),
    Level2 { kind: LiabilityKind, entity: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub name: String,
    pub participants: Vec<ParticipantSpec>,
    pub pseudonyms: BTreeMap<String, usize>,
    pub manufacturers: BTreeMap<String, String>,
    pub insurers: BTreeMap<String, String>,
    pub devices: Vec<DeviceSpec>,
    pub actions: Vec<TimedAction>,
    pub attacks: Vec<AttackScript>,
    /// Generated PETs and periodic NETs on top of the script.
    pub workload: bool,
    pub duration: Option<u64>,
    pub expectations: Vec<Expectation>,
}

pub const DEFAULT_LOCATION: (f64, f64) = (-33.8688, 151.2093);

struct Fields<'a> {
    line: usize,
    positional: Vec<&'a str>,
    named: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn split(line: usize, text: &'a str) -> Self {
        let mut positional = Vec::new();
        let mut named = BTreeMap::new();
        for w in text.split_whitespace() {
            match w.split_once('=') {
                Some((k, v)) => {
                    named.insert(k, v);
                }
                None => positional.push(w),
            }
        }
        Self { line, positional, named }
    }

    fn arity(&self, min: usize, max: usize) -> Result<(), ScenarioError> {
        let n = self.positional.len() - 1;
        if n < min || n > max {
            let want = if min == max { min.to_string() } else { format!("{min}-{max}") };
            return err(self.line, format!("`{}` takes {want} arguments, got {n}", self.positional[0]));
        }
        Ok(())
    }

    fn time(&self, i: usize) -> Result<u64, ScenarioError> {
        parse_time(self.positional[i])
            .map_or_else(|| err(self.line, format!("bad time `{}`", self.positional[i])), Ok)
    }

    fn number<T: std::str::FromStr>(&self, s: &str) -> Result<T, ScenarioError> {
        s.parse().map_or_else(|_| err(self.line, format!("bad number `{s}`")), Ok)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ScenarioError> {
        match self.named.get(key) {
            None => Ok(default),
            Some(&("yes" | "on" | "true")) => Ok(true),
            Some(&("no" | "off" | "false")) => Ok(false),
            Some(v) => err(self.line, format!("bad value `{v}` for {key}")),
        }
    }

    fn location(&self, lat: Option<&str>, lon: Option<&str>) -> Result<Location, ScenarioError> {
        match (lat, lon) {
            (Some(a), Some(b)) => Ok(Location::from_degrees(self.number(a)?, self.number(b)?)),
            _ => Ok(Location::from_degrees(DEFAULT_LOCATION.0, DEFAULT_LOCATION.1)),
        }
    }
}

fn list(s: &str) -> Vec<String> {
    s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect()
}

impl Scenario {
    /// Loads a bundled scenario by name, or a file by path.
    pub fn load(name_or_path: &str) -> Result<Self, ScenarioError> {
        if let Some(text) = builtin(name_or_path) {
            return Self::parse(text);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: name_or_path.to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut s = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let f = Fields::split(line, content);
            let Some(&keyword) = f.positional.first() else {
                return err(line, "expected a keyword");
            };
            let p = &f.positional;
            match keyword {
                "scenario" => {
                    f.arity(1, 1)?;
                    s.name = p[1].to_string();
                }
                "participant" => {
                    f.arity(2, 3)?;
                    let Some(kind) = EntityKind::parse(p[2]) else {
                        return err(line, format!("unknown entity kind `{}`", p[2]));
                    };
                    let memberships = match p.get(3) {
                        None => kind.default_memberships(),
                        Some(m) => {
                            let mut out = Vec::new();
                            for x in m.split(',') {
                                let part = match x {
                                    "op" => Partition::Op,
                                    "dp" => Partition::Dp,
                                    _ => return err(line, format!("unknown partition `{x}`")),
                                };
                                if kind.role_in(part).is_none() {
                                    return err(line, format!("{kind} has no role in {x}"));
                                }
                                out.push(part);
                            }
                            out
                        }
                    };
                    if s.participant(p[1]).is_some() {
                        return err(line, format!("duplicate participant `{}`", p[1]));
                    }
                    s.participants.push(ParticipantSpec {
                        handle: p[1].to_string(),
                        kind,
                        memberships,
                    });
                }
                "pseudonyms" => {
                    f.arity(2, 2)?;
                    s.expect_kind(line, p[1], &[EntityKind::Vehicle])?;
                    let n: usize = f.number(p[2])?;
                    if n == 0 {
                        return err(line, "pseudonym count must be positive");
                    }
                    s.pseudonyms.insert(p[1].to_string(), n);
                }
                "manufacturer" => {
                    f.arity(2, 2)?;
                    s.expect_kind(line, p[1], &[EntityKind::Vehicle])?;
                    s.expect_kind(line, p[2], &[EntityKind::Manufacturer])?;
                    s.manufacturers.insert(p[1].to_string(), p[2].to_string());
                }
                "insurer" => {
                    f.arity(2, 2)?;
                    s.expect_kind(line, p[1], &[EntityKind::Vehicle])?;
                    s.expect_kind(line, p[2], &[EntityKind::Insurer])?;
                    s.insurers.insert(p[1].to_string(), p[2].to_string());
                }
                "device" => {
                    f.arity(4, 4)?;
                    s.expect_kind(line, p[1], &[EntityKind::Vehicle])?;
                    s.devices.push(DeviceSpec {
                        cav: p[1].to_string(),
                        subsystem: p[2].to_string(),
                        firmware: p[3].to_string(),
                        install_ts: f.time(4)?,
                    });
                }
                "net" => {
                    f.arity(6, 7)?;
                    let label = p[1].to_string();
                    if s.net_defined(&label) {
                        return err(line, format!("duplicate NET label `{label}`"));
                    }
                    s.expect_kind(line, p[3], &[EntityKind::Manufacturer, EntityKind::Technician])?;
                    s.expect_kind(line, p[4], &[EntityKind::Vehicle])?;
                    let Some(kind) = InstructionKind::parse(p[5]) else {
                        return err(line, format!("unknown instruction `{}`", p[5]));
                    };
                    let firmware = p.get(7).map(|x| x.to_string());
                    if kind == InstructionKind::SoftwareUpdate && firmware.is_none() {
                        return err(line, "software_update needs a firmware label");
                    }
                    s.actions.push(TimedAction {
                        at: f.time(2)?,
                        line,
                        action: Action::Net {
                            label,
                            issuer: p[3].to_string(),
                            cav: p[4].to_string(),
                            kind,
                            subsystem: p[6].to_string(),
                            firmware,
                        },
                    });
                }
                "et" => {
                    f.arity(4, 4)?;
                    s.expect_kind(line, p[2], &[EntityKind::Vehicle])?;
                    if !s.net_defined(p[3]) {
                        return err(line, format!("unknown NET label `{}`", p[3]));
                    }
                    let status = match p[4] {
                        "success" => ExecutionStatus::Success,
                        "failure" => ExecutionStatus::Failure,
                        x => return err(line, format!("unknown status `{x}`")),
                    };
                    s.actions.push(TimedAction {
                        at: f.time(1)?,
                        line,
                        action: Action::Et {
                            cav: p[2].to_string(),
                            net: p[3].to_string(),
                            status,
                        },
                    });
                }
                "ese" => {
                    f.arity(3, 5)?;
                    s.expect_kind(line, p[2], &[EntityKind::Vehicle])?;
                    let Some(event) = SafetyEvent::parse(p[3]) else {
                        return err(line, format!("unknown safety event `{}`", p[3]));
                    };
                    s.actions.push(TimedAction {
                        at: f.time(1)?,
                        line,
                        action: Action::Ese {
                            cav: p[2].to_string(),
                            event,
                            location: f.location(p.get(4).copied(), p.get(5).copied())?,
                        },
                    });
                }
                "traffic" => {
                    // traffic <start> <cav,cav> <every> <count>
                    f.arity(4, 4)?;
                    let cavs = list(p[2]);
                    for c in &cavs {
                        s.expect_kind(line, c, &[EntityKind::Vehicle])?;
                    }
                    if cavs.is_empty() {
                        return err(line, "traffic needs vehicles");
                    }
                    let start = f.time(1)?;
                    let every = f.time(3)?;
                    let count: u64 = f.number(p[4])?;
                    for k in 0..count {
                        s.actions.push(TimedAction {
                            at: start + k * every,
                            line,
                            action: Action::Ese {
                                cav: cavs[k as usize % cavs.len()].clone(),
                                event: SafetyEvent::HardBrake,
                                location: f.location(None, None)?,
                            },
                        });
                    }
                }
                "collision" => {
                    f.arity(5, 5)?;
                    let vehicles = list(p[5]);
                    if vehicles.is_empty() {
                        return err(line, "collision needs vehicles");
                    }
                    let unique: BTreeSet<&String> = vehicles.iter().collect();
                    if unique.len() != vehicles.len() {
                        return err(line, "vehicle listed twice");
                    }
                    for v in &vehicles {
                        s.expect_kind(line, v, &[EntityKind::Vehicle])?;
                    }
                    let stop = f.named.get("stop").map(|x| x.to_string());
                    if stop.as_ref().is_some_and(|x| !vehicles.contains(x)) {
                        return err(line, "stop vehicle not in collision");
                    }
                    s.actions.push(TimedAction {
                        at: f.time(2)?,
                        line,
                        action: Action::Collision(CollisionSpec {
                            label: p[1].to_string(),
                            location: f.location(Some(p[3]), Some(p[4]))?,
                            vehicles,
                            stop,
                            fault: f.named.get("fault").filter(|x| **x != "-").map(|x| x.to_string()),
                            witnesses: f.flag("witnesses", true)?,
                        }),
                    });
                }
                "misroute" => {
                    f.arity(3, 3)?;
                    s.expect_kind(line, p[2], &[EntityKind::Vehicle])?;
                    if s.participant(p[3]).is_none() {
                        return err(line, format!("unknown participant `{}`", p[3]));
                    }
                    s.actions.push(TimedAction {
                        at: f.time(1)?,
                        line,
                        action: Action::Misroute {
                            from: p[2].to_string(),
                            to: p[3].to_string(),
                        },
                    });
                }
                "workload" => {
                    f.arity(0, 0)?;
                    s.workload = true;
                }
                "duration" => {
                    f.arity(1, 1)?;
                    s.duration = Some(f.time(1)?);
                }
                "attack" => {
                    // attack <time> <kind> <variant> actors=a,b [cav=x]
                    f.arity(3, 3)?;
                    let Some(kind) = AttackKind::parse(p[2]) else {
                        return err(line, format!("unknown attack `{}`", p[2]));
                    };
                    let Some(variant) = AttackVariant::parse(p[3]).filter(|v| v.kind() == kind) else {
                        return err(line, format!("unknown variant `{}` for {}", p[3], p[2]));
                    };
                    let script = AttackScript {
                        kind,
                        variant,
                        actors: f.named.get("actors").map(|x| list(x)).unwrap_or_default(),
                        cav: f.named.get("cav").map(|x| x.to_string()),
                        trigger: f.time(1)?,
                    };
                    if let Err(e) = script.check_roles(&s) {
                        return err(line, e.to_string());
                    }
                    s.attacks.push(script);
                }
                "expect" => match p.get(1).copied() {
                    Some("level1") => {
                        f.arity(2, 2)?;
                        s.expectations.push(Expectation::Level1(p[2].to_string()));
                    }
                    Some("level2") => {
                        f.arity(3, 3)?;
                        let kind = match p[2] {
                            "product" => LiabilityKind::Product,
                            "service" => LiabilityKind::Service,
                            "negligence" => LiabilityKind::Negligence,
                            x => return err(line, format!("unknown liability kind `{x}`")),
                        };
                        s.expectations.push(Expectation::Level2 {
                            kind,
                            entity: p[3].to_string(),
                        });
                    }
                    _ => return err(line, "expect level1 <cav> | expect level2 <kind> <entity>"),
                },
                _ => return err(line, format!("unknown keyword `{keyword}`")),
            }
        }
        s.actions.sort_by_key(|a| (a.at, a.line));
        Ok(s)
    }

    pub fn participant(&self, handle: &str) -> Option<&ParticipantSpec> {
        self.participants.iter().find(|p| p.handle == handle)
    }

    pub fn kind_of(&self, handle: &str) -> Option<EntityKind> {
        self.participant(handle).map(|p| p.kind)
    }

    pub fn vehicles(&self) -> Vec<String> {
        self.of_kind(EntityKind::Vehicle)
    }

    pub fn of_kind(&self, kind: EntityKind) -> Vec<String> {
        self.participants
            .iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.handle.clone())
            .collect()
    }

    /// Whether `handle` validates in `partition`.
    pub fn validates_in(&self, handle: &str, partition: Partition) -> bool {
        self.participant(handle).is_some_and(|p| {
            p.memberships.contains(&partition) && p.kind.role_in(partition).is_some_and(|r| r.validates())
        })
    }

    fn net_defined(&self, label: &str) -> bool {
        self.actions
            .iter()
            .any(|a| matches!(&a.action, Action::Net { label: l, .. } if l == label))
    }

    fn expect_kind(&self, line: usize, handle: &str, kinds: &[EntityKind]) -> Result<(), ScenarioError> {
        match self.kind_of(handle) {
            None => err(line, format!("unknown participant `{handle}`")),
            Some(k) if kinds.contains(&k) => Ok(()),
            Some(k) => err(line, format!("`{handle}` is a {k}")),
        }
    }

    /// A workload-only scenario: one manufacturer, technician and insurer
    /// validating the operational partition, two decision validators and
    /// `vehicles` vehicles.
    pub fn workload_default(vehicles: usize) -> Self {
        let mut text = String::from(
            "scenario workload\n\
             participant maker manufacturer\n\
             participant tech technician\n\
             participant ins insurer\n\
             participant police legal_authority\n\
             participant transport transport_authority\n\
             workload\n",
        );
        for i in 1..=vehicles {
            text.push_str(&format!(
                "participant cav{i} vehicle\nmanufacturer cav{i} maker\ninsurer cav{i} ins\n"
            ));
        }
        Self::parse(&text).expect("generated scenario parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times() {
        assert_eq!(parse_time("90"), Some(90 * SECOND));
        assert_eq!(parse_time("1d+2h+30s"), Some(DAY + 2 * HOUR + 30 * SECOND));
        assert_eq!(parse_time("250ms"), Some(250 * MILLIS));
        assert_eq!(parse_time("1.5m"), Some(90 * SECOND));
        assert_eq!(parse_time("3w"), None);
        assert_eq!(parse_time(""), None);
    }

    #[test]
    fn builtin_parses() {
        let s = Scenario::load("rear_end_3cav").unwrap();
        assert_eq!(s.name, "rear_end_3cav");
        assert_eq!(s.vehicles().len(), 3);
        assert!(s.actions.windows(2).all(|w| w[0].at <= w[1].at));
        assert!(s.actions.iter().any(|a| matches!(a.action, Action::Collision(_))));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("participant a vehicle\nparticipant a vehicle", 2),
            ("participant a wizard", 1),
            ("\n\nese 1s nobody hard_brake", 3),
            ("participant a vehicle\net 1s a n9 success", 2),
            ("participant a vehicle\nparticipant m manufacturer\nnet n1 1d m a software_update brakes", 3),
            ("frobnicate", 1),
            ("participant a vehicle\ncollision c 1x 0 0 a", 2),
            ("participant a vehicle dp", 1),
        ];
        for (text, line) in cases {
            match Scenario::parse(text) {
                Err(ScenarioError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn traffic_expands_round_robin() {
        let s = Scenario::parse("participant a vehicle\nparticipant b vehicle\ntraffic 10s a,b 1m 3").unwrap();
        let who: Vec<_> = s
            .actions
            .iter()
            .map(|a| match &a.action {
                Action::Ese { cav, .. } => (a.at, cav.clone()),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            who,
            vec![
                (10 * SECOND, "a".into()),
                (70 * SECOND, "b".into()),
                (130 * SECOND, "a".into())
            ]
        );
    }

    #[test]
    fn workload_default_shape() {
        let s = Scenario::workload_default(4);
        assert!(s.workload);
        assert_eq!(s.vehicles().len(), 4);
        assert!(s.validates_in("ins", Partition::Op));
        assert!(s.validates_in("police", Partition::Dp));
        assert!(!s.validates_in("cav1", Partition::Op));
    }

    proptest::proptest! {
        #[test]
        fn time_terms_add_up(d in 0u64..400, h in 0u64..48, m in 0u64..120, s in 0u64..3600) {
            let text = format!("{d}d+{h}h+{m}m+{s}s");
            proptest::prop_assert_eq!(parse_time(&text), Some(d * DAY + h * HOUR + m * MINUTE + s * SECOND));
        }

        #[test]
        fn parse_time_never_panics(text in "[0-9a-z.+-]{0,12}") {
            let _ = parse_time(&text);
        }
    }
}
