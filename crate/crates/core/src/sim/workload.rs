//! Generated workload: Poisson PET arrivals and periodic NETs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::crypto::hash_parts;
use crate::time::DAY;
use crate::tx::Location;

use super::scenario::DEFAULT_LOCATION;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum WorkloadKind {
    /// A single-vehicle collision reported by `vehicle`.
    Pet { vehicle: usize, location: Location },
    /// Scheduled update notification for `vehicle`; `round` counts periods.
    Net { vehicle: usize, round: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadEvent {
    pub at: u64,
    pub kind: WorkloadKind,
}

/// Independent RNG for one purpose within a seeded run.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha20Rng {
    let d = hash_parts(&[b"bfica-rng", &seed.to_be_bytes(), label.as_bytes()]);
    ChaCha20Rng::from_seed(*d.as_bytes())
}

/// Arrival times in `[0, duration)` of a Poisson process with `rate_per_day`
/// events per day.
pub fn pet_arrivals(seed: u64, rate_per_day: f64, duration: u64) -> Vec<u64> {
    let mut out = Vec::new();
    if rate_per_day <= 0.0 || duration == 0 {
        return out;
    }
    let mut rng = stream_rng(seed, "pet-arrivals");
    let gap = Exp::new(rate_per_day / DAY as f64).expect("positive rate");
    let mut t = 0.0f64;
    loop {
        t += gap.sample(&mut rng);
        if t >= duration as f64 {
            return out;
        }
        out.push(t as u64);
    }
}

/// PET arrivals assigned uniformly to vehicles, plus one NET per vehicle
/// every `net_period` starting at time zero.
pub fn generate_workload(
    seed: u64,
    rate_per_day: f64,
    net_period: u64,
    duration: u64,
    vehicles: usize,
) -> Vec<WorkloadEvent> {
    let mut events = Vec::new();
    if vehicles == 0 {
        return events;
    }
    let mut rng = stream_rng(seed, "pet-placement");
    for at in pet_arrivals(seed, rate_per_day, duration) {
        let vehicle = rng.gen_range(0..vehicles);
        let location = Location::from_degrees(
            DEFAULT_LOCATION.0 + rng.gen_range(-0.2..0.2),
            DEFAULT_LOCATION.1 + rng.gen_range(-0.2..0.2),
        );
        events.push(WorkloadEvent {
            at,
            kind: WorkloadKind::Pet { vehicle, location },
        });
    }
    let mut round = 0;
    while round * net_period < duration {
        for vehicle in 0..vehicles {
            events.push(WorkloadEvent {
                at: round * net_period,
                kind: WorkloadKind::Net { vehicle, round },
            });
        }
        round += 1;
    }
    events.sort_by_key(|e| e.at);
    events
}

/// Daily PET counts over `days` for one seed.
pub fn daily_counts(seed: u64, rate_per_day: f64, days: u64) -> Vec<u64> {
    let mut counts = vec![0u64; days as usize];
    for t in pet_arrivals(seed, rate_per_day, days * DAY) {
        counts[(t / DAY) as usize] += 1;
    }
    counts
}

/// Summary of first-day PET counts across consecutive seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadStats {
    pub runs: u64,
    pub rate: f64,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub variance: f64,
}

pub fn workload_stats(first_seed: u64, runs: u64, rate_per_day: f64) -> WorkloadStats {
    let counts: Vec<u64> = (0..runs)
        .map(|i| daily_counts(first_seed + i, rate_per_day, 1)[0])
        .collect();
    let n = counts.len().max(1) as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    let variance = counts.iter().map(|c| (*c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    WorkloadStats {
        runs,
        rate: rate_per_day,
        counts,
        mean,
        variance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::HOUR;

    #[test]
    fn zero_rate_no_pets() {
        assert!(pet_arrivals(1, 0.0, 10 * DAY).is_empty());
        let w = generate_workload(1, 0.0, 7 * DAY, DAY, 3);
        assert!(w.iter().all(|e| matches!(e.kind, WorkloadKind::Net { .. })));
    }

    #[test]
    fn weekly_nets() {
        let w = generate_workload(5, 42.0, 7 * DAY, 28 * DAY, 1);
        let nets = w.iter().filter(|e| matches!(e.kind, WorkloadKind::Net { .. })).count();
        assert_eq!(nets, 4);
    }

    #[test]
    fn deterministic_and_sorted() {
        let a = generate_workload(9, 42.0, 7 * DAY, 3 * DAY, 10);
        assert_eq!(a, generate_workload(9, 42.0, 7 * DAY, 3 * DAY, 10));
        assert_ne!(a, generate_workload(10, 42.0, 7 * DAY, 3 * DAY, 10));
        assert!(a.windows(2).all(|w| w[0].at <= w[1].at));
        assert!(a.iter().all(|e| e.at < 3 * DAY));
    }

    #[test]
    fn arrivals_respect_horizon() {
        let a = pet_arrivals(3, 1000.0, HOUR);
        assert!(a.iter().all(|t| *t < HOUR));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
    }

    proptest::proptest! {
        #[test]
        fn workload_sorted_and_in_range(seed in 0u64..1000, rate in 0.0f64..200.0, hours in 0u64..72, vehicles in 0usize..6) {
            let duration = hours * HOUR;
            let w = generate_workload(seed, rate, 7 * DAY, duration, vehicles);
            proptest::prop_assert!(w.windows(2).all(|p| p[0].at <= p[1].at));
            proptest::prop_assert!(w.iter().all(|e| e.at < duration));
            for e in &w {
                let v = match e.kind {
                    WorkloadKind::Pet { vehicle, .. } | WorkloadKind::Net { vehicle, .. } => vehicle,
                };
                proptest::prop_assert!(v < vehicles);
            }
        }
    }
}
