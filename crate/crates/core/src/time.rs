//! Simulated time. Every timestamp in the crate is an integer count of
//! microseconds since the start of a run.

pub const MILLIS: u64 = 1_000;
pub const SECOND: u64 = 1_000_000;
pub const MINUTE: u64 = 60 * SECOND;
pub const HOUR: u64 = 60 * MINUTE;
pub const DAY: u64 = 24 * HOUR;

/// Converts seconds to microseconds, rounding to the nearest tick.
pub fn from_secs(s: f64) -> u64 {
    (s * SECOND as f64).round().max(0.0) as u64
}

pub fn to_secs(t: u64) -> f64 {
    t as f64 / SECOND as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(from_secs(1.5), 1_500_000);
        assert_eq!(to_secs(DAY), 86_400.0);
        assert_eq!(from_secs(-3.0), 0);
    }
}
