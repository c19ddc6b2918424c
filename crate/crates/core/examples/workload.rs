//! Daily PET counts of the arrival process over many seeds, with a
//! histogram of the first day.

use bfica::sim::workload_stats;

fn main() {
    let stats = workload_stats(1, 500, 42.0);
    println!("runs {} mean {:.2} variance {:.2}", stats.runs, stats.mean, stats.variance);
    let (lo, hi) = (25u64, 60u64);
    for bucket in (lo..hi).step_by(5) {
        let n = stats.counts.iter().filter(|c| (bucket..bucket + 5).contains(*c)).count();
        println!("{bucket:>3}-{:<3} {}", bucket + 4, "#".repeat(n / 2));
    }
}
