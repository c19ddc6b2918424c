use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bfica::adversary::attacks_csv;
use bfica::crypto::hash;
use bfica::dump::{verify_dump, DumpError};
use bfica::sim::scenario::parse_time;
use bfica::sim::{
    emit_metrics, measure_modes, metrics_csv, run_attack_matrix, run_scenario, standard_matrix, workload_stats,
    Mode, Scenario, SimConfig,
};
use bfica::time::DAY;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "bfica", version, about = "Forensic ledger simulator for connected vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the trace, ledgers and decisions.
    Run(Common),
    /// Run attacks against a scenario next to an honest twin.
    Attack(Common),
    /// Compare the three implementations over generated traffic.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 14)]
        runs: u64,
    },
    /// Replay a ledger dump and check every block.
    Verify { file: PathBuf },
    /// Daily PET count statistics for the arrival process.
    Workload {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        /// PETs per day.
        #[arg(long, default_value_t = 42.0)]
        rate: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = bfica::op::DEFAULT_B_MAX)]
    bmax: usize,
    #[arg(long, default_value = "bfica")]
    mode: Mode,
    /// Simulated time limit, e.g. `1d`, `36h`, `90s`.
    #[arg(long, value_parser = duration)]
    duration: Option<u64>,
    /// Built-in scenario name or path to a scenario file.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn duration(s: &str) -> std::result::Result<u64, String> {
    parse_time(s).ok_or_else(|| format!("bad duration `{s}`"))
}

impl Common {
    fn config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            b_max: self.bmax,
            mode: self.mode,
            duration: self.duration,
            ..SimConfig::default()
        }
    }

    fn scenario(&self, default: impl FnOnce() -> Result<Scenario>) -> Result<Scenario> {
        match &self.scenario {
            Some(s) => Ok(Scenario::load(s)?),
            None => default(),
        }
    }
}

fn rear_end() -> Result<Scenario> {
    Ok(Scenario::load("rear_end_3cav")?)
}

/// Writes the files and prints their digests in name order.
fn write_outputs(dir: &Path, mut files: Vec<(&str, String)>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    files.sort_by(|a, b| a.0.cmp(b.0));
    for (name, content) in files {
        std::fs::write(dir.join(name), &content)?;
        println!("sha256 {}  {}", hash(content.as_bytes()).to_hex(), dir.join(name).display());
    }
    Ok(())
}

fn run(c: &Common) -> Result<ExitCode> {
    let out = run_scenario(c.config(), c.scenario(rear_end)?)?;
    for d in &out.decisions {
        let (cav, level2) = d.outcome();
        println!(
            "decision {} liable={} level2={}",
            d.case_id,
            cav.as_deref().unwrap_or("-"),
            level2.map_or_else(|| d.level2_error.clone().unwrap_or_default(), |(k, e)| format!("{k}:{e}"))
        );
    }
    for (e, ok) in &out.expectations {
        println!("expect {e:?} {}", if *ok { "met" } else { "NOT MET" });
    }
    write_outputs(&c.out, out.files())?;
    Ok(if out.expectations_met() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn attack(c: &Common) -> Result<ExitCode> {
    let scenario = c.scenario(rear_end)?;
    let scripts = if scenario.attacks.is_empty() {
        standard_matrix(&scenario)
    } else {
        scenario.attacks.clone()
    };
    if scripts.is_empty() {
        return Err("scenario has no scripted attacks and no collision to aim at".into());
    }
    let reports = run_attack_matrix(&c.config(), &scenario, &scripts)?;
    for r in &reports {
        println!(
            "{:<22} {:<12} detected={:<5} mechanism={:<27} decision_unchanged={}",
            r.attack_kind.name(),
            r.variant.name(),
            r.detected,
            r.mechanism.name(),
            r.decision_unchanged.map_or("-".into(), |u| u.to_string())
        );
    }
    write_outputs(&c.out, vec![("attacks.csv", attacks_csv(&reports))])?;
    Ok(ExitCode::SUCCESS)
}

fn compare(c: &Common, runs: u64) -> Result<ExitCode> {
    let scenario = c.scenario(|| Ok(Scenario::workload_default(10)))?;
    let cfg = SimConfig {
        duration: c.duration.or(Some(DAY)),
        ..c.config()
    };
    let seeds: Vec<u64> = (c.seed..c.seed + runs).collect();
    let cmp = measure_modes(&cfg, &scenario, &seeds)?;
    for mode in Mode::ALL {
        let show = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4}"));
        println!(
            "{mode:<8} overhead={}s pet_verification={}s dp_block={}s",
            show(cmp.overhead(mode)),
            show(cmp.pet_verification(mode)),
            show(cmp.block_processing(mode))
        );
    }
    let (tx, block) = emit_metrics(&cmp.records);
    write_outputs(
        &c.out,
        vec![
            ("metrics.csv", metrics_csv(&cmp.records)),
            ("summary_tx.csv", tx),
            ("summary_block.csv", block),
        ],
    )?;
    Ok(ExitCode::SUCCESS)
}

fn verify(file: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(file)?;
    match verify_dump(&text) {
        Ok(s) => {
            println!(
                "ok {:?} sealed={} transactions={} tip={}",
                s.partition,
                s.sealed_blocks,
                s.transactions,
                s.tip.to_hex()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(DumpError::Chain(e)) => {
            eprintln!("verification failed at height {}: {}", e.height, e.fault);
            Ok(ExitCode::FAILURE)
        }
        Err(e) => {
            eprintln!("malformed dump: {e}");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn workload(seed: u64, runs: u64, rate: f64, out: &Path) -> Result<ExitCode> {
    let stats = workload_stats(seed, runs, rate);
    println!(
        "runs={} rate={} mean={:.4} variance={:.4}",
        stats.runs, stats.rate, stats.mean, stats.variance
    );
    let mut csv = String::from("seed,pets_day1\n");
    for (i, c) in stats.counts.iter().enumerate() {
        csv.push_str(&format!("{},{c}\n", seed + i as u64));
    }
    write_outputs(out, vec![("workload.csv", csv)])?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Attack(c) => attack(c),
        Command::Compare { common, runs } => compare(common, *runs),
        Command::Verify { file } => verify(file),
        Command::Workload { seed, runs, rate, out } => workload(*seed, *runs, *rate, out),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
