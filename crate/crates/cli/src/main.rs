//! Command-line front end: simulate trajectories, replay the observer,
//! batch Monte-Carlo runs, and emit stability certificates.
//!
//! Exit codes: `0` success, `2` containment violation (the enclosures
//! missed the truth at some step), `1` any other error.

use clap::{Parser, Subcommand};
use serde_json::json;
use sisio::config::{build_model, build_scenario, SystemConfig};
use sisio::observer::SystemModel;
use sisio::sim::{
    certify, parse_truth_csv, run_observer, simulate_truth, write_trace_csv, write_truth_csv,
    NoiseMode, RunSummary, Scenario,
};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;

#[derive(Parser)]
#[command(
    name = "sisio",
    about = "Simultaneous input and state interval observer for nonlinear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the true system and write a truth CSV.
    Simulate {
        /// System description (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario horizon.
        #[arg(long)]
        steps: Option<usize>,
        /// Sample noise only at its bounds instead of uniformly.
        #[arg(long)]
        extremal_noise: bool,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the observer over a recorded truth CSV and write the trace.
    Observe {
        #[arg(long)]
        config: PathBuf,
        /// Truth CSV produced by `simulate`.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate and observe over consecutive seeds; write per-seed CSVs and
    /// an aggregate summary.json into a directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds, starting at the scenario seed.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        #[arg(long)]
        extremal_noise: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the stability conditions and width limits, write a JSON report.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

type AppResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Whether any enclosure missed the truth during the command.
#[derive(PartialEq)]
enum Status {
    Clean,
    Violation,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> AppResult<Status> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            steps,
            extremal_noise,
            out,
        } => cmd_simulate(&config, seed, steps, noise_mode(extremal_noise), &out),
        Command::Observe { config, truth, out } => cmd_observe(&config, &truth, &out),
        Command::Run {
            config,
            seeds,
            extremal_noise,
            out,
        } => cmd_run(&config, seeds, noise_mode(extremal_noise), &out),
        Command::Certify { config, out } => cmd_certify(&config, &out),
    }
}

fn noise_mode(extremal: bool) -> NoiseMode {
    if extremal {
        NoiseMode::Extremal
    } else {
        NoiseMode::Uniform
    }
}

fn read_config(path: &Path) -> AppResult<SystemConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    Ok(SystemConfig::from_json(&text)
        .map_err(|e| format!("parsing {}: {e}", path.display()))?)
}

fn cmd_simulate(
    config: &Path,
    seed: Option<u64>,
    steps: Option<usize>,
    mode: NoiseMode,
    out: &Path,
) -> AppResult<Status> {
    let cfg = read_config(config)?;
    let model = build_model(&cfg)?;
    let mut scenario = build_scenario(&cfg)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(steps) = steps {
        scenario.horizon = steps;
    }
    let truth = simulate_truth(&model, &scenario, mode)?;
    if !truth.clipped_steps.is_empty() {
        eprintln!(
            "warning: state clipped to the domain at {} step(s)",
            truth.clipped_steps.len()
        );
    }
    fs::write(out, write_truth_csv(&truth))
        .map_err(|e| format!("writing {}: {e}", out.display()))?;
    println!("wrote {} rows to {}", truth.rows.len(), out.display());
    Ok(Status::Clean)
}

fn cmd_observe(config: &Path, truth_path: &Path, out: &Path) -> AppResult<Status> {
    let cfg = read_config(config)?;
    let model = build_model(&cfg)?;
    let scenario = build_scenario(&cfg)?;
    let text = fs::read_to_string(truth_path)
        .map_err(|e| format!("reading {}: {e}", truth_path.display()))?;
    let truth = parse_truth_csv(&text)?;
    let pair = run_observer(&model, &scenario.x0, &truth)?;
    fs::write(out, write_trace_csv(&pair))
        .map_err(|e| format!("writing {}: {e}", out.display()))?;
    println!(
        "containment {:.4} over {} steps; wrote {}",
        pair.summary.containment_rate,
        pair.summary.steps,
        out.display()
    );
    if let Some(msg) = &pair.summary.error {
        return Err(format!(
            "observer failed at step {}: {msg} (partial trace written)",
            pair.summary.error_step.unwrap_or(0)
        )
        .into());
    }
    Ok(containment_status(&pair.summary))
}

fn containment_status(summary: &RunSummary) -> Status {
    if summary.containment_rate < 1.0 {
        Status::Violation
    } else {
        Status::Clean
    }
}

struct SeedOutcome {
    truth_csv: String,
    trace_csv: String,
    summary: RunSummary,
}

fn run_one_seed(
    model: &SystemModel,
    base: &Scenario,
    seed: u64,
    mode: NoiseMode,
) -> Result<SeedOutcome, String> {
    let mut scenario = base.clone();
    scenario.seed = seed;
    let truth = simulate_truth(model, &scenario, mode).map_err(|e| e.to_string())?;
    let pair = run_observer(model, &scenario.x0, &truth).map_err(|e| e.to_string())?;
    Ok(SeedOutcome {
        truth_csv: write_truth_csv(&truth),
        trace_csv: write_trace_csv(&pair),
        summary: pair.summary,
    })
}

fn cmd_run(config: &Path, seeds: u64, mode: NoiseMode, out_dir: &Path) -> AppResult<Status> {
    let cfg = read_config(config)?;
    let model = build_model(&cfg)?;
    let scenario = build_scenario(&cfg)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| format!("creating {}: {e}", out_dir.display()))?;

    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.scenario.seed + i).collect();
    let workers = std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
        .min(seed_list.len());
    let chunk_size = seed_list.len().div_ceil(workers);

    // seeds fan out over worker threads; the channel collects unordered
    // results which are then sorted by seed, so output is deterministic
    let mut results: Vec<(u64, Result<SeedOutcome, String>)> = Vec::new();
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for chunk in seed_list.chunks(chunk_size) {
            let tx = tx.clone();
            let model = &model;
            let scenario = &scenario;
            scope.spawn(move || {
                for &seed in chunk {
                    let outcome = run_one_seed(model, scenario, seed, mode);
                    if tx.send((seed, outcome)).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
        results.extend(rx);
    });
    results.sort_by_key(|(seed, _)| *seed);

    let mut seed_reports = Vec::new();
    let mut violating_seeds = Vec::new();
    let mut failed_seeds = Vec::new();
    let mut min_rate = f64::INFINITY;
    for (seed, outcome) in &results {
        match outcome {
            Ok(o) => {
                fs::write(out_dir.join(format!("truth_{seed}.csv")), &o.truth_csv)?;
                fs::write(out_dir.join(format!("trace_{seed}.csv")), &o.trace_csv)?;
                if o.summary.containment_rate < 1.0 {
                    violating_seeds.push(*seed);
                }
                if o.summary.error.is_some() {
                    failed_seeds.push(*seed);
                }
                min_rate = min_rate.min(o.summary.containment_rate);
                let mut entry = serde_json::to_value(&o.summary)?;
                entry
                    .as_object_mut()
                    .expect("summary serializes to an object")
                    .insert("seed".to_string(), json!(seed));
                seed_reports.push(entry);
            }
            Err(msg) => {
                failed_seeds.push(*seed);
                seed_reports.push(json!({ "seed": seed, "error": msg }));
            }
        }
    }
    let report = json!({
        "seeds": seed_reports,
        "aggregate": {
            "runs": results.len(),
            "failed_runs": failed_seeds.len(),
            "violating_seeds": violating_seeds,
            "min_containment_rate": if min_rate.is_finite() { json!(min_rate) } else { json!(null) },
            "all_contained": violating_seeds.is_empty() && failed_seeds.is_empty(),
        }
    });
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&report)?)
        .map_err(|e| format!("writing {}: {e}", summary_path.display()))?;
    println!(
        "ran {} seeds; min containment {}; wrote {}",
        results.len(),
        if min_rate.is_finite() {
            format!("{min_rate:.4}")
        } else {
            "n/a".to_string()
        },
        out_dir.display()
    );

    if !failed_seeds.is_empty() {
        return Err(format!("seeds failed: {failed_seeds:?} (outputs written)").into());
    }
    Ok(if violating_seeds.is_empty() {
        Status::Clean
    } else {
        Status::Violation
    })
}

fn cmd_certify(config: &Path, out: &Path) -> AppResult<Status> {
    let cfg = read_config(config)?;
    let model = build_model(&cfg)?;
    let scenario = build_scenario(&cfg)?;
    let report = certify(&model, &scenario.x0)?;
    fs::write(out, serde_json::to_string_pretty(&report)?)
        .map_err(|e| format!("writing {}: {e}", out.display()))?;
    println!(
        "contraction factor {}; condition (i) {}; wrote {}",
        report.contraction_factor,
        report.condition_i.verdict,
        out.display()
    );
    Ok(Status::Clean)
}
