use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apo_core::harness::{
    aggregate, reproduce_lower_bound, run_experiment, write_outputs, ExperimentConfig, ExperimentOutput, LearnerKind,
    LearnerSpec,
};
use apo_core::instances::InstanceSpec;
use apo_core::theory::{run_all_checks, TheoryCheckConfig};
use apo_core::Error;
use clap::{Parser, Subcommand};

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "apo", version, about = "Active preference optimization experiments")]
struct Cli {
    /// Base seed from which every run's random stream is derived.
    #[arg(long, global = true)]
    seed_base: Option<u64>,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_path` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare learners with default parameters on one instance.
    Compare {
        /// Instance spec as a JSON file path or an inline JSON object.
        #[arg(long)]
        instance: String,
        /// Comma-separated learner names.
        #[arg(long, value_delimiter = ',', default_value = "apo,uniform")]
        learners: Vec<String>,
        #[arg(long = "T")]
        horizon: usize,
        /// Number of seeds (0..k).
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniform learner versus APO on the lower-bound instance.
    ReproduceLb {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "T")]
        horizon: usize,
        #[arg(long)]
        seeds: usize,
        /// Also write both learners' traces as raw/aggregate CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the numeric lemma checks and print one JSON report per line.
    CheckTheory {
        /// Grid spacing for both grid checks (defaults: 0.1 and 0.05).
        #[arg(long)]
        grid_step: Option<f64>,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Json(_) | Error::InvalidInstance(_) | Error::InvalidFunctionClass(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Run(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { ref config, ref out } => cmd_run(&cli, config, out.clone()),
        Command::Compare {
            ref instance,
            ref learners,
            horizon,
            seeds,
            ref out,
        } => cmd_compare(&cli, instance, learners, horizon, seeds, out.clone()),
        Command::ReproduceLb {
            n,
            horizon,
            seeds,
            ref out,
            json,
        } => cmd_reproduce_lb(&cli, n, horizon, seeds, out.clone(), json),
        Command::CheckTheory { grid_step } => cmd_check_theory(grid_step),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUN_FAILURE)
        }
    }
}

fn finish(cli: &Cli, out: ExperimentOutput, dir: PathBuf) -> Result<(), Failure> {
    write_outputs(&out, &dir)?;
    if !cli.quiet {
        println!("wrote {} runs to {}", out.runs.len(), dir.display());
        for learner in out.aggregates.iter().map(|r| &r.learner).collect::<std::collections::BTreeSet<_>>() {
            if let Some(last) = out.aggregates.iter().rev().find(|r| &r.learner == learner) {
                println!(
                    "{learner}: t = {} mean gap {:.4} (q10 {:.4}, q90 {:.4})",
                    last.t, last.gap_mean, last.gap_q10, last.gap_q90
                );
            }
        }
    }
    if out.failures.is_empty() {
        return Ok(());
    }
    for f in &out.failures {
        eprintln!("run failed: learner {} seed {}: {}", f.learner, f.seed, f.error);
    }
    Err(Failure::Run(format!("{} runs failed", out.failures.len())))
}

fn cmd_run(cli: &Cli, config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| match e {
        Error::Io(io) => Failure::Config(format!("cannot read {}: {io}", config.display())),
        other => Failure::Config(other.to_string()),
    })?;
    if let Some(base) = cli.seed_base {
        cfg.seed_base = base;
    }
    let dir = out
        .or_else(|| cfg.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let result = run_experiment(&cfg)?;
    finish(cli, result, dir)
}

fn default_params(kind: LearnerKind) -> serde_json::Value {
    match kind {
        LearnerKind::BatchApo => serde_json::json!({"B": 10, "solve": true}),
        LearnerKind::ApoGen | LearnerKind::UniformGen => serde_json::json!({"grid": 1.0}),
        _ => serde_json::Value::Null,
    }
}

fn cmd_compare(
    cli: &Cli,
    instance: &str,
    learners: &[String],
    horizon: usize,
    seeds: u64,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let text = if instance.trim_start().starts_with('{') {
        instance.to_string()
    } else {
        std::fs::read_to_string(instance).map_err(|e| Failure::Config(format!("cannot read {instance}: {e}")))?
    };
    let spec: InstanceSpec =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("instance: {e}")))?;
    let mut specs = Vec::new();
    for name in learners {
        let kind = LearnerKind::parse(name.trim()).ok_or_else(|| Failure::Config(format!("unknown learner `{name}`")))?;
        let mut s = LearnerSpec::new(kind);
        s.params = default_params(kind);
        specs.push(s);
    }
    let cfg = ExperimentConfig {
        instance: spec,
        learners: specs,
        horizon,
        seeds: (0..seeds).collect(),
        seed_base: cli.seed_base.unwrap_or(0),
        delta: 0.1,
        lambda_h: None,
        lambda_v: None,
        record_every: None,
        workers: None,
        output_path: None,
    };
    cfg.validate()?;
    let result = run_experiment(&cfg)?;
    finish(cli, result, out.unwrap_or_else(|| PathBuf::from("results")))
}

fn cmd_reproduce_lb(
    cli: &Cli,
    n: usize,
    horizon: usize,
    seeds: usize,
    out: Option<PathBuf>,
    json: bool,
) -> Result<(), Failure> {
    let exp = reproduce_lower_bound(n, horizon, seeds, cli.seed_base.unwrap_or(0))?;
    let r = &exp.report;
    if json {
        println!("{}", serde_json::to_string(r).map_err(|e| Failure::Run(e.to_string()))?);
    } else if !cli.quiet {
        let mut gaps = r.apo_gaps.clone();
        gaps.sort_by(f64::total_cmp);
        let first: Vec<usize> = r.apo_first_bad_query.iter().flatten().copied().collect();
        println!("N = {n}, T = {horizon}, seeds = {seeds}, alpha = {:.5}", r.alpha);
        println!(
            "uniform: bad-context gap = alpha/2 in {:.3} of seeds (guaranteed >= {:.3})",
            r.uniform_bad_gap_fraction, r.uniform_fraction_bound
        );
        println!(
            "apo: gap 0 in {:.3} of seeds; gap median {:.4}, max {:.4}",
            r.apo_zero_gap_fraction,
            gaps[gaps.len() / 2],
            gaps[gaps.len() - 1]
        );
        match first.iter().max() {
            Some(m) if first.len() == seeds => println!("apo: first bad-context query by round {m} in every seed"),
            _ => println!("apo: bad context never queried in {} seeds", seeds - first.len()),
        }
    }
    if let Some(dir) = out {
        let runs = exp.streams();
        let aggregates = aggregate(&runs)?;
        let output = ExperimentOutput {
            runs,
            aggregates,
            failures: Vec::new(),
        };
        write_outputs(&output, &dir)?;
        if !cli.quiet && !json {
            println!("wrote traces to {}", dir.display());
        }
    }
    Ok(())
}

fn cmd_check_theory(grid_step: Option<f64>) -> Result<(), Failure> {
    let mut cfg = TheoryCheckConfig::default();
    if let Some(step) = grid_step {
        if !(step.is_finite() && step > 0.0) {
            return Err(Failure::Config("--grid-step must be finite and > 0".into()));
        }
        cfg.self_concordance_step = step;
        cfg.kl_step = step;
    }
    let reports = run_all_checks(&cfg)?;
    for r in &reports {
        println!("{}", serde_json::to_string(r).map_err(|e| Failure::Run(e.to_string()))?);
    }
    if reports.iter().all(|r| r.ok) {
        Ok(())
    } else {
        Err(Failure::Run("some bound checks failed".into()))
    }
}
