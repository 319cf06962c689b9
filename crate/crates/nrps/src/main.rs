//! Command-line entry point: run experiments and emit scenario configs.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use nrps::policies::PolicyKind;
use nrps::report::{export_run, run_policies, RunSpec};
use nrps::scenario::{
    build_scenario, default_balanced_config, default_config, load_scenario, ScenarioConfig,
};
use nrps::Result;

#[derive(Parser)]
#[command(name = "nrps", version, about = "Vehicle-service pricing and supply simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run policies on a scenario and export results
    Run(RunArgs),
    /// Write a scenario config JSON to disk
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config JSON
    #[arg(long)]
    scenario: PathBuf,
    /// Horizon in days
    #[arg(long = "D", visible_alias = "days")]
    days: u32,
    /// Monte-Carlo replications
    #[arg(long, default_value_t = 1)]
    reps: u32,
    /// Base seed for shocks, initial estimates and policy randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated policies: nrps, clairvoyant, myopic, perturbed, random
    #[arg(long, value_delimiter = ',', default_value = "nrps,clairvoyant")]
    policies: Vec<String>,
    /// Output directory (default: $NRPS_OUT_DIR, else ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record every k-th day in the CSVs
    #[arg(long = "record-every", default_value_t = 1)]
    record_every: u32,
    /// Override the scenario's eta
    #[arg(long)]
    eta: Option<f64>,
    /// Override the scenario's rho
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated eta values; one result set per value under
    /// <out>/eta_<value>/ on common seeds
    #[arg(long = "sweep-eta", value_delimiter = ',')]
    sweep_eta: Option<Vec<f64>>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Destination JSON path
    #[arg(long)]
    out: PathBuf,
    /// Preset: "experiment" (asymmetric demand draws) or "balanced"
    /// (symmetric cap-free draws)
    #[arg(long, default_value = "experiment")]
    preset: String,
    /// Number of locations
    #[arg(long, default_value_t = 25)]
    n: usize,
    /// Parameter sampling seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("NRPS_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_one(config: &ScenarioConfig, args: &RunArgs, dir: &PathBuf) -> Result<()> {
    let loaded = build_scenario(config, args.scenario.parent())?;
    for w in &loaded.scenario.warnings {
        eprintln!("warning: {w}");
    }
    let policies = args
        .policies
        .iter()
        .map(|name| PolicyKind::parse(name, loaded.scenario.rho, loaded.scenario.eta))
        .collect::<Result<Vec<_>>>()?;
    let spec = RunSpec {
        horizon: args.days,
        replications: args.reps,
        base_seed: args.seed,
        policies,
        record_every: args.record_every,
    };
    let run = run_policies(&loaded.scenario, &spec)?;
    export_run(dir, &run, &loaded.scenario, &loaded.hash, loaded.seed)?;
    println!(
        "wrote {} ({} policies x {} reps x {} days)",
        dir.display(),
        spec.policies.len(),
        spec.replications,
        spec.horizon
    );
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let mut config = load_scenario(&args.scenario)?.resolved;
    if let Some(rho) = args.rho {
        config.rho = rho;
    }
    if let Some(eta) = args.eta {
        config.eta = eta;
    }
    let base = out_dir(args.out.clone());
    match &args.sweep_eta {
        Some(etas) => {
            for &eta in etas {
                let mut c = config.clone();
                c.eta = eta;
                run_one(&c, args, &base.join(format!("eta_{eta}")))?;
            }
            Ok(())
        }
        None => run_one(&config, args, &base),
    }
}

fn emit_scenario(args: &ScenarioArgs) -> Result<()> {
    let config = match args.preset.as_str() {
        "experiment" => default_config(args.n, args.seed),
        "balanced" => default_balanced_config(args.n, args.seed),
        other => {
            return Err(nrps::Error::Config(format!(
                "unknown preset '{other}' (expected experiment or balanced)"
            )))
        }
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&config)? + "\n")?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Scenario(args) => emit_scenario(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
