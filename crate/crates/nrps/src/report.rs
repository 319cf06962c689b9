//! Run orchestration and results export: the long-format per-day CSV, the
//! aggregated curve CSV for plotting, and the run-metadata JSON.
//!
//! Output bytes are a pure function of the scenario, seed and flags, so a
//! repeated run reproduces files byte for byte.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Scenario;
use crate::policies::PolicyKind;
use crate::rng::Streams;
use crate::simulator::{regret_curve, run_episode, Trajectory};

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub horizon: u32,
    pub replications: u32,
    pub base_seed: u64,
    pub policies: Vec<PolicyKind>,
    pub record_every: u32,
}

impl RunSpec {
    fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.replications < 1 || self.record_every < 1 {
            return Err(Error::Config(
                "horizon, replications and record stride must all be at least 1".into(),
            ));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        Ok(())
    }
}

/// All trajectories of a run plus the pairing needed for regret columns.
#[derive(Debug)]
pub struct RunResult {
    pub spec: RunSpec,
    /// Trajectories in (replication-major, policy order) layout.
    pub trajectories: Vec<Trajectory>,
    /// Per-trajectory time-average regret curves; present when the run
    /// includes the clairvoyant policy.
    pub regret: Vec<Option<Vec<f64>>>,
}

impl RunResult {
    pub fn trajectory(&self, rep: u32, policy_idx: usize) -> &Trajectory {
        &self.trajectories[rep as usize * self.spec.policies.len() + policy_idx]
    }

    pub fn regret_of(&self, rep: u32, policy_idx: usize) -> Option<&[f64]> {
        self.regret[rep as usize * self.spec.policies.len() + policy_idx].as_deref()
    }
}

/// Run every (replication, policy) episode under common random numbers.
/// Replications are independent; day order within an episode is sequential.
pub fn run_policies(scenario: &Scenario, spec: &RunSpec) -> Result<RunResult> {
    spec.validate()?;
    let streams = Streams::new(spec.base_seed);
    let mut trajectories = Vec::with_capacity(spec.replications as usize * spec.policies.len());
    for rep in 0..spec.replications {
        for &kind in &spec.policies {
            trajectories.push(run_episode(kind, scenario, spec.horizon, &streams, rep)?);
        }
    }

    let clair_idx = spec
        .policies
        .iter()
        .position(|p| matches!(p, PolicyKind::Clairvoyant));
    let mut regret = Vec::with_capacity(trajectories.len());
    for rep in 0..spec.replications {
        for policy_idx in 0..spec.policies.len() {
            let traj = &trajectories[rep as usize * spec.policies.len() + policy_idx];
            let r = match clair_idx {
                Some(ci) => {
                    let clair = &trajectories[rep as usize * spec.policies.len() + ci];
                    Some(regret_curve(traj, clair)?)
                }
                None => None,
            };
            regret.push(r);
        }
    }
    Ok(RunResult {
        spec: spec.clone(),
        trajectories,
        regret,
    })
}

fn recorded_days(horizon: u32, stride: u32) -> impl Iterator<Item = u32> {
    (1..=horizon).filter(move |d| (d - 1) % stride == 0)
}

/// Long-format per-day rows, ordered by (replication, policy, day).
pub fn results_csv(run: &RunResult) -> String {
    let mut out = String::from(
        "replication,policy,day,realized_payoff,cum_avg_payoff,regret_cum_avg,est_error,active_set_size,dTh_flag\n",
    );
    let spec = &run.spec;
    for rep in 0..spec.replications {
        for (policy_idx, kind) in spec.policies.iter().enumerate() {
            let traj = run.trajectory(rep, policy_idx);
            let regret = run.regret_of(rep, policy_idx);
            for day in recorded_days(spec.horizon, spec.record_every) {
                let rec = &traj.days[(day - 1) as usize];
                let regret_cell = match regret {
                    Some(r) => format!("{}", r[(day - 1) as usize]),
                    None => String::new(),
                };
                let d_th_flag = match traj.d_th {
                    Some(th) if day >= th => 1,
                    _ => 0,
                };
                let _ = writeln!(
                    out,
                    "{rep},{},{day},{},{},{regret_cell},{},{},{d_th_flag}",
                    kind.label(),
                    rec.payoff,
                    rec.cum_avg_payoff,
                    rec.est_error,
                    rec.active_set_size,
                );
            }
        }
    }
    out
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Replication-aggregated curves in long format: one row per
/// (policy, day, metric) with the mean and standard error across seeds.
pub fn curves_csv(run: &RunResult) -> String {
    let mut out = String::from("policy,day,metric,mean,std_err,replications\n");
    let spec = &run.spec;
    let reps = spec.replications;
    for (policy_idx, kind) in spec.policies.iter().enumerate() {
        for day in recorded_days(spec.horizon, spec.record_every) {
            let idx = (day - 1) as usize;
            let mut metrics: Vec<(&str, Vec<f64>)> = vec![
                (
                    "cum_avg_payoff",
                    (0..reps)
                        .map(|r| run.trajectory(r, policy_idx).days[idx].cum_avg_payoff)
                        .collect(),
                ),
                (
                    "est_error",
                    (0..reps)
                        .map(|r| run.trajectory(r, policy_idx).days[idx].est_error)
                        .collect(),
                ),
            ];
            if run.regret_of(0, policy_idx).is_some() {
                metrics.push((
                    "regret_cum_avg",
                    (0..reps)
                        .map(|r| run.regret_of(r, policy_idx).unwrap()[idx])
                        .collect(),
                ));
            }
            for (metric, values) in metrics {
                let (mean, se) = mean_and_stderr(&values);
                let _ = writeln!(out, "{},{day},{metric},{mean},{se},{reps}", kind.label());
            }
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct RunMetadata {
    pub package_version: String,
    pub scenario_hash: String,
    pub scenario_seed: u64,
    pub base_seed: u64,
    pub horizon: u32,
    pub replications: u32,
    pub record_every: u32,
    pub rho: f64,
    pub eta: f64,
    pub policies: Vec<String>,
    pub scenario_warnings: Vec<String>,
    /// Days solved per solver route, per policy.
    pub solver_path_counts: BTreeMap<String, BTreeMap<String, u64>>,
    /// First cap-free day per replication, per policy; null when caps still
    /// bind at the horizon.
    pub d_th: BTreeMap<String, Vec<Option<u32>>>,
}

pub fn run_metadata(run: &RunResult, scenario: &Scenario, scenario_hash: &str, scenario_seed: u64) -> RunMetadata {
    let spec = &run.spec;
    let mut solver_path_counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut d_th: BTreeMap<String, Vec<Option<u32>>> = BTreeMap::new();
    for (policy_idx, kind) in spec.policies.iter().enumerate() {
        let counts = solver_path_counts.entry(kind.label().into()).or_default();
        let th = d_th.entry(kind.label().into()).or_default();
        for rep in 0..spec.replications {
            let traj = run.trajectory(rep, policy_idx);
            for day in &traj.days {
                *counts.entry(day.solver_path.into()).or_insert(0) += 1;
            }
            th.push(traj.d_th);
        }
    }
    RunMetadata {
        package_version: env!("CARGO_PKG_VERSION").into(),
        scenario_hash: scenario_hash.into(),
        scenario_seed,
        base_seed: spec.base_seed,
        horizon: spec.horizon,
        replications: spec.replications,
        record_every: spec.record_every,
        rho: scenario.rho,
        eta: scenario.eta,
        policies: spec.policies.iter().map(|p| p.label().into()).collect(),
        scenario_warnings: scenario.warnings.clone(),
        solver_path_counts,
        d_th,
    }
}

/// Write results.csv, curves.csv and metadata.json into `out_dir`.
pub fn export_run(
    out_dir: &Path,
    run: &RunResult,
    scenario: &Scenario,
    scenario_hash: &str,
    scenario_seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("results.csv"), results_csv(run))?;
    std::fs::write(out_dir.join("curves.csv"), curves_csv(run))?;
    let meta = run_metadata(run, scenario, scenario_hash, scenario_seed);
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(out_dir.join("metadata.json"), json)?;
    Ok(())
}
