//! Day-by-day episode runner: realized payoffs, regret and estimation-error
//! trajectories, cap-activity tracking, and the common-random-number
//! discipline that makes policies comparable.

use ndarray::Array2;

use crate::demand::{realized_demand_checked, sample_shocks};
use crate::error::{Error, Result};
use crate::estimation::squared_error;
use crate::network::{links, Scenario};
use crate::policies::{Decision, PolicyEngine, PolicyKind};
use crate::pricing::flow_imbalance;
use crate::rng::Streams;

/// One simulated day of one episode.
#[derive(Debug, Clone)]
pub struct DayRecord {
    pub day: u32,
    /// Realized per-slot payoff on this day.
    pub payoff: f64,
    /// Average per-slot payoff over days 1..=day.
    pub cum_avg_payoff: f64,
    /// Total squared estimation error of the acting estimate (0 for the
    /// clairvoyant).
    pub est_error: f64,
    /// Cap activity of the solution behind this day's decision (exploration
    /// days inherit the last solved problem's activity).
    pub active_set_size: usize,
    pub solver_path: &'static str,
}

/// Full per-day record of one (policy, replication) episode.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub policy: &'static str,
    pub replication: u32,
    pub base_seed: u64,
    pub days: Vec<DayRecord>,
    /// First day from which every later solve was cap-free; `None` when caps
    /// still bind at the horizon.
    pub d_th: Option<u32>,
}

impl Trajectory {
    pub fn horizon(&self) -> u32 {
        self.days.len() as u32
    }

    pub fn final_cum_avg_payoff(&self) -> f64 {
        self.days.last().map(|d| d.cum_avg_payoff).unwrap_or(0.0)
    }

    pub fn final_est_error(&self) -> f64 {
        self.days.last().map(|d| d.est_error).unwrap_or(0.0)
    }
}

/// Realized per-slot payoff of a decision under one day's shocks: fares from
/// served demand minus supply cost, weighted by travel time.
pub fn realized_payoff(
    decision: &Decision,
    shocks: &Array2<f64>,
    scenario: &Scenario,
) -> Result<f64> {
    let n = scenario.n_locations;
    let mut total = 0.0;
    for (i, j) in links(n) {
        let p = decision.prices[[i, j]];
        let w = decision.supplies[[i, j]];
        let psi = realized_demand_checked(
            scenario.theta.alpha[[i, j]],
            scenario.theta.beta[[i, j]],
            p,
            shocks[[i, j]],
            i,
            j,
        )?;
        let xi = scenario.travel_time[[i, j]];
        total += xi * psi.min(w) * p - xi * w * scenario.cost_c;
    }
    Ok(total)
}

fn estimation_error_of(decision: &Decision, scenario: &Scenario) -> f64 {
    match &decision.meta.estimate {
        None => 0.0,
        Some(theta_hat) => {
            let mut total = 0.0;
            for (i, j) in links(scenario.n_locations) {
                total += squared_error(
                    theta_hat.alpha[[i, j]],
                    theta_hat.beta[[i, j]],
                    scenario.theta.alpha[[i, j]],
                    scenario.theta.beta[[i, j]],
                );
            }
            total
        }
    }
}

fn check_decision(decision: &Decision, scenario: &Scenario) -> Result<()> {
    for (i, j) in links(scenario.n_locations) {
        if decision.prices[[i, j]] > scenario.p_max + 1e-9 {
            return Err(Error::InvalidScenario(format!(
                "price {} above the cap on link ({i},{j})",
                decision.prices[[i, j]]
            )));
        }
        if decision.supplies[[i, j]] < -1e-9 {
            return Err(Error::InvalidScenario(format!(
                "negative supply {} on link ({i},{j})",
                decision.supplies[[i, j]]
            )));
        }
    }
    let imbalance = flow_imbalance(&decision.supplies);
    if imbalance > 1e-9 {
        return Err(Error::SolverFailure {
            iterations: 0,
            residual: imbalance,
        });
    }
    Ok(())
}

/// Run one policy for `horizon` days under the replication's shock stream.
/// Deterministic given (policy, scenario, base seed, replication).
pub fn run_episode(
    kind: PolicyKind,
    scenario: &Scenario,
    horizon: u32,
    streams: &Streams,
    replication: u32,
) -> Result<Trajectory> {
    let n = scenario.n_locations;
    let mut engine = PolicyEngine::new(kind, scenario, streams, replication)?;
    let mut days = Vec::with_capacity(horizon as usize);
    let mut payoff_sum = 0.0;

    for day in 1..=horizon {
        let decision = engine.decide(day).map_err(|e| e.at_day(day))?;
        check_decision(&decision, scenario).map_err(|e| e.at_day(day))?;

        let shocks = sample_shocks(&scenario.shock, streams, replication, day, n);
        let mut realized = Array2::zeros((n, n));
        for (i, j) in links(n) {
            realized[[i, j]] = realized_demand_checked(
                scenario.theta.alpha[[i, j]],
                scenario.theta.beta[[i, j]],
                decision.prices[[i, j]],
                shocks[[i, j]],
                i,
                j,
            )
            .map_err(|e| e.at_day(day))?;
        }
        let mut payoff = 0.0;
        for (i, j) in links(n) {
            let xi = scenario.travel_time[[i, j]];
            let served = realized[[i, j]].min(decision.supplies[[i, j]]);
            payoff += xi * served * decision.prices[[i, j]]
                - xi * decision.supplies[[i, j]] * scenario.cost_c;
        }
        payoff_sum += payoff;

        engine
            .observe(day, &decision.prices, &realized)
            .map_err(|e| e.at_day(day))?;

        days.push(DayRecord {
            day,
            payoff,
            cum_avg_payoff: payoff_sum / day as f64,
            est_error: estimation_error_of(&decision, scenario),
            active_set_size: decision.meta.active_set_size,
            solver_path: decision.meta.solver_path.label(),
        });
    }

    let mut traj = Trajectory {
        policy: kind.label(),
        replication,
        base_seed: streams.base_seed(),
        days,
        d_th: None,
    };
    traj.d_th = detect_d_th(&traj);
    Ok(traj)
}

/// Time-average regret against the clairvoyant trajectory, per day. Both
/// trajectories must come from the same shock stream and replication.
pub fn regret_curve(policy: &Trajectory, clairvoyant: &Trajectory) -> Result<Vec<f64>> {
    if policy.base_seed != clairvoyant.base_seed {
        return Err(Error::StreamMismatch {
            a: policy.base_seed,
            b: clairvoyant.base_seed,
        });
    }
    if policy.replication != clairvoyant.replication || policy.days.len() != clairvoyant.days.len()
    {
        return Err(Error::Config(
            "regret requires trajectories of the same replication and horizon".into(),
        ));
    }
    let mut out = Vec::with_capacity(policy.days.len());
    let mut gap_sum = 0.0;
    for (p, c) in policy.days.iter().zip(&clairvoyant.days) {
        gap_sum += c.payoff - p.payoff;
        out.push(gap_sum / p.day as f64);
    }
    Ok(out)
}

/// Smallest day from which every recorded solve is cap-free through the
/// horizon; `None` if the final day still has active caps.
pub fn detect_d_th(traj: &Trajectory) -> Option<u32> {
    let last_active = traj
        .days
        .iter()
        .rev()
        .find(|d| d.active_set_size > 0)
        .map(|d| d.day);
    match last_active {
        None => Some(1),
        Some(day) if day == traj.horizon() => None,
        Some(day) => Some(day + 1),
    }
}

/// Squared estimation error of the acting estimate per day.
pub fn estimation_error_curve(traj: &Trajectory) -> Vec<f64> {
    traj.days.iter().map(|d| d.est_error).collect()
}
