//! The five decision policies behind a uniform per-day interface.
//!
//! Learning policies (everything except the clairvoyant) are constructed from
//! a [`ProviderView`] that carries travel times, economics, the parameter
//! rectangle and the shock correction, but never the true demand parameters;
//! the type system enforces the information boundary.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimation::{estimate, project, LinkHistory};
use crate::network::{links, DemandParams, ParamBounds, Scenario};
use crate::pricing::{solve_day, Market, PricingSolution, SolverPath};
use crate::rng::Streams;

/// Policy selector with its control parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Nrps { rho: f64, eta: f64 },
    Clairvoyant,
    Myopic,
    PerturbedMyopic { rho: f64, eta: f64 },
    Random,
}

impl PolicyKind {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Nrps { .. } => "nrps",
            PolicyKind::Clairvoyant => "clairvoyant",
            PolicyKind::Myopic => "myopic",
            PolicyKind::PerturbedMyopic { .. } => "perturbed",
            PolicyKind::Random => "random",
        }
    }

    /// Parse a CLI policy name, attaching the scenario's control parameters
    /// where the policy needs them.
    pub fn parse(name: &str, rho: f64, eta: f64) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "nrps" => Ok(PolicyKind::Nrps { rho, eta }),
            "clairvoyant" => Ok(PolicyKind::Clairvoyant),
            "myopic" => Ok(PolicyKind::Myopic),
            "perturbed" | "perturbed_myopic" | "perturbed-myopic" => {
                Ok(PolicyKind::PerturbedMyopic { rho, eta })
            }
            "random" => Ok(PolicyKind::Random),
            other => Err(Error::Config(format!(
                "unknown policy '{other}' (expected nrps, clairvoyant, myopic, perturbed, random)"
            ))),
        }
    }
}

/// What a learning policy is allowed to see.
#[derive(Debug, Clone)]
pub struct ProviderView {
    pub xi: Array2<f64>,
    pub bounds: ParamBounds,
    pub cost_c: f64,
    pub p_max: f64,
    pub eps_minus: Array2<f64>,
}

impl ProviderView {
    pub fn from_scenario(s: &Scenario) -> Self {
        ProviderView {
            xi: s.travel_time.clone(),
            bounds: s.bounds,
            cost_c: s.cost_c,
            p_max: s.p_max,
            eps_minus: s.eps_minus.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.xi.nrows()
    }

    pub fn market(&self) -> Market<'_> {
        Market {
            xi: &self.xi,
            cost_c: self.cost_c,
            p_max: self.p_max,
        }
    }
}

/// Per-day decision with bookkeeping for the simulator.
#[derive(Debug, Clone)]
pub struct Decision {
    pub prices: Array2<f64>,
    pub supplies: Array2<f64>,
    pub meta: DecisionMeta,
}

#[derive(Debug, Clone)]
pub struct DecisionMeta {
    pub policy: &'static str,
    pub day: u32,
    /// Estimate the decision acted on; `None` for the clairvoyant.
    pub estimate: Option<DemandParams>,
    /// Supply offset applied on exploration days.
    pub supply_offset: Option<f64>,
    pub active_set_size: usize,
    pub solver_path: SolverPath,
}

/// Draw an initial estimate uniformly from the parameter rectangle; every
/// learning policy in a replication shares this draw.
pub fn draw_initial_estimate(
    bounds: &ParamBounds,
    streams: &Streams,
    rep: u32,
    n: usize,
) -> DemandParams {
    let mut alpha = Array2::zeros((n, n));
    let mut beta = Array2::zeros((n, n));
    for (i, j) in links(n) {
        let mut rng = streams.theta0(rep, i, j, n);
        alpha[[i, j]] = rng.random_range(bounds.alpha_min..=bounds.alpha_max);
        beta[[i, j]] = rng.random_range(bounds.beta_min..=bounds.beta_max);
    }
    DemandParams { alpha, beta }
}

fn decision_from_solution(
    policy: &'static str,
    day: u32,
    sol: &PricingSolution,
    estimate: Option<DemandParams>,
) -> Decision {
    Decision {
        prices: sol.prices.clone(),
        supplies: sol.supplies.clone(),
        meta: DecisionMeta {
            policy,
            day,
            estimate,
            supply_offset: None,
            active_set_size: sol.active_set.len(),
            solver_path: sol.solver_path,
        },
    }
}

/// Estimate-and-optimize on odd days; on even days re-implement the last odd
/// decision with a decaying price cut and matching supply bump, which keeps
/// flow balance intact while creating the price dispersion the regression
/// needs.
pub struct NrpsPolicy {
    view: ProviderView,
    rho: f64,
    eta: f64,
    histories: Vec<LinkHistory>,
    theta_hat: DemandParams,
    cached: Option<PricingSolution>,
}

impl NrpsPolicy {
    pub fn new(view: ProviderView, theta0: DemandParams, rho: f64, eta: f64) -> Self {
        let n = view.n();
        NrpsPolicy {
            view,
            rho,
            eta,
            histories: vec![LinkHistory::new(); n * n],
            theta_hat: theta0,
            cached: None,
        }
    }

    fn refit(&mut self) -> Result<()> {
        let n = self.view.n();
        for (i, j) in links(n) {
            let est = estimate(&self.histories[i * n + j], &self.view.bounds)?;
            self.theta_hat.alpha[[i, j]] = est.alpha_hat;
            self.theta_hat.beta[[i, j]] = est.beta_hat;
        }
        Ok(())
    }

    pub fn decide(&mut self, day: u32) -> Result<Decision> {
        if day % 2 == 1 {
            if day > 1 {
                self.refit()?;
            }
            let sol = solve_day(&self.theta_hat, &self.view.market(), &self.view.eps_minus)?;
            let decision = decision_from_solution("nrps", day, &sol, Some(self.theta_hat.clone()));
            self.cached = Some(sol);
            Ok(decision)
        } else {
            let sol = self.cached.as_ref().ok_or_else(|| {
                Error::InvalidScenario("even day reached without a cached odd solution".into())
            })?;
            let n = self.view.n();
            let decay = (day as f64).powf(-self.eta);
            let mut prices = sol.prices.clone();
            let mut supplies = sol.supplies.clone();
            for (i, j) in links(n) {
                prices[[i, j]] -= self.rho / self.theta_hat.beta[[i, j]] * decay;
                supplies[[i, j]] += self.rho * decay;
            }
            Ok(Decision {
                prices,
                supplies,
                meta: DecisionMeta {
                    policy: "nrps",
                    day,
                    estimate: Some(self.theta_hat.clone()),
                    supply_offset: Some(self.rho * decay),
                    active_set_size: sol.active_set.len(),
                    solver_path: sol.solver_path,
                },
            })
        }
    }

    pub fn observe(&mut self, day: u32, prices: &Array2<f64>, realized: &Array2<f64>) -> Result<()> {
        let n = self.view.n();
        for (i, j) in links(n) {
            self.histories[i * n + j].push(day, prices[[i, j]], realized[[i, j]])?;
        }
        Ok(())
    }
}

/// Re-estimate and re-optimize every day. While its own constant prices leave
/// the regression underdetermined, only the intercept is refreshed (holding
/// the current slope); the slope starts moving once price dispersion exists.
pub struct MyopicPolicy {
    view: ProviderView,
    histories: Vec<LinkHistory>,
    theta_hat: DemandParams,
    /// Exploration offsets applied every day (the perturbed variant).
    offsets: Option<(f64, f64)>,
    label: &'static str,
}

impl MyopicPolicy {
    pub fn new(view: ProviderView, theta0: DemandParams) -> Self {
        let n = view.n();
        MyopicPolicy {
            view,
            histories: vec![LinkHistory::new(); n * n],
            theta_hat: theta0,
            offsets: None,
            label: "myopic",
        }
    }

    pub fn perturbed(view: ProviderView, theta0: DemandParams, rho: f64, eta: f64) -> Self {
        let mut p = Self::new(view, theta0);
        p.offsets = Some((rho, eta));
        p.label = "perturbed";
        p
    }

    fn refit(&mut self) {
        let n = self.view.n();
        for (i, j) in links(n) {
            let h = &self.histories[i * n + j];
            match estimate(h, &self.view.bounds) {
                Ok(est) => {
                    self.theta_hat.alpha[[i, j]] = est.alpha_hat;
                    self.theta_hat.beta[[i, j]] = est.beta_hat;
                }
                Err(Error::DegenerateHistory) if !h.is_empty() => {
                    // no price dispersion yet: refresh the intercept at the
                    // current slope, leave the slope untouched
                    let raw_alpha = h.mean_demand() + self.theta_hat.beta[[i, j]] * h.mean_price();
                    let (alpha_hat, _) =
                        project(raw_alpha, self.theta_hat.beta[[i, j]], &self.view.bounds);
                    self.theta_hat.alpha[[i, j]] = alpha_hat;
                }
                Err(_) => {}
            }
        }
    }

    pub fn decide(&mut self, day: u32) -> Result<Decision> {
        if day > 1 {
            self.refit();
        }
        let sol = solve_day(&self.theta_hat, &self.view.market(), &self.view.eps_minus)?;
        let mut decision =
            decision_from_solution(self.label, day, &sol, Some(self.theta_hat.clone()));
        if let Some((rho, eta)) = self.offsets {
            let n = self.view.n();
            let decay = (day as f64).powf(-eta);
            for (i, j) in links(n) {
                decision.prices[[i, j]] -= rho / self.theta_hat.beta[[i, j]] * decay;
                decision.supplies[[i, j]] += rho * decay;
            }
            decision.meta.supply_offset = Some(rho * decay);
        }
        Ok(decision)
    }

    pub fn observe(&mut self, day: u32, prices: &Array2<f64>, realized: &Array2<f64>) -> Result<()> {
        let n = self.view.n();
        for (i, j) in links(n) {
            self.histories[i * n + j].push(day, prices[[i, j]], realized[[i, j]])?;
        }
        Ok(())
    }
}

/// Guess the parameters uniformly from the rectangle every day and optimize
/// as if the guess were true.
pub struct RandomPolicy {
    view: ProviderView,
    streams: Streams,
    rep: u32,
}

impl RandomPolicy {
    pub fn new(view: ProviderView, streams: Streams, rep: u32) -> Self {
        RandomPolicy { view, streams, rep }
    }

    pub fn decide(&mut self, day: u32) -> Result<Decision> {
        let n = self.view.n();
        let b = self.view.bounds;
        let mut theta = DemandParams {
            alpha: Array2::zeros((n, n)),
            beta: Array2::zeros((n, n)),
        };
        for (i, j) in links(n) {
            let mut rng = self.streams.random_policy(self.rep, day, i, j, n);
            theta.alpha[[i, j]] = rng.random_range(b.alpha_min..=b.alpha_max);
            theta.beta[[i, j]] = rng.random_range(b.beta_min..=b.beta_max);
        }
        let sol = solve_day(&theta, &self.view.market(), &self.view.eps_minus)?;
        Ok(decision_from_solution("random", day, &sol, Some(theta)))
    }
}

/// Full-information benchmark: the day problem under the true parameters,
/// solved once and reused (the optimum is day-invariant).
pub struct ClairvoyantPolicy {
    solution: PricingSolution,
}

impl ClairvoyantPolicy {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let solution = solve_day(&scenario.theta, &scenario.market(), &scenario.eps_minus)?;
        Ok(ClairvoyantPolicy { solution })
    }

    pub fn decide(&self, day: u32) -> Decision {
        decision_from_solution("clairvoyant", day, &self.solution, None)
    }

    pub fn solution(&self) -> &PricingSolution {
        &self.solution
    }
}

/// Uniform engine over the five policies, owning per-episode mutable state.
pub enum PolicyEngine {
    Nrps(NrpsPolicy),
    Clairvoyant(ClairvoyantPolicy),
    Myopic(MyopicPolicy),
    PerturbedMyopic(MyopicPolicy),
    Random(RandomPolicy),
}

impl PolicyEngine {
    pub fn new(kind: PolicyKind, scenario: &Scenario, streams: &Streams, rep: u32) -> Result<Self> {
        let view = ProviderView::from_scenario(scenario);
        let n = view.n();
        let theta0 = draw_initial_estimate(&scenario.bounds, streams, rep, n);
        Ok(match kind {
            PolicyKind::Nrps { rho, eta } => {
                PolicyEngine::Nrps(NrpsPolicy::new(view, theta0, rho, eta))
            }
            PolicyKind::Clairvoyant => PolicyEngine::Clairvoyant(ClairvoyantPolicy::new(scenario)?),
            PolicyKind::Myopic => PolicyEngine::Myopic(MyopicPolicy::new(view, theta0)),
            PolicyKind::PerturbedMyopic { rho, eta } => {
                PolicyEngine::PerturbedMyopic(MyopicPolicy::perturbed(view, theta0, rho, eta))
            }
            PolicyKind::Random => PolicyEngine::Random(RandomPolicy::new(view, *streams, rep)),
        })
    }

    pub fn decide(&mut self, day: u32) -> Result<Decision> {
        match self {
            PolicyEngine::Nrps(p) => p.decide(day),
            PolicyEngine::Clairvoyant(p) => Ok(p.decide(day)),
            PolicyEngine::Myopic(p) | PolicyEngine::PerturbedMyopic(p) => p.decide(day),
            PolicyEngine::Random(p) => p.decide(day),
        }
    }

    pub fn observe(&mut self, day: u32, prices: &Array2<f64>, realized: &Array2<f64>) -> Result<()> {
        match self {
            PolicyEngine::Nrps(p) => p.observe(day, prices, realized),
            PolicyEngine::Myopic(p) | PolicyEngine::PerturbedMyopic(p) => {
                p.observe(day, prices, realized)
            }
            PolicyEngine::Clairvoyant(_) | PolicyEngine::Random(_) => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{ShockField, ShockSpec};
    use crate::pricing::flow_imbalance;

    fn symmetric_scenario(n: usize) -> Scenario {
        let mut xi = Array2::from_elem((n, n), 1.0);
        for i in 0..n {
            xi[[i, i]] = 0.0;
        }
        Scenario::new(
            xi,
            DemandParams::uniform(n, 3.75, 2.5),
            ParamBounds::new(3.5, 4.0, 2.0, 3.0).unwrap(),
            ShockField::shared(ShockSpec::degenerate_zero()),
            0.1,
            1.0,
            2.0,
            0.45,
        )
        .unwrap()
    }

    #[test]
    fn nrps_day_one_with_true_initial_estimate_matches_clairvoyant() {
        let s = symmetric_scenario(3);
        let clair = ClairvoyantPolicy::new(&s).unwrap();
        let mut nrps = NrpsPolicy::new(
            ProviderView::from_scenario(&s),
            s.theta.clone(),
            s.rho,
            s.eta,
        );
        let d1 = nrps.decide(1).unwrap();
        let c1 = clair.decide(1);
        assert_eq!(d1.prices, c1.prices);
        assert_eq!(d1.supplies, c1.supplies);
    }

    #[test]
    fn nrps_even_day_offsets_match_the_schedule() {
        let s = symmetric_scenario(3);
        let mut nrps =
            NrpsPolicy::new(ProviderView::from_scenario(&s), s.theta.clone(), 2.0, 0.45);
        let d1 = nrps.decide(1).unwrap();
        nrps.observe(1, &d1.prices, &d1.supplies).unwrap();
        let d2 = nrps.decide(2).unwrap();
        // price offset: rho / beta-hat * 2^-eta with rho=2, eta=0.45, beta=2.5
        let expected = 2.0 / 2.5 * (2.0f64).powf(-0.45);
        assert!((expected - 0.5856).abs() < 1e-4);
        for (i, j) in links(3) {
            let gap = d1.prices[[i, j]] - d2.prices[[i, j]];
            assert!((gap - expected).abs() < 1e-12);
            let bump = d2.supplies[[i, j]] - d1.supplies[[i, j]];
            assert!((bump - 2.0 * (2.0f64).powf(-0.45)).abs() < 1e-12);
        }
        // equal additive supply offsets cancel node by node
        assert!(flow_imbalance(&d2.supplies) <= 1e-12);
        assert_eq!(d2.meta.supply_offset, Some(2.0 * (2.0f64).powf(-0.45)));
    }

    #[test]
    fn clairvoyant_repeats_the_same_decision() {
        let s = symmetric_scenario(4);
        let clair = ClairvoyantPolicy::new(&s).unwrap();
        let a = clair.decide(1);
        let b = clair.decide(77);
        assert_eq!(a.prices, b.prices);
        for (i, j) in links(4) {
            assert!((a.prices[[i, j]] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn myopic_day_one_equals_nrps_day_one_under_shared_draw() {
        let s = symmetric_scenario(3);
        let streams = Streams::new(7);
        let mut a =
            PolicyEngine::new(PolicyKind::Nrps { rho: 2.0, eta: 0.45 }, &s, &streams, 0).unwrap();
        let mut b = PolicyEngine::new(PolicyKind::Myopic, &s, &streams, 0).unwrap();
        let da = a.decide(1).unwrap();
        let db = b.decide(1).unwrap();
        assert_eq!(da.prices, db.prices);
        assert_eq!(da.supplies, db.supplies);
    }

    #[test]
    fn fixed_estimate_means_fixed_decisions() {
        // noiseless observations at a single price leave the estimate at a
        // fixed point, so decisions stop changing and dispersion stays zero
        let s = symmetric_scenario(3);
        let mut m = MyopicPolicy::new(ProviderView::from_scenario(&s), s.theta.clone());
        let d1 = m.decide(1).unwrap();
        m.observe(1, &d1.prices, &d1.supplies).unwrap();
        let d2 = m.decide(2).unwrap();
        assert_eq!(d1.prices, d2.prices);
        let mut h = LinkHistory::new();
        h.push(1, d1.prices[[0, 1]], d1.supplies[[0, 1]]).unwrap();
        h.push(2, d2.prices[[0, 1]], d2.supplies[[0, 1]]).unwrap();
        assert!(h.dispersion().abs() < 1e-15);
    }

    #[test]
    fn perturbed_offsets_shrink_over_days() {
        let s = symmetric_scenario(3);
        let mut p =
            MyopicPolicy::perturbed(ProviderView::from_scenario(&s), s.theta.clone(), 2.0, 0.45);
        let mut last = f64::INFINITY;
        for day in 1..=6 {
            let d = p.decide(day).unwrap();
            let offset = d.meta.supply_offset.unwrap();
            assert!(offset < last);
            last = offset;
            p.observe(day, &d.prices, &d.supplies).unwrap();
        }
    }

    #[test]
    fn random_policy_with_point_bounds_equals_clairvoyant() {
        let n = 3;
        let mut xi = Array2::from_elem((n, n), 1.0);
        for i in 0..n {
            xi[[i, i]] = 0.0;
        }
        let s = Scenario::new(
            xi,
            DemandParams::uniform(n, 3.75, 2.5),
            ParamBounds::new(3.75, 3.75, 2.5, 2.5).unwrap(),
            ShockField::shared(ShockSpec::degenerate_zero()),
            0.1,
            1.0,
            2.0,
            0.45,
        )
        .unwrap();
        let streams = Streams::new(11);
        let mut random = RandomPolicy::new(ProviderView::from_scenario(&s), streams, 0);
        let clair = ClairvoyantPolicy::new(&s).unwrap();
        for day in 1..=3 {
            let dr = random.decide(day).unwrap();
            let dc = clair.decide(day);
            assert_eq!(dr.prices, dc.prices);
        }
    }

    #[test]
    fn random_policy_decisions_are_always_feasible() {
        let s = symmetric_scenario(4);
        let streams = Streams::new(13);
        let mut random = RandomPolicy::new(ProviderView::from_scenario(&s), streams, 0);
        for day in 1..=20 {
            let d = random.decide(day).unwrap();
            assert!(flow_imbalance(&d.supplies) <= 1e-9);
            for (i, j) in links(4) {
                assert!(d.prices[[i, j]] <= s.p_max + 1e-12);
                assert!(d.supplies[[i, j]] >= -1e-12);
            }
        }
    }

    #[test]
    fn initial_estimates_are_shared_and_inside_bounds() {
        let s = symmetric_scenario(4);
        let streams = Streams::new(17);
        let a = draw_initial_estimate(&s.bounds, &streams, 3, 4);
        let b = draw_initial_estimate(&s.bounds, &streams, 3, 4);
        assert_eq!(a.alpha, b.alpha);
        for (i, j) in links(4) {
            assert!(s.bounds.contains(a.alpha[[i, j]], a.beta[[i, j]]));
        }
        let other_rep = draw_initial_estimate(&s.bounds, &streams, 4, 4);
        assert_ne!(a.alpha, other_rep.alpha);
    }
}
