//! Single-day pricing and supply optimization.
//!
//! The provider maximizes expected per-slot payoff subject to per-location
//! flow balance and the price cap, with supply tied to expected demand. When
//! no cap binds, prices follow a closed form built from the effective
//! resistances of the resistor network; otherwise an active-set loop pins
//! capped links and re-solves the node-potential system on the free links.

use ndarray::{Array1, Array2};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::linalg::{self, KktSystem};
use crate::network::{
    build_resistor_network, effective_resistances, laplacian, laplacian_pseudoinverse, links,
    DemandParams, EffectiveResistances, Scenario,
};

const KKT_TOL: f64 = 1e-8;
const FLOW_TOL: f64 = 1e-9;

/// Travel times and economics visible to every policy; carries no demand
/// parameters, so learning policies can be handed one safely.
#[derive(Debug, Clone, Copy)]
pub struct Market<'a> {
    pub xi: &'a Array2<f64>,
    pub cost_c: f64,
    pub p_max: f64,
}

impl Scenario {
    pub fn market(&self) -> Market<'_> {
        Market {
            xi: &self.travel_time,
            cost_c: self.cost_c,
            p_max: self.p_max,
        }
    }
}

impl<'a> Market<'a> {
    pub fn n(&self) -> usize {
        self.xi.nrows()
    }
}

/// Which route produced a day's solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverPath {
    /// Cap-slack condition held; resistance closed form used directly.
    ClosedForm,
    /// Active-set solve ended with caps binding.
    ActiveSet,
    /// Active-set solve ended cap-free and was cross-checked against the
    /// closed form (the cap-slack condition is sufficient, not necessary).
    ActiveSetCrossChecked,
}

impl SolverPath {
    pub fn label(&self) -> &'static str {
        match self {
            SolverPath::ClosedForm => "closed_form",
            SolverPath::ActiveSet => "active_set",
            SolverPath::ActiveSetCrossChecked => "active_set_cross_checked",
        }
    }
}

/// One day's optimal prices, supplies and duals.
#[derive(Debug, Clone)]
pub struct PricingSolution {
    pub prices: Array2<f64>,
    pub supplies: Array2<f64>,
    /// Flow-balance duals, pinned so the last node's dual is zero.
    pub node_duals: Array1<f64>,
    /// Price-cap duals, nonnegative, zero off the active set.
    pub cap_duals: Array2<f64>,
    pub active_set: Vec<(usize, usize)>,
    /// Expected per-slot payoff under the parameters used to solve.
    pub objective: f64,
    pub solver_path: SolverPath,
}

/// Node imbalance of margin-adjusted demand: what each location would ship
/// out minus what it would receive at the locally optimal uncoupled prices.
pub fn imbalance_vector(theta: &DemandParams, cost_c: f64, eps_minus: &Array2<f64>) -> Array1<f64> {
    let n = theta.n();
    let mut v = Array1::zeros(n);
    for (i, j) in links(n) {
        let h = theta.alpha[[i, j]] - cost_c * theta.beta[[i, j]] - eps_minus[[i, j]];
        v[i] += h;
        v[j] -= h;
    }
    v
}

/// Sufficient condition for no price cap to bind: the total node imbalance is
/// small against the worst-case cap slack over links. When it holds, the
/// closed form is optimal with all cap duals zero.
pub fn cap_condition_holds(
    theta: &DemandParams,
    market: &Market,
    v: &Array1<f64>,
    eps_minus: &Array2<f64>,
) -> bool {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    let mut rhs = f64::INFINITY;
    for (i, j) in links(theta.n()) {
        let beta = theta.beta[[i, j]];
        let slack = 2.0 * (beta + market.xi[[i, j]] / market.xi[[j, i]] * theta.beta[[j, i]])
            * (2.0 * market.p_max
                - market.cost_c
                - (theta.alpha[[i, j]] + eps_minus[[i, j]]) / beta);
        rhs = rhs.min(slack);
    }
    total <= rhs
}

/// Locally optimal price before network coupling.
fn base_price(theta: &DemandParams, cost_c: f64, eps_minus: &Array2<f64>, i: usize, j: usize) -> f64 {
    (cost_c * theta.beta[[i, j]] + theta.alpha[[i, j]] + eps_minus[[i, j]])
        / (2.0 * theta.beta[[i, j]])
}

/// Cap-free optimal prices: the local term plus a network correction through
/// effective-resistance differences weighted by the node imbalances.
pub fn closed_form_prices(
    theta: &DemandParams,
    market: &Market,
    r_eff: &EffectiveResistances,
    v: &Array1<f64>,
    eps_minus: &Array2<f64>,
) -> Array2<f64> {
    let n = theta.n();
    let mut p = Array2::zeros((n, n));
    for (i, j) in links(n) {
        let correction: f64 = (0..n)
            .map(|k| (r_eff.r_eff[[j, k]] - r_eff.r_eff[[i, k]]) * v[k])
            .sum();
        p[[i, j]] = base_price(theta, market.cost_c, eps_minus, i, j)
            + correction / (4.0 * market.xi[[i, j]]);
    }
    p
}

/// Reconstruct prices from node duals; valid on links with zero cap dual.
pub fn prices_from_node_duals(
    theta: &DemandParams,
    market: &Market,
    sigma: &Array1<f64>,
    eps_minus: &Array2<f64>,
) -> Array2<f64> {
    let n = theta.n();
    let mut p = Array2::zeros((n, n));
    for (i, j) in links(n) {
        p[[i, j]] = base_price(theta, market.cost_c, eps_minus, i, j)
            + (sigma[i] - sigma[j]) / (2.0 * market.xi[[i, j]]);
    }
    p
}

/// Expected per-slot payoff of a price matrix when supply tracks expected
/// demand under the same parameters.
pub fn expected_objective(
    prices: &Array2<f64>,
    theta: &DemandParams,
    market: &Market,
    eps_minus: &Array2<f64>,
) -> f64 {
    let mut total = 0.0;
    for (i, j) in links(theta.n()) {
        let xi = market.xi[[i, j]];
        let w = theta.alpha[[i, j]] - theta.beta[[i, j]] * prices[[i, j]];
        total += xi * (w + eps_minus[[i, j]]) * prices[[i, j]] - xi * w * market.cost_c;
    }
    total
}

/// Max node imbalance of a supply matrix.
pub fn flow_imbalance(supplies: &Array2<f64>) -> f64 {
    let n = supplies.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        let out: f64 = (0..n).filter(|&j| j != i).map(|j| supplies[[i, j]]).sum();
        let inn: f64 = (0..n).filter(|&j| j != i).map(|j| supplies[[j, i]]).sum();
        worst = worst.max((out - inn).abs());
    }
    worst
}

/// Assemble the day problem as a generic QP over ordered-link variables.
/// Used by the oracle tests to cross-check the specialized path.
pub fn build_kkt_system(
    theta: &DemandParams,
    market: &Market,
    eps_minus: &Array2<f64>,
) -> (KktSystem, Vec<(usize, usize)>) {
    let n = theta.n();
    let order: Vec<(usize, usize)> = links(n).collect();
    let m = order.len();
    let mut hessian = Array2::zeros((m, m));
    let mut linear = Array1::zeros(m);
    let mut a = Array2::zeros((n, m));
    let mut b = Array1::zeros(n);
    for (l, &(i, j)) in order.iter().enumerate() {
        let (xi, beta, alpha) = (market.xi[[i, j]], theta.beta[[i, j]], theta.alpha[[i, j]]);
        hessian[[l, l]] = -2.0 * xi * beta;
        linear[l] = xi * (alpha + eps_minus[[i, j]] + market.cost_c * beta);
        a[[i, l]] = -beta;
        a[[j, l]] = beta;
        b[i] -= alpha;
        b[j] += alpha;
    }
    (
        KktSystem {
            hessian,
            linear_term: linear,
            equality_matrix: a,
            equality_rhs: b,
            upper_bounds: Array1::from_elem(m, market.p_max),
        },
        order,
    )
}

/// Solve the day's problem under the given (true or estimated) parameters.
///
/// Fast path: when the cap-slack condition holds, prices come from the closed
/// form and duals from the node-potential system. Otherwise an active-set
/// loop runs on the free-link node system; if it ends cap-free the result is
/// cross-checked against the closed form.
pub fn solve_day(
    theta_hat: &DemandParams,
    market: &Market,
    eps_minus: &Array2<f64>,
) -> Result<PricingSolution> {
    let n = theta_hat.n();
    if market.n() != n || eps_minus.nrows() != n || eps_minus.ncols() != n {
        return Err(Error::DimensionMismatch(
            "theta, travel times and eps_minus must agree".into(),
        ));
    }
    let v = imbalance_vector(theta_hat, market.cost_c, eps_minus);

    if cap_condition_holds(theta_hat, market, &v, eps_minus) {
        let net = build_resistor_network(&theta_hat.beta, market.xi)?;
        let lap = laplacian(&net);
        let pinv = laplacian_pseudoinverse(&lap)?;
        let mut r = Array2::zeros((n, n));
        for (i, j) in links(n) {
            r[[i, j]] = pinv[[i, i]] + pinv[[j, j]] - 2.0 * pinv[[i, j]];
        }
        let r_eff = EffectiveResistances { r_eff: r };
        let prices = closed_form_prices(theta_hat, market, &r_eff, &v, eps_minus);
        let mut sigma = pinv.dot(&v);
        let gauge = sigma[n - 1];
        sigma.mapv_inplace(|x| x - gauge);
        return finish_solution(
            theta_hat,
            market,
            eps_minus,
            prices,
            sigma,
            Array2::zeros((n, n)),
            vec![],
            SolverPath::ClosedForm,
        );
    }

    let (prices, sigma, cap_duals, active) = solve_capped(theta_hat, market, eps_minus)?;
    let path = if active.is_empty() {
        // condition is sufficient only: verify against the closed form
        let net = build_resistor_network(&theta_hat.beta, market.xi)?;
        let r_eff = effective_resistances(&laplacian(&net))?;
        let closed = closed_form_prices(theta_hat, market, &r_eff, &v, eps_minus);
        let gap = (&closed - &prices)
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()));
        if gap > 1e-8 {
            return Err(Error::SolverFailure {
                iterations: 0,
                residual: gap,
            });
        }
        SolverPath::ActiveSetCrossChecked
    } else {
        SolverPath::ActiveSet
    };
    finish_solution(
        theta_hat, market, eps_minus, prices, sigma, cap_duals, active, path,
    )
}

/// Active-set loop: pin violated caps, re-solve the node-potential system on
/// the free links, release caps whose multiplier turns negative.
fn solve_capped(
    theta: &DemandParams,
    market: &Market,
    eps_minus: &Array2<f64>,
) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>, Vec<(usize, usize)>)> {
    let n = theta.n();
    let p_max = market.p_max;
    let max_iter = 10 * n * (n - 1);
    let mut working: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut last_mu = Array2::<f64>::zeros((n, n));
    let mut last_added: Option<(usize, usize)> = None;

    for _ in 0..max_iter {
        let sigma = match solve_node_potentials(theta, market, eps_minus, &working) {
            Ok(s) => s,
            Err(e) => {
                // the newest pin conflicts with flow balance: release the
                // least-justified existing pin and retry
                let added = last_added.take();
                let drop = working
                    .iter()
                    .copied()
                    .filter(|&l| Some(l) != added)
                    .min_by(|&a, &b| {
                        last_mu[[a.0, a.1]]
                            .partial_cmp(&last_mu[[b.0, b.1]])
                            .unwrap()
                            .then(a.cmp(&b))
                    });
                match drop {
                    Some(l) => {
                        working.remove(&l);
                        continue;
                    }
                    None => return Err(e),
                }
            }
        };

        let mut prices = Array2::zeros((n, n));
        let mut mu = Array2::zeros((n, n));
        for (i, j) in links(n) {
            let implied = base_price(theta, market.cost_c, eps_minus, i, j)
                + (sigma[i] - sigma[j]) / (2.0 * market.xi[[i, j]]);
            if working.contains(&(i, j)) {
                prices[[i, j]] = p_max;
                // stationarity residual absorbed by the cap dual
                mu[[i, j]] = 2.0 * market.xi[[i, j]] * theta.beta[[i, j]] * (implied - p_max);
            } else {
                prices[[i, j]] = implied;
            }
        }
        last_mu = mu.clone();

        let most_violated = links(n)
            .filter(|&(i, j)| !working.contains(&(i, j)))
            .map(|(i, j)| ((i, j), prices[[i, j]] - p_max))
            .filter(|&(_, gap)| gap > 1e-12)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
        if let Some((link, _)) = most_violated {
            working.insert(link);
            last_added = Some(link);
            continue;
        }
        let release = working
            .iter()
            .copied()
            .filter(|&(i, j)| mu[[i, j]] < -1e-12)
            .min_by(|&a, &b| {
                mu[[a.0, a.1]]
                    .partial_cmp(&mu[[b.0, b.1]])
                    .unwrap()
                    .then(a.cmp(&b))
            });
        if let Some(link) = release {
            working.remove(&link);
            last_added = None;
            continue;
        }
        for &(i, j) in &working {
            if mu[[i, j]] < 0.0 {
                mu[[i, j]] = 0.0;
            }
        }
        return Ok((prices, sigma, mu, working.into_iter().collect()));
    }
    Err(Error::SolverFailure {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Solve the flow-balance system for node potentials with the working set
/// pinned at the cap. Free links contribute Laplacian weights; capped links
/// contribute constant supplies. One potential per connected component of the
/// free-link graph is pinned to zero (the component's largest node), so the
/// last node's potential is always the reference.
fn solve_node_potentials(
    theta: &DemandParams,
    market: &Market,
    eps_minus: &Array2<f64>,
    working: &BTreeSet<(usize, usize)>,
) -> Result<Array1<f64>> {
    let n = theta.n();
    let mut weight = Array2::<f64>::zeros((n, n));
    let mut rhs = Array1::zeros(n);
    for (i, j) in links(n) {
        if working.contains(&(i, j)) {
            let w_cap = theta.alpha[[i, j]] - theta.beta[[i, j]] * market.p_max;
            rhs[i] += 2.0 * w_cap;
            rhs[j] -= 2.0 * w_cap;
        } else {
            let w = theta.beta[[i, j]] / market.xi[[i, j]];
            weight[[i, j]] += w;
            weight[[j, i]] += w;
            let h = theta.alpha[[i, j]] - eps_minus[[i, j]] - market.cost_c * theta.beta[[i, j]];
            rhs[i] += h;
            rhs[j] -= h;
        }
    }

    // connected components of the free-link graph
    let mut component = vec![usize::MAX; n];
    let mut n_comp = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = n_comp;
        n_comp += 1;
        let mut stack = vec![start];
        component[start] = id;
        while let Some(u) = stack.pop() {
            for w in 0..n {
                if component[w] == usize::MAX && weight[[u, w]] > 0.0 {
                    component[w] = id;
                    stack.push(w);
                }
            }
        }
    }
    // each component's balance rows must be mutually consistent
    for c in 0..n_comp {
        let s: f64 = (0..n).filter(|&i| component[i] == c).map(|i| rhs[i]).sum();
        if s.abs() > 1e-7 {
            return Err(Error::SolverFailure {
                iterations: 0,
                residual: s.abs(),
            });
        }
    }
    let mut root = vec![0usize; n_comp];
    for i in 0..n {
        root[component[i]] = root[component[i]].max(i);
    }

    // Laplacian system with one row per component replaced by a gauge row
    let mut system = Array2::zeros((n, n));
    for i in 0..n {
        if root.contains(&i) {
            system[[i, i]] = 1.0;
            rhs[i] = 0.0;
            continue;
        }
        for j in 0..n {
            if i != j {
                system[[i, j]] = -weight[[i, j]];
                system[[i, i]] += weight[[i, j]];
            }
        }
    }
    let f = linalg::lu_factor(&system)?;
    let mut sigma = linalg::lu_solve(&f, &rhs);
    let r = &rhs - &system.dot(&sigma);
    let ds = linalg::lu_solve(&f, &r);
    sigma += &ds;
    Ok(sigma)
}

#[allow(clippy::too_many_arguments)]
fn finish_solution(
    theta: &DemandParams,
    market: &Market,
    eps_minus: &Array2<f64>,
    mut prices: Array2<f64>,
    sigma: Array1<f64>,
    cap_duals: Array2<f64>,
    active_set: Vec<(usize, usize)>,
    solver_path: SolverPath,
) -> Result<PricingSolution> {
    let n = theta.n();
    let mut supplies = Array2::zeros((n, n));
    for (i, j) in links(n) {
        if prices[[i, j]] > market.p_max {
            if prices[[i, j]] > market.p_max + 1e-9 {
                return Err(Error::SolverFailure {
                    iterations: 0,
                    residual: prices[[i, j]] - market.p_max,
                });
            }
            prices[[i, j]] = market.p_max;
        }
        supplies[[i, j]] = theta.alpha[[i, j]] - theta.beta[[i, j]] * prices[[i, j]];
        if supplies[[i, j]] < -1e-9 {
            return Err(Error::InvalidScenario(format!(
                "negative supply {} on link ({i},{j}); the demand non-negativity \
                 condition does not cover this instance",
                supplies[[i, j]]
            )));
        }
    }
    let residual = flow_imbalance(&supplies);
    if residual > FLOW_TOL {
        return Err(Error::SolverFailure {
            iterations: 0,
            residual,
        });
    }
    // complementary slackness
    for &(i, j) in &active_set {
        let slack = cap_duals[[i, j]] * (market.p_max - prices[[i, j]]);
        if slack.abs() > KKT_TOL {
            return Err(Error::SolverFailure {
                iterations: 0,
                residual: slack.abs(),
            });
        }
    }
    let objective = expected_objective(&prices, theta, market, eps_minus);
    Ok(PricingSolution {
        prices,
        supplies,
        node_duals: sigma,
        cap_duals,
        active_set,
        objective,
        solver_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_eq_qp_active_set;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn xi_ones(n: usize) -> Array2<f64> {
        let mut m = Array2::from_elem((n, n), 1.0);
        for i in 0..n {
            m[[i, i]] = 0.0;
        }
        m
    }

    fn zeros(n: usize) -> Array2<f64> {
        Array2::zeros((n, n))
    }

    #[test]
    fn imbalance_vanishes_on_symmetric_networks() {
        let theta = DemandParams::uniform(4, 3.75, 2.5);
        let v = imbalance_vector(&theta, 0.1, &zeros(4));
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn imbalance_two_locations() {
        let mut theta = DemandParams::uniform(2, 4.0, 2.5);
        theta.alpha[[1, 0]] = 3.5;
        let v = imbalance_vector(&theta, 0.1, &zeros(2));
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn imbalance_always_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let n = rng.random_range(2..8);
            let mut theta = DemandParams::uniform(n, 3.75, 2.5);
            let mut eps = zeros(n);
            for (i, j) in links(n) {
                theta.alpha[[i, j]] = rng.random_range(3.5..4.0);
                theta.beta[[i, j]] = rng.random_range(2.0..3.0);
                eps[[i, j]] = -rng.random_range(0.0..0.2);
            }
            let v = imbalance_vector(&theta, 0.1, &eps);
            assert!(v.sum().abs() <= 1e-10);
        }
    }

    #[test]
    fn symmetric_network_prices_are_the_local_optimum() {
        let n = 4;
        let theta = DemandParams::uniform(n, 3.75, 2.5);
        let xi = xi_ones(n);
        let market = Market { xi: &xi, cost_c: 0.1, p_max: 1.0 };
        let eps = zeros(n);
        let sol = solve_day(&theta, &market, &eps).unwrap();
        assert_eq!(sol.solver_path, SolverPath::ClosedForm);
        for (i, j) in links(n) {
            assert!((sol.prices[[i, j]] - 0.8).abs() < 1e-12);
            assert!((sol.supplies[[i, j]] - 1.75).abs() < 1e-12);
            assert_eq!(sol.cap_duals[[i, j]], 0.0);
        }
        assert!(flow_imbalance(&sol.supplies) <= 1e-12);
        // per-slot payoff: n(n-1) links, each 1.75 * (0.8 - 0.1)
        assert!((sol.objective - 12.0 * 1.225).abs() < 1e-12);
    }

    #[test]
    fn symmetric_network_with_uniform_shock_correction() {
        let n = 3;
        let theta = DemandParams::uniform(n, 3.75, 2.5);
        let xi = xi_ones(n);
        let market = Market { xi: &xi, cost_c: 0.1, p_max: 1.0 };
        let eps = Array2::from_elem((n, n), -0.125);
        let sol = solve_day(&theta, &market, &eps).unwrap();
        for (i, j) in links(n) {
            assert!((sol.prices[[i, j]] - 0.775).abs() < 1e-12);
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (DemandParams, Array2<f64>, Array2<f64>) {
        let mut theta = DemandParams::uniform(n, 3.75, 2.5);
        let mut xi = xi_ones(n);
        let mut eps = zeros(n);
        for (i, j) in links(n) {
            theta.alpha[[i, j]] = rng.random_range(3.5..4.0);
            theta.beta[[i, j]] = rng.random_range(2.0..3.0);
            xi[[i, j]] = rng.random_range(1.0..8.0);
            eps[[i, j]] = -rng.random_range(0.0..0.15);
        }
        (theta, xi, eps)
    }

    #[test]
    fn closed_form_matches_generic_qp_when_condition_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut checked = 0;
        while checked < 20 {
            let n = rng.random_range(3..=5);
            let (theta, xi, eps) = random_instance(&mut rng, n);
            let market = Market { xi: &xi, cost_c: 0.1, p_max: 5.0 };
            let v = imbalance_vector(&theta, market.cost_c, &eps);
            if !cap_condition_holds(&theta, &market, &v, &eps) {
                continue;
            }
            checked += 1;
            let sol = solve_day(&theta, &market, &eps).unwrap();
            assert_eq!(sol.solver_path, SolverPath::ClosedForm);

            let (sys, order) = build_kkt_system(&theta, &market, &eps);
            let qp = solve_eq_qp_active_set(&sys).unwrap();
            assert!(qp.active_set.is_empty());
            for (l, &(i, j)) in order.iter().enumerate() {
                assert!(
                    (sol.prices[[i, j]] - qp.solution[l]).abs() <= 1e-8,
                    "price gap {} on ({i},{j})",
                    (sol.prices[[i, j]] - qp.solution[l]).abs()
                );
            }
        }
    }

    #[test]
    fn condition_implies_empty_active_set_on_sampled_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut holds = 0;
        for _ in 0..300 {
            let n = rng.random_range(3..=6);
            let (theta, xi, eps) = random_instance(&mut rng, n);
            // generous cap: the condition holds often, binding is rare
            let market = Market { xi: &xi, cost_c: 0.1, p_max: 2.0 };
            let v = imbalance_vector(&theta, market.cost_c, &eps);
            let (sys, _) = build_kkt_system(&theta, &market, &eps);
            let qp = solve_eq_qp_active_set(&sys).unwrap();
            if cap_condition_holds(&theta, &market, &v, &eps) {
                holds += 1;
                assert!(
                    qp.active_set.is_empty(),
                    "sufficient condition held but a cap is active"
                );
            }
        }
        assert!(holds >= 100, "only {holds} instances satisfied the condition");
    }

    #[test]
    fn capped_path_agrees_with_generic_qp() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let mut bound_cases = 0;
        for _ in 0..200 {
            let n = rng.random_range(2..=5);
            let (theta, xi, eps) = random_instance(&mut rng, n);
            // tight cap: closed-form prices frequently exceed it
            let market = Market { xi: &xi, cost_c: 0.1, p_max: 0.82 };
            let sol = match solve_day(&theta, &market, &eps) {
                Ok(s) => s,
                Err(Error::InvalidScenario(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            let (sys, order) = build_kkt_system(&theta, &market, &eps);
            let qp = solve_eq_qp_active_set(&sys).unwrap();
            for (l, &(i, j)) in order.iter().enumerate() {
                assert!(
                    (sol.prices[[i, j]] - qp.solution[l]).abs() <= 1e-8,
                    "path disagreement {} on n={n}",
                    (sol.prices[[i, j]] - qp.solution[l]).abs()
                );
            }
            if !sol.active_set.is_empty() {
                bound_cases += 1;
                for &(i, j) in &sol.active_set {
                    assert_eq!(sol.prices[[i, j]], market.p_max);
                    assert!(sol.cap_duals[[i, j]] >= 0.0);
                }
            }
            assert!(flow_imbalance(&sol.supplies) <= 1e-9);
        }
        assert!(bound_cases >= 20, "only {bound_cases} instances had binding caps");
    }

    #[test]
    fn two_location_binding_cap_matches_line_search() {
        // strongly asymmetric demand pushes one link to the cap
        let mut theta = DemandParams::uniform(2, 3.9, 2.0);
        theta.alpha[[1, 0]] = 3.5;
        theta.beta[[1, 0]] = 3.0;
        let mut xi = xi_ones(2);
        xi[[0, 1]] = 2.0;
        let market = Market { xi: &xi, cost_c: 0.1, p_max: 1.0 };
        let eps = zeros(2);
        let sol = solve_day(&theta, &market, &eps).unwrap();

        // exhaustive scan along the one-dimensional feasible set
        let obj = |p01: f64, p10: f64| {
            let mut m = zeros(2);
            m[[0, 1]] = p01;
            m[[1, 0]] = p10;
            expected_objective(&m, &theta, &market, &eps)
        };
        let p10_of = |p01: f64| {
            (theta.alpha[[1, 0]] - theta.alpha[[0, 1]] + theta.beta[[0, 1]] * p01)
                / theta.beta[[1, 0]]
        };
        let mut best = f64::NEG_INFINITY;
        let mut best_p = (0.0, 0.0);
        for s in 0..=4_000_000u64 {
            let p01 = -1.0 + 2.0 * (s as f64) / 4_000_000.0;
            let p10 = p10_of(p01);
            if p01 > 1.0 || p10 > 1.0 {
                continue;
            }
            let o = obj(p01, p10);
            if o > best {
                best = o;
                best_p = (p01, p10);
            }
        }
        assert!((sol.prices[[0, 1]] - best_p.0).abs() < 2e-6);
        assert!((sol.prices[[1, 0]] - best_p.1).abs() < 2e-6);
        assert!(sol.objective >= best - 1e-9);
    }

    #[test]
    fn cap_condition_examples() {
        let n = 3;
        let theta = DemandParams::uniform(n, 3.75, 2.5);
        let xi = xi_ones(n);
        let eps = zeros(n);
        let v = imbalance_vector(&theta, 0.1, &eps);
        let roomy = Market { xi: &xi, cost_c: 0.1, p_max: 1.0 };
        assert!(cap_condition_holds(&theta, &roomy, &v, &eps));
        // cap below the symmetric optimum 0.8 turns the slack negative
        let tight = Market { xi: &xi, cost_c: 0.1, p_max: 0.5 };
        assert!(!cap_condition_holds(&theta, &tight, &v, &eps));
    }

    #[test]
    fn solve_day_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let (theta, xi, eps) = random_instance(&mut rng, 5);
        let market = Market { xi: &xi, cost_c: 0.1, p_max: 1.0 };
        let a = solve_day(&theta, &market, &eps).unwrap();
        let b = solve_day(&theta, &market, &eps).unwrap();
        assert_eq!(a.prices, b.prices);
        assert_eq!(a.supplies, b.supplies);
    }

    #[test]
    fn dual_consistency_reconstructs_prices() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..10 {
            let n = rng.random_range(3..=6);
            let (theta, xi, eps) = random_instance(&mut rng, n);
            let market = Market { xi: &xi, cost_c: 0.1, p_max: 5.0 };
            let sol = solve_day(&theta, &market, &eps).unwrap();
            assert!(sol.active_set.is_empty());
            let rebuilt = prices_from_node_duals(&theta, &market, &sol.node_duals, &eps);
            for (i, j) in links(n) {
                assert!((rebuilt[[i, j]] - sol.prices[[i, j]]).abs() <= 1e-9);
            }
            assert_eq!(sol.node_duals[n - 1], 0.0);
        }
    }

    #[test]
    fn first_order_optimality_along_feasible_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let n = 4;
        let (theta, xi, eps) = random_instance(&mut rng, n);
        let market = Market { xi: &xi, cost_c: 0.1, p_max: 5.0 };
        let sol = solve_day(&theta, &market, &eps).unwrap();
        let base = expected_objective(&sol.prices, &theta, &market, &eps);

        // random flow-balance-preserving perturbation: project a random price
        // step onto the null space of the balance constraints
        let (sys, order) = build_kkt_system(&theta, &market, &eps);
        let m = order.len();
        for _ in 0..20 {
            let d0 = Array1::from_iter((0..m).map(|_| rng.random_range(-1.0..1.0)));
            let k = n - 1; // drop the redundant last balance row
            let a = sys.equality_matrix.slice(ndarray::s![..k, ..]).to_owned();
            let aat = a.dot(&a.t());
            let rhs = a.dot(&d0);
            let lam = crate::linalg::solve_symmetric(&aat, &rhs).unwrap();
            let mut d = &d0 - &a.t().dot(&lam);
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.mapv_inplace(|x| x * 1e-3 / norm);

            let mut perturbed = sol.prices.clone();
            for (l, &(i, j)) in order.iter().enumerate() {
                perturbed[[i, j]] += d[l];
            }
            let shifted = expected_objective(&perturbed, &theta, &market, &eps);
            assert!(shifted <= base + 1e-9, "objective rose by {}", shifted - base);
        }
    }

    #[test]
    fn expected_objective_examples() {
        let n = 2;
        let theta = DemandParams::uniform(n, 3.75, 2.5);
        let xi = xi_ones(n);
        let market = Market { xi: &xi, cost_c: 0.1, p_max: 1.0 };
        let eps = zeros(n);
        let prices = Array2::from_elem((n, n), 0.8);
        assert!((expected_objective(&prices, &theta, &market, &eps) - 2.45).abs() < 1e-12);
        // pricing at cost with no shock correction earns nothing
        let at_cost = Array2::from_elem((n, n), 0.1);
        assert!(expected_objective(&at_cost, &theta, &market, &eps).abs() < 1e-12);
    }
}
