//! Traffic network model: the immutable problem instance, the resistor
//! network derived from demand slopes and travel times, and effective
//! resistances from the Laplacian generalized inverse.

use ndarray::Array2;

use crate::demand::ShockField;
use crate::error::{Error, Result};
use crate::linalg;

/// Default cap on the location count; all published experiments use n = 25.
pub const DEFAULT_LOCATION_CAP: usize = 200;

/// Demand model parameters per ordered link; diagonal entries are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandParams {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
}

impl DemandParams {
    pub fn new(alpha: Array2<f64>, beta: Array2<f64>) -> Result<Self> {
        if alpha.dim() != beta.dim() || alpha.nrows() != alpha.ncols() {
            return Err(Error::DimensionMismatch(
                "alpha and beta must be square matrices of equal size".into(),
            ));
        }
        Ok(DemandParams { alpha, beta })
    }

    pub fn n(&self) -> usize {
        self.alpha.nrows()
    }

    /// Uniform parameters on every link; handy for symmetric instances.
    pub fn uniform(n: usize, alpha: f64, beta: f64) -> Self {
        DemandParams {
            alpha: Array2::from_elem((n, n), alpha),
            beta: Array2::from_elem((n, n), beta),
        }
    }
}

/// Rectangle the provider initially knows the parameters to lie in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ParamBounds {
    pub fn new(alpha_min: f64, alpha_max: f64, beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(alpha_min > 0.0 && alpha_min <= alpha_max) {
            return Err(Error::InvalidScenario(format!(
                "alpha bounds must satisfy 0 < {alpha_min} <= {alpha_max}"
            )));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max) {
            return Err(Error::InvalidScenario(format!(
                "beta bounds must satisfy 0 < {beta_min} <= {beta_max}"
            )));
        }
        Ok(ParamBounds {
            alpha_min,
            alpha_max,
            beta_min,
            beta_max,
        })
    }

    pub fn contains(&self, alpha: f64, beta: f64) -> bool {
        alpha >= self.alpha_min
            && alpha <= self.alpha_max
            && beta >= self.beta_min
            && beta <= self.beta_max
    }
}

/// Immutable problem instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub n_locations: usize,
    /// Travel time in slots per ordered link; positive off the diagonal.
    pub travel_time: Array2<f64>,
    /// True demand parameters (hidden from learning policies).
    pub theta: DemandParams,
    pub bounds: ParamBounds,
    pub shock: ShockField,
    /// Cost of supplying one vehicle for one slot.
    pub cost_c: f64,
    /// Regulated price cap.
    pub p_max: f64,
    /// Exploration offset scale.
    pub rho: f64,
    /// Exploration offset decay exponent.
    pub eta: f64,
    /// Expected negative shock part per link, cached at construction.
    pub eps_minus: Array2<f64>,
    /// Non-fatal validation notes (e.g. eta outside the suggested range).
    pub warnings: Vec<String>,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        travel_time: Array2<f64>,
        theta: DemandParams,
        bounds: ParamBounds,
        shock: ShockField,
        cost_c: f64,
        p_max: f64,
        rho: f64,
        eta: f64,
    ) -> Result<Self> {
        Self::with_location_cap(
            travel_time,
            theta,
            bounds,
            shock,
            cost_c,
            p_max,
            rho,
            eta,
            DEFAULT_LOCATION_CAP,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_location_cap(
        travel_time: Array2<f64>,
        theta: DemandParams,
        bounds: ParamBounds,
        shock: ShockField,
        cost_c: f64,
        p_max: f64,
        rho: f64,
        eta: f64,
        location_cap: usize,
    ) -> Result<Self> {
        let n = travel_time.nrows();
        if travel_time.ncols() != n || theta.n() != n {
            return Err(Error::DimensionMismatch(
                "travel time and demand parameter matrices must agree".into(),
            ));
        }
        if n < 2 {
            return Err(Error::InvalidScenario("need at least two locations".into()));
        }
        if n > location_cap {
            return Err(Error::InvalidScenario(format!(
                "{n} locations exceeds the cap of {location_cap}"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if !(travel_time[[i, j]] > 0.0) {
                    return Err(Error::InvalidScenario(format!(
                        "travel time xi[{i}][{j}] = {} must be positive",
                        travel_time[[i, j]]
                    )));
                }
                let (a, b) = (theta.alpha[[i, j]], theta.beta[[i, j]]);
                if !bounds.contains(a, b) {
                    return Err(Error::InvalidScenario(format!(
                        "theta[{i}][{j}] = ({a}, {b}) lies outside the parameter rectangle"
                    )));
                }
            }
        }
        if !(cost_c > 0.0 && cost_c < p_max) {
            return Err(Error::InvalidScenario(format!(
                "need 0 < c < p_max, got c = {cost_c}, p_max = {p_max}"
            )));
        }
        let eps_lo = shock.support_lo();
        let slack = bounds.alpha_min - bounds.beta_max * p_max + eps_lo;
        if slack < 0.0 {
            return Err(Error::InvalidScenario(format!(
                "demand non-negativity fails: alpha_min - beta_max * p_max + eps_lo = \
                 {} - {} * {} + {} = {slack} < 0",
                bounds.alpha_min, bounds.beta_max, p_max, eps_lo
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidScenario(format!("rho = {rho} must be positive")));
        }
        if !(eta > 0.0) {
            return Err(Error::InvalidScenario(format!("eta = {eta} must be positive")));
        }
        let mut warnings = Vec::new();
        if eta >= 0.5 {
            warnings.push(format!(
                "eta = {eta} lies outside the suggested range (0, 0.5); the run proceeds but the \
                 no-regret guarantee does not apply"
            ));
        }
        let eps_minus = shock.eps_minus_matrix(n);
        Ok(Scenario {
            n_locations: n,
            travel_time,
            theta,
            bounds,
            shock,
            cost_c,
            p_max,
            rho,
            eta,
            eps_minus,
            warnings,
        })
    }

    /// Ordered links (i, j), i != j, in row-major order.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        links(self.n_locations)
    }
}

pub fn links(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (0..n).filter_map(move |j| (i != j).then_some((i, j))))
}

/// Resistor network built from demand slopes and travel times: links (i, j)
/// and (j, i) collapse into one resistor with r = 1 / (b_ij/xi_ij + b_ji/xi_ji).
#[derive(Debug, Clone, PartialEq)]
pub struct ResistorNetwork {
    pub resistance: Array2<f64>,
}

pub fn build_resistor_network(beta: &Array2<f64>, xi: &Array2<f64>) -> Result<ResistorNetwork> {
    let n = beta.nrows();
    if beta.ncols() != n || xi.dim() != beta.dim() {
        return Err(Error::DimensionMismatch(
            "beta and xi must be square matrices of equal size".into(),
        ));
    }
    let mut resistance = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            for (a, b) in [(i, j), (j, i)] {
                if !(beta[[a, b]] > 0.0) || !(xi[[a, b]] > 0.0) {
                    return Err(Error::InvalidScenario(format!(
                        "beta and xi must be positive on link ({a},{b})"
                    )));
                }
            }
            let r = 1.0 / (beta[[i, j]] / xi[[i, j]] + beta[[j, i]] / xi[[j, i]]);
            resistance[[i, j]] = r;
            resistance[[j, i]] = r;
        }
    }
    Ok(ResistorNetwork { resistance })
}

/// Weighted graph Laplacian of the resistor network (edge weight 1/r).
pub fn laplacian(net: &ResistorNetwork) -> Array2<f64> {
    let n = net.resistance.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = 1.0 / net.resistance[[i, j]];
                l[[i, j]] = -w;
                l[[i, i]] += w;
            }
        }
    }
    l
}

/// Generalized (Moore-Penrose) inverse of a connected-graph Laplacian,
/// computed as (L + J/n)^-1 - J/n. A singular shifted matrix means the graph
/// is disconnected and the scenario is invalid.
pub fn laplacian_pseudoinverse(lap: &Array2<f64>) -> Result<Array2<f64>> {
    let n = lap.nrows();
    if lap.ncols() != n {
        return Err(Error::DimensionMismatch("Laplacian must be square".into()));
    }
    let jn = 1.0 / n as f64;
    let shifted = lap + &Array2::from_elem((n, n), jn);
    let inv = linalg::invert(&shifted).map_err(|e| match e {
        Error::SingularMatrix => Error::DisconnectedNetwork,
        other => other,
    })?;
    Ok(inv - &Array2::from_elem((n, n), jn))
}

/// Pairwise effective resistances R_ij = l+_ii + l+_jj - 2 l+_ij.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveResistances {
    pub r_eff: Array2<f64>,
}

pub fn effective_resistances(lap: &Array2<f64>) -> Result<EffectiveResistances> {
    let pinv = laplacian_pseudoinverse(lap)?;
    let n = lap.nrows();
    let mut r_eff = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                r_eff[[i, j]] = pinv[[i, i]] + pinv[[j, j]] - 2.0 * pinv[[i, j]];
            }
        }
    }
    Ok(EffectiveResistances { r_eff })
}

/// Parse a headerless comma-separated travel-time matrix: n rows by n columns
/// of non-negative reals, diagonal entries ignored.
pub fn parse_travel_time_csv(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                cell.parse::<f64>().map_err(|_| {
                    Error::Config(format!(
                        "travel-time CSV line {}: cannot parse '{cell}' as a number",
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Config(format!(
                    "travel-time CSV line {} has {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        for (j, &v) in row.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!(
                    "travel-time CSV line {} column {}: {v} is not a non-negative real",
                    lineno + 1,
                    j + 1
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Config("travel-time CSV is empty".into()));
    }
    if rows[0].len() != n {
        return Err(Error::Config(format!(
            "travel-time CSV must be square, got {n} rows by {} columns",
            rows[0].len()
        )));
    }
    let mut m = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = if i == j { 0.0 } else { v };
        }
    }
    Ok(m)
}
