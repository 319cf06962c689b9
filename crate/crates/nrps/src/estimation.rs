//! Per-link least-squares demand estimation with projection onto the known
//! parameter rectangle.
//!
//! The normal equations depend only on running sums of prices and demand, so
//! each estimate costs a 2x2 solve regardless of history length.

use crate::error::{Error, Result};
use crate::linalg::solve_2x2;
use crate::network::ParamBounds;

/// Observed (day, price, realized demand) sequence for one link, kept both as
/// records and as the sufficient statistics of the regression.
#[derive(Debug, Clone, Default)]
pub struct LinkHistory {
    records: Vec<(u32, f64, f64)>,
    sum_p: f64,
    sum_p2: f64,
    sum_psi: f64,
    sum_p_psi: f64,
}

impl LinkHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, day: u32, price: f64, realized_demand: f64) -> Result<()> {
        if let Some(&(last, _, _)) = self.records.last() {
            if day <= last {
                return Err(Error::InvalidScenario(format!(
                    "link history days must be strictly increasing ({day} after {last})"
                )));
            }
        }
        self.records.push((day, price, realized_demand));
        self.sum_p += price;
        self.sum_p2 += price * price;
        self.sum_psi += realized_demand;
        self.sum_p_psi += price * realized_demand;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(u32, f64, f64)] {
        &self.records
    }

    pub fn sum_squared_prices(&self) -> f64 {
        self.sum_p2
    }

    /// n * sum(p^2) - (sum p)^2; equals half the pairwise squared price
    /// spread, and the (negated) determinant of the normal-equation matrix.
    pub fn dispersion(&self) -> f64 {
        self.records.len() as f64 * self.sum_p2 - self.sum_p * self.sum_p
    }

    /// Mean realized demand; used by the intercept-only fallback.
    pub fn mean_demand(&self) -> f64 {
        self.sum_psi / self.records.len() as f64
    }

    /// Mean implemented price.
    pub fn mean_price(&self) -> f64 {
        self.sum_p / self.records.len() as f64
    }

    /// Unprojected least-squares fit of (alpha, beta) from the normal
    /// equations. Needs at least two records with distinct prices.
    pub fn least_squares(&self) -> Result<RawFit> {
        let n = self.records.len();
        if n < 2 {
            return Err(Error::DegenerateHistory);
        }
        let m = [[n as f64, -self.sum_p], [self.sum_p, -self.sum_p2]];
        let rhs = [self.sum_psi, self.sum_p_psi];
        let [alpha, beta] = solve_2x2(m, rhs)?;
        Ok(RawFit {
            alpha,
            beta,
            determinant: self.dispersion(),
        })
    }
}

/// Least-squares solution before projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFit {
    pub alpha: f64,
    pub beta: f64,
    /// Dispersion diagnostic n * sum(p^2) - (sum p)^2 (positive when valid).
    pub determinant: f64,
}

/// Projected estimate together with its raw fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub raw_alpha: f64,
    pub raw_beta: f64,
    pub determinant: f64,
}

/// Componentwise clamp onto the parameter rectangle.
pub fn project(raw_alpha: f64, raw_beta: f64, bounds: &ParamBounds) -> (f64, f64) {
    (
        raw_alpha.min(bounds.alpha_max).max(bounds.alpha_min),
        raw_beta.min(bounds.beta_max).max(bounds.beta_min),
    )
}

/// Fit and project in one step.
pub fn estimate(history: &LinkHistory, bounds: &ParamBounds) -> Result<Estimate> {
    let fit = history.least_squares()?;
    let (alpha_hat, beta_hat) = project(fit.alpha, fit.beta, bounds);
    Ok(Estimate {
        alpha_hat,
        beta_hat,
        raw_alpha: fit.alpha,
        raw_beta: fit.beta,
        determinant: fit.determinant,
    })
}

/// Squared distance between an estimate and the true link parameters.
pub fn squared_error(alpha_hat: f64, beta_hat: f64, alpha: f64, beta: f64) -> f64 {
    (alpha_hat - alpha).powi(2) + (beta_hat - beta).powi(2)
}
