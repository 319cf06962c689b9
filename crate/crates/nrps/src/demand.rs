//! Stochastic demand model: bounded zero-mean shocks, realized and expected
//! demand, and the expected negative part of the shock that enters the
//! provider's objective.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Streams;

/// Shock distribution on one link. The mean is exactly zero by construction:
/// gaussian and uniform kinds require a symmetric support around zero.
#[derive(Debug, Clone, PartialEq)]
pub enum ShockKind {
    DegenerateZero,
    Uniform,
    TruncatedGaussian { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShockSpec {
    lo: f64,
    hi: f64,
    kind: ShockKind,
}

impl ShockSpec {
    pub fn new(kind: ShockKind, lo: f64, hi: f64) -> Result<Self> {
        match &kind {
            ShockKind::DegenerateZero => {
                if lo != 0.0 || hi != 0.0 {
                    return Err(Error::InvalidScenario(
                        "degenerate shock requires lo = hi = 0".into(),
                    ));
                }
            }
            ShockKind::Uniform => {
                if !(lo <= 0.0 && hi >= 0.0) || hi != -lo {
                    return Err(Error::InvalidScenario(format!(
                        "uniform shock support [{lo}, {hi}] must be symmetric around zero"
                    )));
                }
            }
            ShockKind::TruncatedGaussian { mu, sigma } => {
                if *mu != 0.0 {
                    return Err(Error::InvalidScenario(
                        "truncated gaussian shock must be centered at zero".into(),
                    ));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidScenario("shock sigma must be positive".into()));
                }
                if hi != -lo || !(hi > 0.0) {
                    return Err(Error::InvalidScenario(format!(
                        "gaussian truncation interval [{lo}, {hi}] must be symmetric around zero"
                    )));
                }
            }
        }
        Ok(ShockSpec { lo, hi, kind })
    }

    pub fn degenerate_zero() -> Self {
        ShockSpec {
            lo: 0.0,
            hi: 0.0,
            kind: ShockKind::DegenerateZero,
        }
    }

    /// N(0, 1) truncated to [-0.5, 0.5].
    pub fn standard_truncated_gaussian() -> Self {
        ShockSpec::new(
            ShockKind::TruncatedGaussian { mu: 0.0, sigma: 1.0 },
            -0.5,
            0.5,
        )
        .expect("valid by construction")
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn kind(&self) -> &ShockKind {
        &self.kind
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            ShockKind::DegenerateZero => 0.0,
            ShockKind::Uniform => rng.random_range(self.lo..=self.hi),
            ShockKind::TruncatedGaussian { sigma, .. } => loop {
                let x: f64 = StandardNormal.sample(rng);
                let x = sigma * x;
                if x >= self.lo && x <= self.hi {
                    return x;
                }
            },
        }
    }
}

/// Expected negative part of the shock: the integral of epsilon over its
/// negative range. Non-positive; zero only for the degenerate kind.
pub fn epsilon_minus(spec: &ShockSpec) -> f64 {
    match spec.kind() {
        ShockKind::DegenerateZero => 0.0,
        ShockKind::Uniform => spec.lo() / 4.0,
        ShockKind::TruncatedGaussian { sigma, .. } => {
            let a = spec.hi() / sigma;
            let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let cdf = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
            let z = cdf(a) - cdf(-a);
            -sigma * (phi(0.0) - phi(a)) / z
        }
    }
}

/// Per-link shock assignment: one shared spec with optional overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockField {
    shared: ShockSpec,
    overrides: BTreeMap<(usize, usize), ShockSpec>,
}

impl ShockField {
    pub fn shared(spec: ShockSpec) -> Self {
        ShockField {
            shared: spec,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, i: usize, j: usize, spec: ShockSpec) -> Self {
        self.overrides.insert((i, j), spec);
        self
    }

    pub fn spec(&self, i: usize, j: usize) -> &ShockSpec {
        self.overrides.get(&(i, j)).unwrap_or(&self.shared)
    }

    pub fn shared_spec(&self) -> &ShockSpec {
        &self.shared
    }

    pub fn overrides(&self) -> &BTreeMap<(usize, usize), ShockSpec> {
        &self.overrides
    }

    /// Lowest support point over all links (enters the demand non-negativity
    /// condition).
    pub fn support_lo(&self) -> f64 {
        self.overrides
            .values()
            .map(|s| s.lo())
            .fold(self.shared.lo(), f64::min)
    }

    pub fn eps_minus_matrix(&self, n: usize) -> Array2<f64> {
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[[i, j]] = epsilon_minus(self.spec(i, j));
                }
            }
        }
        m
    }
}

/// Draw one day's shock matrix for a replication; entry (i, j) comes from its
/// own substream so the draw is independent of every other link and day.
pub fn sample_shocks(field: &ShockField, streams: &Streams, rep: u32, day: u32, n: usize) -> Array2<f64> {
    let mut eps = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut rng = streams.shock(rep, day, i, j, n);
                eps[[i, j]] = field.spec(i, j).sample(&mut rng);
            }
        }
    }
    eps
}

/// Expected demand on a link at price `p`.
pub fn expected_demand(alpha: f64, beta: f64, p: f64) -> f64 {
    alpha - beta * p
}

/// Realized demand on a link given the day's shock.
pub fn realized_demand(alpha: f64, beta: f64, p: f64, eps: f64) -> f64 {
    alpha - beta * p + eps
}

/// Realized demand with the non-negativity guarantee checked; a negative value
/// indicates a scenario violating the demand non-negativity condition and is
/// never clamped silently.
pub fn realized_demand_checked(alpha: f64, beta: f64, p: f64, eps: f64, i: usize, j: usize) -> Result<f64> {
    let v = realized_demand(alpha, beta, p, eps);
    if v < -1e-12 {
        return Err(Error::NegativeDemand { i, j, value: v });
    }
    Ok(v)
}
