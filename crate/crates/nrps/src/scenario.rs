//! Scenario configuration: JSON schema, parameter sampling, travel-time
//! ingestion, validation, and reproducible export.
//!
//! Explicit matrices always win over generative specs so that exact instances
//! can be round-tripped; a loaded scenario carries the resolved explicit form
//! and its hash for reproducibility checks.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::demand::{epsilon_minus, ShockField, ShockKind, ShockSpec};
use crate::error::{Error, Result};
use crate::network::{links, parse_travel_time_csv, DemandParams, ParamBounds, Scenario};
use crate::pricing::{cap_condition_holds, imbalance_vector};
use crate::rng::Streams;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_locations: usize,
    pub travel_time: TravelTimeConfig,
    /// Explicit demand parameters; win over `theta_generate` when both are set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaMatrices>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_generate: Option<ThetaGenerate>,
    pub bounds: BoundsConfig,
    pub shock: ShockConfig,
    pub cost_c: f64,
    pub p_max: f64,
    pub rho: f64,
    pub eta: f64,
    /// Seed for parameter sampling (travel times and generated theta).
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_locations: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct TravelTimeConfig {
    /// Headerless n-by-n CSV, resolved relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    /// Explicit matrix; wins over both `csv` and `synthetic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticTravelTime>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTravelTime {
    /// Travel times are drawn uniformly from {min_slots, ..., max_slots},
    /// independently per ordered link (asymmetric).
    pub min_slots: u32,
    pub max_slots: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ThetaMatrices {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ThetaGenerate {
    pub alpha_mean: f64,
    pub alpha_variance: f64,
    pub beta_mean: f64,
    pub beta_variance: f64,
    /// Interpret the variance fields as standard deviations instead.
    #[serde(default)]
    pub variance_is_std: bool,
    /// Draw one value per unordered pair and mirror it.
    #[serde(default)]
    pub symmetric: bool,
    /// Resample until the cap-slack condition provably holds for the true
    /// parameters (guaranteed to terminate only with `symmetric`).
    #[serde(default)]
    pub ensure_cap_free: bool,
    /// Extra slack under the cap enforced per link when `ensure_cap_free` is
    /// set: accepted draws satisfy (alpha + eps_minus) / beta
    /// <= 2 p_max - c - cap_margin, keeping optimal prices at least
    /// cap_margin / 2 below the cap.
    #[serde(default)]
    pub cap_margin: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ShockConfig {
    /// One of "degenerate_zero", "uniform", "truncated_gaussian".
    pub kind: String,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_link: Vec<PerLinkShock>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PerLinkShock {
    pub i: usize,
    pub j: usize,
    pub kind: String,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

/// A validated scenario together with its resolved explicit-matrix config,
/// the config hash, and the sampling seed.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub resolved: ScenarioConfig,
    pub hash: String,
    pub seed: u64,
}

fn shock_spec(kind: &str, mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<ShockSpec> {
    let kind = match kind {
        "degenerate_zero" => ShockKind::DegenerateZero,
        "uniform" => ShockKind::Uniform,
        "truncated_gaussian" => ShockKind::TruncatedGaussian { mu, sigma },
        other => {
            return Err(Error::Config(format!(
                "unknown shock kind '{other}' (expected degenerate_zero, uniform, truncated_gaussian)"
            )))
        }
    };
    ShockSpec::new(kind, lo, hi)
}

impl ShockConfig {
    pub fn build(&self) -> Result<ShockField> {
        let shared = shock_spec(&self.kind, self.mu, self.sigma, self.lo, self.hi)?;
        let mut field = ShockField::shared(shared);
        for o in &self.per_link {
            field = field.with_override(o.i, o.j, shock_spec(&o.kind, o.mu, o.sigma, o.lo, o.hi)?);
        }
        Ok(field)
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!(
            "{what} matrix must be {n}x{n} to match n_locations"
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

fn rows_from_matrix(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn sample_truncated_normal<R: Rng>(rng: &mut R, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + std * z;
        if x >= lo && x <= hi {
            return x;
        }
    }
}

fn generate_travel_time(spec: &SyntheticTravelTime, streams: &Streams, n: usize) -> Result<Array2<f64>> {
    if spec.min_slots == 0 || spec.min_slots > spec.max_slots {
        return Err(Error::Config(format!(
            "synthetic travel time needs 0 < min_slots <= max_slots, got [{}, {}]",
            spec.min_slots, spec.max_slots
        )));
    }
    let mut rng = streams.scenario(0);
    let mut xi = Array2::zeros((n, n));
    for (i, j) in links(n) {
        xi[[i, j]] = rng.random_range(spec.min_slots..=spec.max_slots) as f64;
    }
    Ok(xi)
}

fn generate_theta(
    gen: &ThetaGenerate,
    bounds: &ParamBounds,
    shock: &ShockField,
    xi: &Array2<f64>,
    cost_c: f64,
    p_max: f64,
    streams: &Streams,
    n: usize,
) -> Result<DemandParams> {
    let (a_std, b_std) = if gen.variance_is_std {
        (gen.alpha_variance, gen.beta_variance)
    } else {
        (gen.alpha_variance.sqrt(), gen.beta_variance.sqrt())
    };
    let mut rng = streams.scenario(1);
    let ratio_cap = 2.0 * p_max - cost_c - gen.cap_margin;
    let draw_link = |rng: &mut rand_chacha::ChaCha8Rng, eps_minus: f64| loop {
        let alpha = sample_truncated_normal(rng, gen.alpha_mean, a_std, bounds.alpha_min, bounds.alpha_max);
        let beta = sample_truncated_normal(rng, gen.beta_mean, b_std, bounds.beta_min, bounds.beta_max);
        if !gen.ensure_cap_free || (alpha + eps_minus) / beta <= ratio_cap {
            return (alpha, beta);
        }
    };

    for attempt in 0..1000 {
        let mut theta = DemandParams {
            alpha: Array2::zeros((n, n)),
            beta: Array2::zeros((n, n)),
        };
        if gen.symmetric {
            for i in 0..n {
                for j in (i + 1)..n {
                    // one eps floor for the pair keeps both directions cap-free
                    let em = epsilon_minus(shock.spec(i, j)).max(epsilon_minus(shock.spec(j, i)));
                    let (alpha, beta) = draw_link(&mut rng, em);
                    theta.alpha[[i, j]] = alpha;
                    theta.alpha[[j, i]] = alpha;
                    theta.beta[[i, j]] = beta;
                    theta.beta[[j, i]] = beta;
                }
            }
        } else {
            for (i, j) in links(n) {
                let em = epsilon_minus(shock.spec(i, j));
                let (alpha, beta) = draw_link(&mut rng, em);
                theta.alpha[[i, j]] = alpha;
                theta.beta[[i, j]] = beta;
            }
        }
        if !gen.ensure_cap_free {
            return Ok(theta);
        }
        let eps_minus = shock.eps_minus_matrix(n);
        let market = crate::pricing::Market { xi, cost_c, p_max };
        let v = imbalance_vector(&theta, cost_c, &eps_minus);
        if cap_condition_holds(&theta, &market, &v, &eps_minus) {
            return Ok(theta);
        }
        let _ = attempt;
    }
    Err(Error::Config(
        "could not satisfy the cap-slack condition after 1000 draws; \
         set theta_generate.symmetric = true or relax the economics"
            .into(),
    ))
}

/// Build a validated scenario from a config; `base_dir` resolves a relative
/// travel-time CSV path.
pub fn build_scenario(config: &ScenarioConfig, base_dir: Option<&Path>) -> Result<LoadedScenario> {
    let n = config.n_locations;
    let streams = Streams::new(config.seed);
    let bounds = ParamBounds::new(
        config.bounds.alpha_min,
        config.bounds.alpha_max,
        config.bounds.beta_min,
        config.bounds.beta_max,
    )?;
    let shock = config.shock.build()?;

    let travel_time = if let Some(rows) = &config.travel_time.matrix {
        matrix_from_rows(rows, n, "travel time")?
    } else if let Some(csv) = &config.travel_time.csv {
        let path = match base_dir {
            Some(dir) => dir.join(csv),
            None => Path::new(csv).to_path_buf(),
        };
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("cannot read travel-time CSV {}: {e}", path.display()))
        })?;
        let m = parse_travel_time_csv(&text)?;
        if m.nrows() != n {
            return Err(Error::Config(format!(
                "travel-time CSV is {}x{} but n_locations = {n}",
                m.nrows(),
                m.ncols()
            )));
        }
        m
    } else if let Some(spec) = &config.travel_time.synthetic {
        generate_travel_time(spec, &streams, n)?
    } else {
        return Err(Error::Config(
            "travel_time needs one of: matrix, csv, synthetic".into(),
        ));
    };

    let theta = if let Some(tm) = &config.theta {
        DemandParams::new(
            matrix_from_rows(&tm.alpha, n, "alpha")?,
            matrix_from_rows(&tm.beta, n, "beta")?,
        )?
    } else if let Some(gen) = &config.theta_generate {
        generate_theta(
            gen,
            &bounds,
            &shock,
            &travel_time,
            config.cost_c,
            config.p_max,
            &streams,
            n,
        )?
    } else {
        return Err(Error::Config(
            "one of theta or theta_generate is required".into(),
        ));
    };

    let cap = config.max_locations.unwrap_or(crate::network::DEFAULT_LOCATION_CAP);
    let scenario = Scenario::with_location_cap(
        travel_time,
        theta,
        bounds,
        shock,
        config.cost_c,
        config.p_max,
        config.rho,
        config.eta,
        cap,
    )?;

    let resolved = export_scenario(&scenario, config.seed);
    let hash = config_hash(&resolved)?;
    Ok(LoadedScenario {
        scenario,
        resolved,
        hash,
        seed: config.seed,
    })
}

/// Load and validate a scenario from a JSON config file.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    let config: ScenarioConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("scenario schema violation: {e}")))?;
    build_scenario(&config, path.parent())
}

/// Express a scenario as an explicit-matrix config (the round-trip form).
pub fn export_scenario(scenario: &Scenario, seed: u64) -> ScenarioConfig {
    let shared = scenario.shock.shared_spec();
    let kind_of = |s: &ShockSpec| -> (String, f64, f64) {
        match s.kind() {
            ShockKind::DegenerateZero => ("degenerate_zero".into(), 0.0, 1.0),
            ShockKind::Uniform => ("uniform".into(), 0.0, 1.0),
            ShockKind::TruncatedGaussian { mu, sigma } => ("truncated_gaussian".into(), *mu, *sigma),
        }
    };
    let (kind, mu, sigma) = kind_of(shared);
    let per_link = scenario
        .shock
        .overrides()
        .iter()
        .map(|(&(i, j), s)| {
            let (kind, mu, sigma) = kind_of(s);
            PerLinkShock {
                i,
                j,
                kind,
                mu,
                sigma,
                lo: s.lo(),
                hi: s.hi(),
            }
        })
        .collect();
    ScenarioConfig {
        n_locations: scenario.n_locations,
        travel_time: TravelTimeConfig {
            csv: None,
            matrix: Some(rows_from_matrix(&scenario.travel_time)),
            synthetic: None,
        },
        theta: Some(ThetaMatrices {
            alpha: rows_from_matrix(&scenario.theta.alpha),
            beta: rows_from_matrix(&scenario.theta.beta),
        }),
        theta_generate: None,
        bounds: BoundsConfig {
            alpha_min: scenario.bounds.alpha_min,
            alpha_max: scenario.bounds.alpha_max,
            beta_min: scenario.bounds.beta_min,
            beta_max: scenario.bounds.beta_max,
        },
        shock: ShockConfig {
            kind,
            mu,
            sigma,
            lo: shared.lo(),
            hi: shared.hi(),
            per_link,
        },
        cost_c: scenario.cost_c,
        p_max: scenario.p_max,
        rho: scenario.rho,
        eta: scenario.eta,
        seed,
        max_locations: None,
    }
}

/// SHA-256 of the canonical JSON form.
pub fn config_hash(config: &ScenarioConfig) -> Result<String> {
    let json = serde_json::to_string(config)?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Experiment defaults: 25 locations, synthetic asymmetric travel times on
/// [2, 30] slots, demand parameters from truncated normals on the published
/// rectangle, gaussian shocks truncated to [-0.5, 0.5], p_max 1, c 0.1,
/// rho 2, eta 0.45.
pub fn default_config(n: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_locations: n,
        travel_time: TravelTimeConfig {
            csv: None,
            matrix: None,
            synthetic: Some(SyntheticTravelTime {
                min_slots: 2,
                max_slots: 30,
            }),
        },
        theta: None,
        theta_generate: Some(ThetaGenerate {
            alpha_mean: 3.75,
            alpha_variance: 2.25,
            beta_mean: 2.5,
            beta_variance: 2.25,
            variance_is_std: false,
            symmetric: false,
            ensure_cap_free: false,
            cap_margin: 0.0,
        }),
        bounds: BoundsConfig {
            alpha_min: 3.5,
            alpha_max: 4.0,
            beta_min: 2.0,
            beta_max: 3.0,
        },
        shock: ShockConfig {
            kind: "truncated_gaussian".into(),
            mu: 0.0,
            sigma: 1.0,
            lo: -0.5,
            hi: 0.5,
            per_link: vec![],
        },
        cost_c: 0.1,
        p_max: 1.0,
        rho: 2.0,
        eta: 0.45,
        seed,
        max_locations: None,
    }
}

/// Same defaults with symmetric pair draws kept cap-free: the instance
/// provably satisfies the cap-slack condition, so the clairvoyant optimum has
/// no binding caps.
pub fn default_balanced_config(n: usize, seed: u64) -> ScenarioConfig {
    let mut c = default_config(n, seed);
    if let Some(gen) = c.theta_generate.as_mut() {
        gen.symmetric = true;
        gen.ensure_cap_free = true;
        gen.cap_margin = 0.15;
    }
    c
}
