//! Scenario configuration: JSON schema, validation with field paths, and
//! conversion into the typed model/input/set/simulation structures.
//!
//! Numbers are 64-bit floats, matrices are row-major nested arrays, and the
//! backlash set is a tagged record:
//! `{"type": "ball", "center": [...], "radius": r}` or
//! `{"type": "ellipsoid", "center": [...], "sigma": [[...], ...]}`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::convex_sets::ConvexCompact;
use crate::error::{Error, Result};
use crate::linear_subsystem::{PeriodicInput, PlantModel};
use crate::sweeping_sim::SimConfig;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    notes: Option<String>,
    model: ModelSection,
    theta: ThetaSection,
    input: InputSection,
    sim: SimSection,
    #[serde(default)]
    analysis: AnalysisSection,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out_dir: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ThetaSection {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Ellipsoid {
        center: Vec<f64>,
        sigma: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSection {
    period: f64,
    #[serde(default)]
    mean: Option<Vec<f64>>,
    #[serde(default)]
    harmonics: Vec<HarmonicSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HarmonicSection {
    #[serde(default)]
    cos: Option<Vec<f64>>,
    #[serde(default)]
    sin: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    #[serde(default = "default_steps_per_period")]
    steps_per_period: usize,
    #[serde(default = "default_periods")]
    periods: usize,
    x0: Vec<f64>,
    z0: Vec<f64>,
    /// "project" (default) repairs an inadmissible z0; "strict" rejects it.
    #[serde(default = "default_z0_mode")]
    z0_mode: String,
    #[serde(default)]
    pair: Option<PairSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairSection {
    x0: Vec<f64>,
    z0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisSection {
    #[serde(default = "default_true")]
    tube: bool,
    #[serde(default = "default_true")]
    stationarity: bool,
    #[serde(default = "default_true")]
    certificate: bool,
    #[serde(default = "default_true")]
    exponent: bool,
    /// λ as a fraction of |μ| (mutually exclusive with `lambda`)
    #[serde(default)]
    lambda_frac: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    lambda_search: bool,
    #[serde(default = "default_stationary_horizon")]
    stationary_horizon_periods: f64,
    #[serde(default = "default_stationary_grid")]
    stationary_grid: usize,
    #[serde(default = "default_emptiness_starts")]
    emptiness_starts: usize,
    #[serde(default = "default_tube_times")]
    tube_check_times: usize,
    #[serde(default = "default_tube_directions")]
    tube_check_directions: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        // an absent section takes the same per-field defaults as "{}"
        serde_json::from_str("{}").expect("empty analysis section deserializes")
    }
}

fn default_steps_per_period() -> usize {
    4096
}
fn default_periods() -> usize {
    30
}
fn default_z0_mode() -> String {
    "project".into()
}
fn default_true() -> bool {
    true
}
fn default_stationary_horizon() -> f64 {
    1.0
}
fn default_stationary_grid() -> usize {
    512
}
fn default_emptiness_starts() -> usize {
    16
}
fn default_tube_times() -> usize {
    256
}
fn default_tube_directions() -> usize {
    2048
}

/// How λ is chosen when a certificate is requested.
#[derive(Clone, Copy, Debug)]
pub enum LambdaChoice {
    FractionOfMu(f64),
    Absolute(f64),
}

impl LambdaChoice {
    pub fn resolve(&self, mu: f64) -> f64 {
        match *self {
            LambdaChoice::FractionOfMu(f) => f * mu.abs(),
            LambdaChoice::Absolute(l) => l,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub tube: bool,
    pub stationarity: bool,
    pub certificate: bool,
    pub exponent: bool,
    pub lambda: LambdaChoice,
    pub lambda_search: bool,
    pub stationary_horizon_periods: f64,
    pub stationary_grid: usize,
    pub emptiness_starts: usize,
    pub tube_check_times: usize,
    pub tube_check_directions: usize,
}

/// A fully validated scenario, ready to drive simulations and analyses.
#[derive(Debug)]
pub struct Scenario {
    pub name: String,
    pub notes: Option<String>,
    pub model: PlantModel,
    pub theta: ConvexCompact,
    pub input: PeriodicInput,
    pub sim: SimConfig,
    pub pair: Option<SimConfig>,
    pub analysis: AnalysisOptions,
    pub seed: u64,
    pub out_dir: Option<String>,
}

fn matrix_from(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::config(path, "matrix must have at least one row"));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(Error::config(path, "matrix rows must be nonempty"));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::config(path, "matrix rows have inconsistent lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(path, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn vector_from(path: &str, v: &[f64]) -> Result<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(path, "vector entries must be finite"));
    }
    Ok(DVector::from_column_slice(v))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(path.display().to_string(), format!("cannot read config: {e}"))
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: ScenarioFile = serde_json::from_str(text)
            .map_err(|e| Error::config("<config>", e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: ScenarioFile) -> Result<Self> {
        let a = matrix_from("model.a", &raw.model.a)?;
        let b = matrix_from("model.b", &raw.model.b)?;
        let c = matrix_from("model.c", &raw.model.c)?;
        let e = matrix_from("model.e", &raw.model.e)?;
        let model = PlantModel::new(a, b, c, e)
            .map_err(|err| Error::config("model", err.to_string()))?;
        let (n, m, p) = (model.state_dim(), model.input_dim(), model.output_dim());

        let theta = match &raw.theta {
            ThetaSection::Ball { center, radius } => {
                let center = vector_from("theta.center", center)?;
                if center.len() != p {
                    return Err(Error::config(
                        "theta.center",
                        format!("dimension {} does not match output dimension {p}", center.len()),
                    ));
                }
                ConvexCompact::ball(center, *radius)
                    .map_err(|e| Error::config("theta.radius", e.to_string()))?
            }
            ThetaSection::Ellipsoid { center, sigma } => {
                let center = vector_from("theta.center", center)?;
                if center.len() != p {
                    return Err(Error::config(
                        "theta.center",
                        format!("dimension {} does not match output dimension {p}", center.len()),
                    ));
                }
                let sigma = matrix_from("theta.sigma", sigma)?;
                ConvexCompact::ellipsoid(center, sigma)
                    .map_err(|e| Error::config("theta.sigma", e.to_string()))?
            }
        };

        let mean = match &raw.input.mean {
            Some(v) => vector_from("input.mean", v)?,
            None => DVector::zeros(m),
        };
        if mean.len() != m {
            return Err(Error::config(
                "input.mean",
                format!("dimension {} does not match input dimension {m}", mean.len()),
            ));
        }
        let mut harmonics = Vec::with_capacity(raw.input.harmonics.len());
        for (k, h) in raw.input.harmonics.iter().enumerate() {
            let path = format!("input.harmonics[{k}]");
            let cos = match &h.cos {
                Some(v) => vector_from(&format!("{path}.cos"), v)?,
                None => DVector::zeros(m),
            };
            let sin = match &h.sin {
                Some(v) => vector_from(&format!("{path}.sin"), v)?,
                None => DVector::zeros(m),
            };
            if cos.len() != m || sin.len() != m {
                return Err(Error::config(path, "harmonic coefficient dimension mismatch"));
            }
            harmonics.push((cos, sin));
        }
        let input = PeriodicInput::new(raw.input.period, mean, harmonics)
            .map_err(|e| Error::config("input.period", e.to_string()))?;

        let x0 = vector_from("sim.x0", &raw.sim.x0)?;
        let z0 = vector_from("sim.z0", &raw.sim.z0)?;
        if x0.len() != n {
            return Err(Error::config(
                "sim.x0",
                format!("dimension {} does not match state dimension {n}", x0.len()),
            ));
        }
        if z0.len() != p {
            return Err(Error::config(
                "sim.z0",
                format!("dimension {} does not match output dimension {p}", z0.len()),
            ));
        }
        let project_z0 = match raw.sim.z0_mode.as_str() {
            "project" => true,
            "strict" => false,
            other => {
                return Err(Error::config(
                    "sim.z0_mode",
                    format!("expected \"project\" or \"strict\", got \"{other}\""),
                ))
            }
        };
        if raw.sim.steps_per_period == 0 {
            return Err(Error::config("sim.steps_per_period", "must be positive"));
        }
        if raw.sim.periods == 0 {
            return Err(Error::config("sim.periods", "must be positive"));
        }
        let mut sim = SimConfig::new(raw.sim.steps_per_period, raw.sim.periods, x0, z0);
        sim.project_z0 = project_z0;

        let pair = match &raw.sim.pair {
            Some(pcfg) => {
                let x0 = vector_from("sim.pair.x0", &pcfg.x0)?;
                let z0 = vector_from("sim.pair.z0", &pcfg.z0)?;
                if x0.len() != n || z0.len() != p {
                    return Err(Error::config("sim.pair", "initial condition dimension mismatch"));
                }
                let mut cfg =
                    SimConfig::new(raw.sim.steps_per_period, raw.sim.periods, x0, z0);
                cfg.project_z0 = project_z0;
                Some(cfg)
            }
            None => None,
        };

        let lambda = match (raw.analysis.lambda, raw.analysis.lambda_frac) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "analysis.lambda",
                    "give either `lambda` or `lambda_frac`, not both",
                ))
            }
            (Some(l), None) => {
                if !(l > 0.0) {
                    return Err(Error::config("analysis.lambda", "must be positive"));
                }
                LambdaChoice::Absolute(l)
            }
            (None, Some(f)) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::config("analysis.lambda_frac", "must be in (0, 1)"));
                }
                LambdaChoice::FractionOfMu(f)
            }
            (None, None) => LambdaChoice::FractionOfMu(0.9),
        };

        let analysis = AnalysisOptions {
            tube: raw.analysis.tube,
            stationarity: raw.analysis.stationarity,
            certificate: raw.analysis.certificate,
            exponent: raw.analysis.exponent,
            lambda,
            lambda_search: raw.analysis.lambda_search,
            stationary_horizon_periods: raw.analysis.stationary_horizon_periods,
            stationary_grid: raw.analysis.stationary_grid,
            emptiness_starts: raw.analysis.emptiness_starts,
            tube_check_times: raw.analysis.tube_check_times,
            tube_check_directions: raw.analysis.tube_check_directions,
        };

        // the tube and certificate analyses assume 0 ∈ Θ
        if analysis.tube || analysis.certificate {
            let origin = DVector::zeros(p);
            if !theta
                .contains(&origin, theta.default_boundary_tol())
                .map_err(|e| Error::config("theta", e.to_string()))?
            {
                return Err(Error::config(
                    "theta",
                    "tube/certificate analyses require 0 ∈ Θ",
                ));
            }
        }

        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| "unnamed".into()),
            notes: raw.notes,
            model,
            theta,
            input,
            sim,
            pair,
            analysis,
            seed: raw.seed,
            out_dir: raw.out_dir,
        })
    }
}
