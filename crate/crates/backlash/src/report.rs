//! Report assembly: the JSON document emitted by every subcommand and the
//! CSV exports. Everything is derived from plain structs so two runs with
//! the same scenario and seed are byte-identical.

use nalgebra::DVector;
use serde::Serialize;

use crate::linear_subsystem::PeriodicOrbit;
use crate::localization::{DeviationDecay, EmptinessVerdict, Membership, TubeCheckReport};
use crate::rate_analysis::{ExponentReport, RateCertificate};
use crate::scenario::Scenario;
use crate::sweeping_sim::{PairRun, Trajectory};

/// Floats are printed with 17 significant digits so the decimal text
/// round-trips to the identical bits.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
pub struct Report {
    pub scenario: ScenarioSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localization: Option<LocalizationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationarity: Option<StationaritySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_exponent: Option<ExponentSection>,
    pub provenance: Provenance,
}

#[derive(Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub mu: f64,
    pub hurwitz: bool,
    pub theta: String,
    pub period: f64,
}

#[derive(Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub steps_per_period: usize,
    pub periods: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube_horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube_tail_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube_check_times: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube_check_directions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationary_grid: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lambda_trace: Vec<LambdaTracePoint>,
    pub version: String,
}

#[derive(Serialize)]
pub struct LambdaTracePoint {
    pub lambda: f64,
    pub theta: f64,
}

#[derive(Serialize)]
pub struct LocalizationSection {
    /// d = diam(CΞ∞ + Θ)
    pub tube_diameter: f64,
    /// D(Θ, {0})
    pub theta_deviation: f64,
    /// D(C(FΞ∞ + EΘ), {0})
    pub velocity_deviation: f64,
    pub tube_check_max_violation: f64,
    pub tube_check_violations: usize,
    pub tube_check_samples: usize,
    pub tube_check_min_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation_decay_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation_decay_limit: Option<f64>,
}

impl LocalizationSection {
    pub fn new(
        tube_diameter: f64,
        theta_deviation: f64,
        velocity_deviation: f64,
        check: &TubeCheckReport,
        decay: Option<&DeviationDecay>,
        mu: f64,
    ) -> Self {
        LocalizationSection {
            tube_diameter,
            theta_deviation,
            velocity_deviation,
            tube_check_max_violation: check.max_violation,
            tube_check_violations: check.violation_count,
            tube_check_samples: check.checked,
            tube_check_min_margin: check.min_margin,
            deviation_decay_slope: decay.map(|d| d.fitted_slope),
            deviation_decay_limit: decay.map(|_| mu + 0.1 * mu.abs()),
        }
    }
}

#[derive(Serialize)]
pub struct StationaritySection {
    pub horizon: f64,
    pub grid_steps: usize,
    pub min_phi_margin: f64,
    pub z0_membership: MembershipSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emptiness: Option<EmptinessSection>,
}

#[derive(Serialize)]
pub struct MembershipSection {
    pub stationary: bool,
    pub margin: f64,
    pub worst_time: f64,
}

impl From<&Membership> for MembershipSection {
    fn from(m: &Membership) -> Self {
        MembershipSection {
            stationary: m.stationary,
            margin: m.margin,
            worst_time: m.worst_time,
        }
    }
}

#[derive(Serialize)]
pub struct EmptinessSection {
    pub verdict: String,
    pub best_value: f64,
    pub witness: Vec<f64>,
    pub confident: bool,
}

impl From<&EmptinessVerdict> for EmptinessSection {
    fn from(v: &EmptinessVerdict) -> Self {
        match v {
            EmptinessVerdict::NonEmpty { witness, value } => EmptinessSection {
                verdict: "nonempty".into(),
                best_value: *value,
                witness: witness.iter().copied().collect(),
                confident: true,
            },
            EmptinessVerdict::NumericallyEmpty {
                best_point,
                best_value,
                confident,
            } => EmptinessSection {
                verdict: "numerically_empty".into(),
                best_value: *best_value,
                witness: best_point.iter().copied().collect(),
                confident: *confident,
            },
        }
    }
}

#[derive(Serialize)]
pub struct RateSection {
    pub lambda: f64,
    pub pi: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub strong_convexity: f64,
    pub oscillation: f64,
    pub tube_diameter: f64,
    pub path_bound_basic: f64,
    pub path_bound_partition: f64,
    pub path_bound_packing: f64,
    pub eta_dot_sup: f64,
    pub velocity_deviation: f64,
    pub velocity_bound: f64,
    pub gamma_1: f64,
    pub gamma_inf: f64,
    pub psi_zero: f64,
    pub psi_gamma_inf: f64,
    pub theta: f64,
    pub contracting: bool,
    pub no_strong_convexity_needed: bool,
}

impl From<&RateCertificate> for RateSection {
    fn from(c: &RateCertificate) -> Self {
        RateSection {
            lambda: c.lambda,
            pi: (0..c.pi.nrows())
                .map(|i| (0..c.pi.ncols()).map(|j| c.pi[(i, j)]).collect())
                .collect(),
            alpha: c.alpha,
            beta: c.beta,
            strong_convexity: c.strong_convexity,
            oscillation: c.oscillation,
            tube_diameter: c.tube_diameter,
            path_bound_basic: c.path_bounds.basic,
            path_bound_partition: c.path_bounds.partition,
            path_bound_packing: c.path_bounds.packing,
            eta_dot_sup: c.eta_dot_sup,
            velocity_deviation: c.velocity_deviation,
            velocity_bound: c.velocity_bound,
            gamma_1: c.gamma_1,
            gamma_inf: c.gamma_inf,
            psi_zero: c.psi_zero,
            psi_gamma_inf: c.psi_gamma_inf,
            theta: c.theta,
            contracting: c.contracting,
            no_strong_convexity_needed: c.no_strong_convexity_needed,
        }
    }
}

#[derive(Serialize)]
pub struct ExponentSection {
    pub fitted_slope: f64,
    pub theta: f64,
    pub allowance: f64,
    pub within_bound: bool,
    pub gronwall_max_excess: f64,
    pub gronwall_allowance: f64,
    pub gronwall_ok: bool,
    pub jensen_max_violation: f64,
    pub early_success: bool,
}

impl From<&ExponentReport> for ExponentSection {
    fn from(r: &ExponentReport) -> Self {
        ExponentSection {
            fitted_slope: r.fitted_slope,
            theta: r.theta,
            allowance: r.allowance,
            within_bound: r.within_bound,
            gronwall_max_excess: r.gronwall_max_excess,
            gronwall_allowance: r.gronwall_allowance,
            gronwall_ok: r.gronwall_ok,
            jensen_max_violation: r.jensen_max_violation,
            early_success: r.early_success,
        }
    }
}

pub fn scenario_summary(s: &Scenario) -> ScenarioSummary {
    let theta_desc = match &s.theta {
        crate::convex_sets::ConvexCompact::Ball(b) => {
            format!("ball(r={}, dim={})", b.radius(), b.center().len())
        }
        crate::convex_sets::ConvexCompact::Ellipsoid(e) => {
            format!("ellipsoid(dim={})", e.center().len())
        }
    };
    ScenarioSummary {
        name: s.name.clone(),
        notes: s.notes.clone(),
        state_dim: s.model.state_dim(),
        input_dim: s.model.input_dim(),
        output_dim: s.model.output_dim(),
        mu: s.model.mu(),
        hurwitz: s.model.is_hurwitz(),
        theta: theta_desc,
        period: s.input.period(),
    }
}

fn push_vector_columns(header: &mut String, prefix: &str, len: usize) {
    for i in 0..len {
        header.push(',');
        header.push_str(prefix);
        header.push_str(&i.to_string());
    }
}

/// Trajectory CSV: `t, x[0..n), y[0..p), z[0..p), q[0..p), dz_norm, dy_norm`,
/// 17 significant digits throughout.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.x()[0].len();
    let p = traj.y()[0].len();
    let mut out = String::from("t");
    push_vector_columns(&mut out, "x", n);
    push_vector_columns(&mut out, "y", p);
    push_vector_columns(&mut out, "z", p);
    push_vector_columns(&mut out, "q", p);
    out.push_str(",dz_norm,dy_norm\n");
    for k in 0..traj.times().len() {
        out.push_str(&fmt(traj.times()[k]));
        for v in [&traj.x()[k], &traj.y()[k], &traj.z()[k], &traj.q()[k]] {
            for x in v.iter() {
                out.push(',');
                out.push_str(&fmt(*x));
            }
        }
        out.push(',');
        out.push_str(&fmt(traj.dz_norms()[k]));
        out.push(',');
        out.push_str(&fmt(traj.dy_norms()[k]));
        out.push('\n');
    }
    out
}

/// Periodic orbit CSV: `t, xi[0..n), eta[0..p), eta_dot[0..p)`.
pub fn orbit_csv(orbit: &PeriodicOrbit) -> String {
    let n = orbit.xi()[0].len();
    let p = orbit.eta()[0].len();
    let mut out = String::from("t");
    push_vector_columns(&mut out, "xi", n);
    push_vector_columns(&mut out, "eta", p);
    push_vector_columns(&mut out, "eta_dot", p);
    out.push('\n');
    for k in 0..orbit.times().len() {
        out.push_str(&fmt(orbit.times()[k]));
        for v in [&orbit.xi()[k], &orbit.eta()[k], &orbit.eta_dot()[k]] {
            for x in v.iter() {
                out.push(',');
                out.push_str(&fmt(*x));
            }
        }
        out.push('\n');
    }
    out
}

/// Paired-run ledger CSV: `t, v, gamma` with γ attributed to the step that
/// ends at t (first row zero).
pub fn pair_ledger_csv(pair: &PairRun) -> String {
    let mut out = String::from("t,v,gamma\n");
    for (k, &t) in pair.times().iter().enumerate() {
        let gamma = if k == 0 { 0.0 } else { pair.gamma[k - 1] };
        out.push_str(&fmt(t));
        out.push(',');
        out.push_str(&fmt(pair.v[k]));
        out.push(',');
        out.push_str(&fmt(gamma));
        out.push('\n');
    }
    out
}

/// Deviation record CSV for a paired run: `t, X[0..n), Q[0..p)`.
pub fn pair_deviation_csv(pair: &PairRun) -> String {
    let n = pair.first.x()[0].len();
    let p = pair.first.q()[0].len();
    let mut out = String::from("t");
    push_vector_columns(&mut out, "X", n);
    push_vector_columns(&mut out, "Q", p);
    out.push('\n');
    for (k, &t) in pair.times().iter().enumerate() {
        out.push_str(&fmt(t));
        let xd: DVector<f64> = pair.deviation_x(k);
        let qd: DVector<f64> = pair.deviation_q(k);
        for x in xd.iter().chain(qd.iter()) {
            out.push(',');
            out.push_str(&fmt(*x));
        }
        out.push('\n');
    }
    out
}
