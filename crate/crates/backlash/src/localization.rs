//! Tubular localization of the nonlinear trajectories around the linearized
//! ones, and the stationary-initial-condition queries.
//!
//! The tube cross-section Ξ(t) is known only through its support function
//! σ_{Ξ(t)}(u) = ∫₀ᵗ σ_Θ(Eᵀe^{sFᵀ}u) ds, so everything here is quadrature:
//! a composite Gauss-Legendre base grid (32 nodes per unit of 1/|μ|) with
//! adaptive bisection on top (the integrand has corners where Eᵀe^{sFᵀ}u
//! crosses the support-function kinks). The infinite horizon is truncated
//! at a point where the analytic tail bound drops below 1e-9 per unit |u|.
//!
//! ℜ(T), the set of T-stationary backlash initial conditions, is handled
//! through membership and emptiness queries rather than an explicit set
//! representation: Φ(t)⁻¹-images of translated sets have no finite
//! description, and grid certificates are the implementable surrogate.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::convex_sets::{
    deviation_from, refine_over_directions, unit_directions, ConvexCompact, SupportFn,
};
use crate::error::{Error, Result};
use crate::linear_subsystem::{forced_response, phi_matrix, PeriodicInput, PlantModel};
use crate::matrix_core::{expm, operator_norm};
use crate::quadrature::{GL8_NODES, GL8_WEIGHTS};

const TAIL_TARGET: f64 = 1e-9;
const ADAPTIVE_MAX_DEPTH: usize = 24;

/// Precomputed Gauss-Legendre nodes on one interval: scaled weights and the
/// direction-independent matrices G(s) = Eᵀe^{sFᵀ}.
struct SegmentNodes {
    nodes: Vec<(f64, DMatrix<f64>)>,
}

impl SegmentNodes {
    fn eval(&self, theta: &ConvexCompact, u: &DVector<f64>) -> f64 {
        self.nodes
            .iter()
            .map(|(w, g)| w * theta.support(&(g * u)))
            .sum()
    }
}

/// Support-function view of the localization tube: Ξ(t) at the aligned
/// times and Ξ∞, plus the certificate quantities derived from them.
pub struct TubeCrossSection {
    theta: ConvexCompact,
    f_t: DMatrix<f64>,
    e: DMatrix<f64>,
    state_dim: usize,
    times: Vec<f64>,
    /// ascending segment boundaries from 0 to t_inf; aligned times are a subset
    boundaries: Vec<f64>,
    /// boundary index of each requested time
    time_boundary_idx: Vec<usize>,
    base_nodes: Vec<Arc<SegmentNodes>>,
    memo: Mutex<HashMap<(u64, u64), Arc<SegmentNodes>>>,
    t_inf: f64,
    /// tail of the infinite-horizon integral per unit |u|
    tail_bound: f64,
    mu: f64,
    seg_abs_tol: f64,
    theta_deviation: f64,
    output_tube_diameter: f64,
    velocity_deviation: f64,
}

fn gl8_segment(f_t: &DMatrix<f64>, e: &DMatrix<f64>, a: f64, b: f64) -> Result<SegmentNodes> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut nodes = Vec::with_capacity(8);
    for j in 0..8 {
        let s = mid + half * GL8_NODES[j];
        let g = e.transpose() * expm(f_t, s)?;
        nodes.push((half * GL8_WEIGHTS[j], g));
    }
    Ok(SegmentNodes { nodes })
}

/// Build the tube for a model and backlash set, aligning the quadrature
/// segmentation with the requested evaluation times (ascending, ≥ 0).
/// Requires F Hurwitz and 0 ∈ Θ.
pub fn build_tube(
    model: &PlantModel,
    theta: &ConvexCompact,
    times: &[f64],
) -> Result<TubeCrossSection> {
    model.require_hurwitz()?;
    if theta.dim() != model.output_dim() {
        return Err(Error::Domain(
            "backlash set dimension does not match the model output".into(),
        ));
    }
    let origin = DVector::zeros(theta.dim());
    if !theta.contains(&origin, theta.default_boundary_tol())? {
        return Err(Error::Hypothesis(
            "the localization tube requires 0 ∈ Θ".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Domain(
            "tube times must be strictly ascending and nonnegative".into(),
        ));
    }

    let mu = model.mu();
    let f_t = model.f().transpose();
    let e = model.e().clone();
    let n = model.state_dim();

    // deviation of Θ from the origin and the coupling norm drive the tail
    let theta_deviation = deviation_from(&theta.support_fn(), None);
    let e_norm = operator_norm(&e);

    // envelope ||e^{sF}|| ≤ K e^{0.9μs}, K probed on a grid long enough to
    // cover polynomial-times-exponential humps of non-normal F
    let mu_hat = 0.9 * mu;
    let probe_horizon = 10.0 * (n as f64 + 1.0) / mu.abs();
    let mut k_env: f64 = 1.0;
    for i in 0..=400 {
        let s = probe_horizon * i as f64 / 400.0;
        let norm = operator_norm(&expm(model.f(), s)?);
        k_env = k_env.max(norm * (-mu_hat * s).exp());
    }
    k_env *= 1.05;

    // truncation horizon from the analytic tail bound alone: for requested
    // times beyond it, Ξ(t) and Ξ∞ agree up to the tail (and σ_{Ξ∞} is a
    // valid upper bound in any case since Ξ(t) ⊂ Ξ∞)
    let t_inf = if theta_deviation * e_norm == 0.0 {
        1.0 / mu.abs()
    } else {
        let target = TAIL_TARGET * mu_hat.abs() / (theta_deviation * e_norm * k_env);
        (target.ln() / mu_hat).max(1.0 / mu.abs())
    };
    let tail_bound = if theta_deviation * e_norm == 0.0 {
        0.0
    } else {
        theta_deviation * e_norm * k_env * (mu_hat * t_inf).exp() / mu_hat.abs()
    };

    // base boundaries: 32 nodes per 1/|μ| means segments of 1/(4|μ|) with
    // an 8-point rule, merged with the requested times below the horizon
    let seg_len = 1.0 / (4.0 * mu.abs());
    let mut boundaries: Vec<f64> = Vec::new();
    let mut s = 0.0;
    while s < t_inf {
        boundaries.push(s);
        s += seg_len;
    }
    boundaries.push(t_inf);
    for &t in times {
        if t < t_inf {
            boundaries.push(t);
        }
    }
    boundaries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    boundaries.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));

    let time_boundary_idx = times
        .iter()
        .map(|&t| {
            if t >= t_inf {
                boundaries.len() - 1
            } else {
                boundaries
                    .iter()
                    .position(|&b| (b - t).abs() <= 1e-12 * (1.0 + t.abs()))
                    .expect("requested time present among boundaries")
            }
        })
        .collect();

    let mut base_nodes = Vec::with_capacity(boundaries.len().saturating_sub(1));
    for w in boundaries.windows(2) {
        base_nodes.push(Arc::new(gl8_segment(&f_t, &e, w[0], w[1])?));
    }

    let seg_abs_tol = 1e-12 * (1.0 + theta_deviation * e_norm / mu.abs());

    let mut tube = TubeCrossSection {
        theta: theta.clone(),
        f_t,
        e,
        state_dim: n,
        times: times.to_vec(),
        boundaries,
        time_boundary_idx,
        base_nodes,
        memo: Mutex::new(HashMap::new()),
        t_inf,
        tail_bound,
        mu,
        seg_abs_tol,
        theta_deviation,
        output_tube_diameter: 0.0,
        velocity_deviation: 0.0,
    };

    tube.output_tube_diameter = tube.compute_output_tube_diameter(model);
    tube.velocity_deviation = tube.compute_velocity_deviation(model);
    Ok(tube)
}

impl TubeCrossSection {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_inf(&self) -> f64 {
        self.t_inf
    }

    /// Truncation tail bound per unit |u|.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// D(Θ, {0}), cached from construction.
    pub fn theta_deviation(&self) -> f64 {
        self.theta_deviation
    }

    /// d = diam(CΞ∞ + Θ).
    pub fn output_tube_diameter(&self) -> f64 {
        self.output_tube_diameter
    }

    /// D(C(FΞ∞ + EΘ), {0}), the set-valued part of the velocity bound.
    pub fn velocity_deviation(&self) -> f64 {
        self.velocity_deviation
    }

    fn nodes_for(&self, a: f64, b: f64) -> Result<Arc<SegmentNodes>> {
        let key = (a.to_bits(), b.to_bits());
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let fresh = Arc::new(gl8_segment(&self.f_t, &self.e, a, b)?);
        self.memo.lock().unwrap().insert(key, fresh.clone());
        Ok(fresh)
    }

    fn refine(&self, a: f64, b: f64, u: &DVector<f64>, whole: f64, depth: usize) -> Result<f64> {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return Ok(whole);
        }
        let left = self.nodes_for(a, mid)?.eval(&self.theta, u);
        let right = self.nodes_for(mid, b)?.eval(&self.theta, u);
        let better = left + right;
        let tol = self.seg_abs_tol.max(1e-10 * better.abs());
        if (whole - better).abs() <= tol || depth >= ADAPTIVE_MAX_DEPTH {
            return Ok(better);
        }
        Ok(self.refine(a, mid, u, left, depth + 1)? + self.refine(mid, b, u, right, depth + 1)?)
    }

    fn integral_on(&self, a: f64, b: f64, u: &DVector<f64>, seed: Option<&SegmentNodes>) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let whole = match seed {
            Some(nodes) => nodes.eval(&self.theta, u),
            None => self.nodes_for(a, b)?.eval(&self.theta, u),
        };
        self.refine(a, b, u, whole, 0)
    }

    /// σ_{Ξ∞}(u) = ∫₀^∞ σ_Θ(Eᵀe^{sFᵀ}u) ds (truncated with the tail bound).
    pub fn support_at_inf(&self, u: &DVector<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (k, w) in self.boundaries.windows(2).enumerate() {
            acc += self.integral_on(w[0], w[1], u, Some(&self.base_nodes[k]))?;
        }
        Ok(acc)
    }

    /// σ_{Ξ(t)}(u) at each aligned time, one pass over the segmentation.
    pub fn support_profile(&self, u: &DVector<f64>) -> Result<Vec<f64>> {
        let mut cumulative = vec![0.0; self.boundaries.len()];
        let mut acc = 0.0;
        for (k, w) in self.boundaries.windows(2).enumerate() {
            acc += self.integral_on(w[0], w[1], u, Some(&self.base_nodes[k]))?;
            cumulative[k + 1] = acc;
        }
        Ok(self
            .time_boundary_idx
            .iter()
            .map(|&i| cumulative[i])
            .collect())
    }

    /// σ_{Ξ(t)}(u) for an arbitrary t ≥ 0 (not necessarily aligned).
    pub fn support_at(&self, t: f64, u: &DVector<f64>) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Domain("tube support: negative time".into()));
        }
        if t >= self.t_inf {
            return self.support_at_inf(u);
        }
        let mut acc = 0.0;
        for (k, w) in self.boundaries.windows(2).enumerate() {
            if w[1] <= t {
                acc += self.integral_on(w[0], w[1], u, Some(&self.base_nodes[k]))?;
            } else {
                acc += self.integral_on(w[0], t, u, None)?;
                break;
            }
        }
        Ok(acc)
    }

    /// Wrap Ξ∞ as a composable support function (shared tube).
    pub fn infinity_support_fn(tube: Arc<TubeCrossSection>) -> SupportFn {
        let dim = tube.state_dim;
        SupportFn::from_fn(dim, move |u| {
            tube.support_at_inf(u).expect("tube quadrature failed")
        })
    }

    fn compute_output_tube_diameter(&self, model: &PlantModel) -> f64 {
        let p = model.output_dim();
        let ct = model.c().transpose();
        refine_over_directions(p, |dirs| {
            dirs.iter()
                .map(|u| {
                    let v = &ct * u;
                    let plus = self.support_at_inf(&v).expect("tube quadrature failed")
                        + self.theta.support(u);
                    let w = -u;
                    let minus = self.support_at_inf(&(&ct * &w)).expect("tube quadrature failed")
                        + self.theta.support(&w);
                    plus + minus
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    fn compute_velocity_deviation(&self, model: &PlantModel) -> f64 {
        let p = model.output_dim();
        let ftct = model.f().transpose() * model.c().transpose();
        let etct = model.e().transpose() * model.c().transpose();
        refine_over_directions(p, |dirs| {
            dirs.iter()
                .map(|u| {
                    self.support_at_inf(&(&ftct * u)).expect("tube quadrature failed")
                        + self.theta.support(&(&etct * u))
                })
                .fold(0.0_f64, f64::max)
        })
    }
}

/// Outcome of a tube membership sweep over times × directions.
#[derive(Clone, Debug)]
pub struct TubeCheckReport {
    pub checked: usize,
    pub violation_count: usize,
    /// max over samples of uᵀ(x - ξ) - σ_{Ξ(t)}(u) (≤ tol passes)
    pub max_violation: f64,
    pub worst_time: f64,
    /// min over times of the worst margin σ - uᵀ(x-ξ) across directions
    pub min_margin: f64,
}

/// Check uᵀ(x(t) - ξ(t)) ≤ σ_{Ξ(t)}(u) + tol on the tube's aligned times.
/// `xs` and `xis` must be sampled exactly at `tube.times()` with the same
/// initial condition.
pub fn tube_check(
    tube: &TubeCrossSection,
    xs: &[DVector<f64>],
    xis: &[DVector<f64>],
    directions: &[DVector<f64>],
    tol: f64,
) -> Result<TubeCheckReport> {
    if xs.len() != tube.times().len() || xis.len() != tube.times().len() {
        return Err(Error::Domain(
            "tube_check: trajectory samples must align with the tube times".into(),
        ));
    }
    let gaps: Vec<DVector<f64>> = xs.iter().zip(xis.iter()).map(|(x, xi)| x - xi).collect();
    let mut report = TubeCheckReport {
        checked: 0,
        violation_count: 0,
        max_violation: f64::NEG_INFINITY,
        worst_time: 0.0,
        min_margin: f64::INFINITY,
    };
    let mut worst_margin_per_time = vec![f64::INFINITY; tube.times().len()];
    for u in directions {
        let profile = tube.support_profile(u)?;
        for (i, gap) in gaps.iter().enumerate() {
            let violation = u.dot(gap) - profile[i];
            report.checked += 1;
            if violation > report.max_violation {
                report.max_violation = violation;
                report.worst_time = tube.times()[i];
            }
            if violation > tol {
                report.violation_count += 1;
            }
            if -violation < worst_margin_per_time[i] {
                worst_margin_per_time[i] = -violation;
            }
        }
    }
    report.min_margin = worst_margin_per_time
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(report)
}

pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Upper bounds on the Hausdorff deviation D(Ξ∞, Ξ(t)) over a time grid,
/// with the fitted exponential decay slope.
#[derive(Clone, Debug)]
pub struct DeviationDecay {
    pub times: Vec<f64>,
    pub gaps: Vec<f64>,
    /// least-squares slope of ln(gap); -∞ when every gap is at the floor
    pub fitted_slope: f64,
}

pub fn deviation_decay(
    model: &PlantModel,
    theta: &ConvexCompact,
    times: &[f64],
) -> Result<DeviationDecay> {
    let tube = build_tube(model, theta, times)?;
    let n = model.state_dim();
    let dirs = unit_directions(n, crate::convex_sets::default_direction_count(n).min(512));
    let mut gaps = vec![0.0_f64; times.len()];
    for u in &dirs {
        let profile = tube.support_profile(u)?;
        let full = tube.support_at_inf(u)?;
        for (i, p) in profile.iter().enumerate() {
            let gap = (full - p).max(0.0);
            if gap > gaps[i] {
                gaps[i] = gap;
            }
        }
    }
    let floor = 1e-13 * (1.0 + gaps.first().copied().unwrap_or(0.0));
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(gaps.iter())
        .filter(|(_, &g)| g > floor)
        .map(|(&t, &g)| (t, g.ln()))
        .collect();
    let fitted_slope = least_squares_slope(&pts);
    Ok(DeviationDecay {
        times: times.to_vec(),
        gaps,
        fitted_slope,
    })
}

/// Precomputed data for ℜ(T) queries with a fixed x(0) and input: Φ(tᵢ),
/// the open-loop output Cx*(tᵢ), and the Φ nonsingularity margins.
pub struct StationaryProblem {
    theta: ConvexCompact,
    grid: Vec<f64>,
    phi: Vec<DMatrix<f64>>,
    y_star: Vec<DVector<f64>>,
    pub min_phi_margin: f64,
}

/// Membership verdict for one candidate z(0).
#[derive(Clone, Debug)]
pub struct Membership {
    pub stationary: bool,
    /// min over grid times of -ρ̂(Φ(t)z₀ - Cx*(t), Θ): positive inside.
    pub margin: f64,
    pub worst_time: f64,
}

impl StationaryProblem {
    pub fn new(
        model: &PlantModel,
        theta: &ConvexCompact,
        input: &PeriodicInput,
        x0: &DVector<f64>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        if horizon <= 0.0 || steps == 0 {
            return Err(Error::Domain("stationary horizon must be positive".into()));
        }
        let grid: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
        let mut phi = Vec::with_capacity(grid.len());
        let mut min_phi_margin = f64::INFINITY;
        for &t in &grid {
            let (m, margin) = phi_matrix(model, t)?;
            if margin <= 1e-12 {
                return Err(Error::Hypothesis(format!(
                    "Φ(t) is singular at t = {t:.6}: the stationarity representation \
                     requires Φ nonsingular on [0, T]"
                )));
            }
            if margin < min_phi_margin {
                min_phi_margin = margin;
            }
            phi.push(m);
        }
        let xs = forced_response(model, input, x0, &grid)?;
        let y_star = xs.iter().map(|x| model.c() * x).collect();
        Ok(StationaryProblem {
            theta: theta.clone(),
            grid,
            phi,
            y_star,
            min_phi_margin,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// z₀ ∈ ℜ(T) iff Φ(t)z₀ - Cx*(t) ∈ Θ for all grid t (the inverse-free
    /// form of the intersection representation).
    pub fn membership(&self, z0: &DVector<f64>) -> Result<Membership> {
        let mut worst = f64::NEG_INFINITY;
        let mut worst_time = 0.0;
        for ((phi, y), &t) in self.phi.iter().zip(self.y_star.iter()).zip(self.grid.iter()) {
            let v = phi * z0 - y;
            let sd = self.theta.signed_distance(&v)?;
            if sd > worst {
                worst = sd;
                worst_time = t;
            }
        }
        Ok(Membership {
            stationary: worst <= 1e-12,
            margin: -worst,
            worst_time,
        })
    }

    /// max over grid t of ρ(Φ(t)z₀ - Cx*(t), Θ) — zero exactly on ℜ(T).
    pub fn distance_objective(&self, z0: &DVector<f64>) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (phi, y) in self.phi.iter().zip(self.y_star.iter()) {
            let v = phi * z0 - y;
            let d = self.theta.distance(&v)?;
            if d > worst {
                worst = d;
            }
        }
        Ok(worst)
    }
}

/// Membership query with the grid refined ×2 until the verdict stabilizes
/// (two consecutive grids agree), starting from `steps`.
pub fn stationary_membership(
    model: &PlantModel,
    theta: &ConvexCompact,
    input: &PeriodicInput,
    x0: &DVector<f64>,
    z0: &DVector<f64>,
    horizon: f64,
    steps: usize,
) -> Result<Membership> {
    let mut steps = steps.max(16);
    let mut prev: Option<Membership> = None;
    for _ in 0..5 {
        let problem = StationaryProblem::new(model, theta, input, x0, horizon, steps)?;
        let verdict = problem.membership(z0)?;
        if let Some(p) = &prev {
            if p.stationary == verdict.stationary {
                return Ok(verdict);
            }
        }
        prev = Some(verdict);
        steps *= 2;
    }
    Ok(prev.expect("at least one refinement pass"))
}

/// Search outcome for ℜ(T) = ∅.
#[derive(Clone, Debug)]
pub enum EmptinessVerdict {
    NonEmpty {
        witness: DVector<f64>,
        value: f64,
    },
    /// No witness found: the best objective stayed positive after the
    /// budget. `confident` means it exceeded the margin tolerance.
    NumericallyEmpty {
        best_point: DVector<f64>,
        best_value: f64,
        confident: bool,
    },
}

/// Multi-start compass descent on the convex objective
/// g(z₀) = max_t ρ(Φ(t)z₀ - Cx*(t), Θ). The verdict "empty" is numerical,
/// not certified: the search is a heuristic.
pub fn stationary_emptiness(
    problem: &StationaryProblem,
    starts: usize,
    seed: u64,
    margin_tol: f64,
) -> Result<EmptinessVerdict> {
    let p = problem.theta.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // scale from the spread of the open-loop output plus the set size
    let spread = problem
        .y_star
        .iter()
        .map(|y| y.norm())
        .fold(0.0_f64, f64::max);
    let scale = 1.0 + spread + problem.theta.diameter_exact();
    let witness_tol = 1e-10 * scale;

    let mut best_point = DVector::zeros(p);
    let mut best_value = f64::INFINITY;

    let consider = |point: DVector<f64>, value: f64, best_point: &mut DVector<f64>, best_value: &mut f64| {
        if value < *best_value {
            *best_value = value;
            *best_point = point;
        }
    };

    for start_idx in 0..starts.max(1) {
        // start from a point satisfying the constraint at one grid time:
        // z₀ = Φ(tᵢ)⁻¹(Cx*(tᵢ) + θ) with θ drawn inside Θ
        let gi = rng.random_range(0..problem.grid.len());
        let theta_point = if start_idx == 0 {
            problem.theta.center().clone()
        } else {
            let dir = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0_f64));
            let s: f64 = rng.random_range(0.0..1.0);
            let b = problem.theta.boundary_point(&dir)?;
            problem.theta.center() + (b - problem.theta.center()) * s
        };
        let rhs = &problem.y_star[gi] + theta_point;
        let z0 = problem.phi[gi]
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("Φ(t) solve failed in emptiness search".into()))?;

        let mut current = z0;
        let mut value = problem.distance_objective(&current)?;
        let mut step = 0.5 * scale;
        let mut iterations = 0usize;
        while step > 1e-11 * scale && value > witness_tol && iterations < 600 {
            iterations += 1;
            let mut improved = false;
            let mut polls: Vec<DVector<f64>> = Vec::with_capacity(2 * p + 2);
            for j in 0..p {
                let mut e = DVector::zeros(p);
                e[j] = 1.0;
                polls.push(e.clone());
                polls.push(-e);
            }
            for _ in 0..2 {
                let d = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0_f64));
                let norm = d.norm();
                if norm > 1e-6 {
                    polls.push(d / norm);
                }
            }
            for d in &polls {
                let candidate = &current + d * step;
                let cv = problem.distance_objective(&candidate)?;
                if cv < value {
                    current = candidate;
                    value = cv;
                    improved = true;
                    break;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        consider(current.clone(), value, &mut best_point, &mut best_value);
        if best_value <= witness_tol {
            return Ok(EmptinessVerdict::NonEmpty {
                witness: best_point,
                value: best_value,
            });
        }
    }

    Ok(EmptinessVerdict::NumericallyEmpty {
        confident: best_value > margin_tol,
        best_point,
        best_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_sets::diameter;
    use crate::linear_subsystem::linearized_response;

    fn scalar_model(a: f64, b: f64, c: f64, e: f64) -> PlantModel {
        PlantModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, e),
        )
        .unwrap()
    }

    fn ball1(radius: f64) -> ConvexCompact {
        ConvexCompact::ball(DVector::zeros(1), radius).unwrap()
    }

    #[test]
    fn tube_vanishes_without_coupling() {
        // E = 0 → Ξ(t) = Ξ∞ = {0}
        let model = scalar_model(-1.0, 1.0, 1.0, 0.0);
        let theta = ball1(0.3);
        let tube = build_tube(&model, &theta, &[0.5, 1.0, 2.0]).unwrap();
        let u = DVector::from_vec(vec![1.0]);
        assert_eq!(tube.support_at_inf(&u).unwrap(), 0.0);
        assert!(tube.support_profile(&u).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tube_matches_scalar_closed_form() {
        // f < 0, e = 1, Θ = ball(0, ρ): σ_{Ξ∞}(u) = ρ|u|/|f|
        // (C = 0 so that F = A = f while the coupling E stays active)
        let f = -0.8;
        let rho = 0.25;
        let model = scalar_model(f, 1.0, 0.0, 1.0);
        let theta = ball1(rho);
        let times = [0.0, 0.5, 1.0, 2.0, 4.0];
        let tube = build_tube(&model, &theta, &times).unwrap();
        let u = DVector::from_vec(vec![2.0]);
        let expected_inf = rho * 2.0 / f.abs();
        let got = tube.support_at_inf(&u).unwrap();
        assert!(
            (got - expected_inf).abs() < 1e-8,
            "σ_Ξ∞ = {got}, expected {expected_inf}"
        );
        // finite horizon: ρ|u|(1 - e^{ft})/|f|
        let profile = tube.support_profile(&u).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let expected = rho * 2.0 * (1.0 - (f * t).exp()) / f.abs();
            assert!(
                (profile[i] - expected).abs() < 1e-8,
                "σ_Ξ({t}) = {}, expected {expected}",
                profile[i]
            );
        }
        // t = 0 → empty integral
        assert_eq!(profile[0], 0.0);
    }

    #[test]
    fn tube_support_monotone_and_nonnegative() {
        let model = PlantModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, -0.5]),
        )
        .unwrap();
        let theta = ball1(0.2);
        let times: Vec<f64> = (0..=20).map(|k| 0.4 * k as f64).collect();
        let tube = build_tube(&model, &theta, &times).unwrap();
        for u in unit_directions(2, 64) {
            let profile = tube.support_profile(&u).unwrap();
            let full = tube.support_at_inf(&u).unwrap();
            let mut prev = -1e-15;
            for &v in &profile {
                assert!(v >= -1e-12, "support must be nonnegative, got {v}");
                assert!(v >= prev - 1e-10, "support must be nondecreasing");
                prev = v;
            }
            assert!(full >= prev - 1e-10);
        }
    }

    #[test]
    fn unaligned_support_at_interpolates_consistently() {
        let model = scalar_model(-0.8, 1.0, 0.0, 1.0);
        let theta = ball1(0.25);
        let tube = build_tube(&model, &theta, &[1.0, 2.0]).unwrap();
        let u = DVector::from_vec(vec![1.0]);
        let t = 1.37;
        let expected = 0.25 * (1.0 - (-0.8_f64 * t).exp()) / 0.8;
        assert!((tube.support_at(t, &u).unwrap() - expected).abs() < 1e-8);
    }

    #[test]
    fn output_tube_diameter_closed_form() {
        // d = diam(CΞ∞ + Θ) for the scalar case: 2(ρ|c|/|f| + ρ_Θ)...
        // with C = 1, E = 1, F = f = a + 1·1 → pick a = -1.8 so f = -0.8
        let rho = 0.25;
        let model = scalar_model(-1.8, 1.0, 1.0, 1.0);
        assert!((model.f()[(0, 0)] + 0.8).abs() < 1e-12);
        let theta = ball1(rho);
        let tube = build_tube(&model, &theta, &[1.0]).unwrap();
        let expected = 2.0 * (rho / 0.8 + rho);
        assert!(
            (tube.output_tube_diameter() - expected).abs() < 1e-7,
            "d = {}, expected {expected}",
            tube.output_tube_diameter()
        );
        // dual route: the same set through SupportFn composition
        let tube_arc = Arc::new(build_tube(&model, &theta, &[1.0]).unwrap());
        let sigma = SupportFn::linear_image(
            model.c().clone(),
            TubeCrossSection::infinity_support_fn(tube_arc),
        )
        .minkowski_sum(&theta.support_fn());
        assert!((diameter(&sigma) - expected).abs() < 1e-7);
    }

    #[test]
    fn tube_check_degenerate_equality() {
        // E = 0 → x ≡ ξ and the margin is exactly zero at every sample
        let model = scalar_model(-1.0, 1.0, 1.0, 0.0);
        let theta = ball1(0.3);
        let times: Vec<f64> = (0..=10).map(|k| 0.3 * k as f64).collect();
        let tube = build_tube(&model, &theta, &times).unwrap();
        let w = PeriodicInput::zero(1.0, 1).unwrap();
        let x0 = DVector::from_vec(vec![0.7]);
        let xs = linearized_response(&model, &w, &x0, &times).unwrap();
        let report = tube_check(&tube, &xs, &xs, &unit_directions(1, 2), 1e-9).unwrap();
        assert_eq!(report.violation_count, 0);
        assert!(report.max_violation.abs() < 1e-12);
    }

    #[test]
    fn deviation_decay_scalar_closed_form() {
        // gap(t) = (ρ/|f|)e^{ft}: exact slope f
        let f = -0.8;
        let model = scalar_model(f, 1.0, 0.0, 1.0);
        let theta = ball1(0.25);
        let times: Vec<f64> = (1..=12).map(|k| 0.5 * k as f64).collect();
        let decay = deviation_decay(&model, &theta, &times).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let expected = 0.25 / f.abs() * (f * t).exp();
            assert!((decay.gaps[i] - expected).abs() < 1e-8);
        }
        assert!((decay.fitted_slope - f).abs() < 1e-3);
    }

    #[test]
    fn deviation_decay_zero_coupling() {
        let model = scalar_model(-1.0, 1.0, 1.0, 0.0);
        let theta = ball1(0.3);
        let decay = deviation_decay(&model, &theta, &[0.5, 1.0, 1.5]).unwrap();
        assert!(decay.gaps.iter().all(|&g| g == 0.0));
        assert_eq!(decay.fitted_slope, f64::NEG_INFINITY);
    }

    fn membership_fixture() -> (PlantModel, ConvexCompact, PeriodicInput) {
        let model = PlantModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, -0.5]),
        )
        .unwrap();
        let theta = ball1(0.2);
        let period = 2.0 * std::f64::consts::PI;
        let input = PeriodicInput::new(
            period,
            DVector::zeros(1),
            vec![(DVector::zeros(1), DVector::from_vec(vec![0.05]))],
        )
        .unwrap();
        (model, theta, input)
    }

    #[test]
    fn membership_short_horizon_reduces_to_initial_set() {
        // tiny T: the condition collapses to z0 ∈ Cx(0) + Θ
        let (model, theta, input) = membership_fixture();
        let x0 = DVector::from_vec(vec![0.3, 0.0]);
        let inside = DVector::from_vec(vec![0.3]);
        let outside = DVector::from_vec(vec![0.8]);
        let m_in =
            stationary_membership(&model, &theta, &input, &x0, &inside, 1e-6, 16).unwrap();
        let m_out =
            stationary_membership(&model, &theta, &input, &x0, &outside, 1e-6, 16).unwrap();
        assert!(m_in.stationary);
        assert!(!m_out.stationary);
        assert!((m_in.margin - 0.2).abs() < 1e-6);
    }

    #[test]
    fn membership_nesting_in_horizon() {
        let (model, theta, input) = membership_fixture();
        let x0 = DVector::from_vec(vec![0.1, 0.0]);
        let z0 = DVector::from_vec(vec![0.12]);
        let long = stationary_membership(&model, &theta, &input, &x0, &z0, 6.0, 256).unwrap();
        if long.stationary {
            for horizon in [0.5, 1.5, 3.0] {
                let short =
                    stationary_membership(&model, &theta, &input, &x0, &z0, horizon, 256)
                        .unwrap();
                assert!(short.stationary, "nesting broken at T = {horizon}");
                assert!(short.margin >= long.margin - 1e-9);
            }
        }
    }

    #[test]
    fn membership_e_zero_interval_oracle() {
        // E = 0, p = 1: ℜ(T) = [max y* - r, min y* + r], directly checkable
        let model = scalar_model(-1.0, 1.0, 1.0, 0.0);
        let theta = ball1(0.2);
        let period = 2.0;
        let input = PeriodicInput::new(
            period,
            DVector::zeros(1),
            vec![(DVector::from_vec(vec![0.1]), DVector::zeros(1))],
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![0.0]);
        let steps = 512;
        let grid: Vec<f64> = (0..=steps).map(|k| period * k as f64 / steps as f64).collect();
        let ys: Vec<f64> = forced_response(&model, &input, &x0, &grid)
            .unwrap()
            .iter()
            .map(|x| x[0])
            .collect();
        let lo = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 0.2;
        let hi = ys.iter().copied().fold(f64::INFINITY, f64::min) + 0.2;
        assert!(lo < hi, "interval oracle should be nonempty here");
        for z in [lo + 1e-3, 0.5 * (lo + hi), hi - 1e-3] {
            let m = stationary_membership(
                &model,
                &theta,
                &input,
                &x0,
                &DVector::from_vec(vec![z]),
                period,
                256,
            )
            .unwrap();
            assert!(m.stationary, "z0 = {z} should be stationary");
        }
        for z in [lo - 1e-2, hi + 1e-2] {
            let m = stationary_membership(
                &model,
                &theta,
                &input,
                &x0,
                &DVector::from_vec(vec![z]),
                period,
                256,
            )
            .unwrap();
            assert!(!m.stationary, "z0 = {z} should not be stationary");
        }
    }

    #[test]
    fn emptiness_finds_equilibrium_witness() {
        // w ≡ 0, A Hurwitz: starting at the balanced equilibrium the
        // backlash never moves, so ℜ(T) is nonempty
        let (model, theta, _) = membership_fixture();
        let input = PeriodicInput::zero(2.0, 1).unwrap();
        let x0 = DVector::from_vec(vec![0.05, 0.0]);
        let problem =
            StationaryProblem::new(&model, &theta, &input, &x0, 2.0, 256).unwrap();
        match stationary_emptiness(&problem, 8, 7, 1e-6).unwrap() {
            EmptinessVerdict::NonEmpty { witness, value } => {
                assert!(value <= 1e-9);
                let m = problem.membership(&witness).unwrap();
                assert!(m.stationary || m.margin > -1e-8);
            }
            EmptinessVerdict::NumericallyEmpty { best_value, .. } => {
                panic!("expected a witness, best objective {best_value:.3e}")
            }
        }
    }

    #[test]
    fn emptiness_detects_large_amplitude() {
        // large forcing: the backlash must move, ℜ(T) numerically empty
        let (model, theta, _) = membership_fixture();
        let period = 2.0 * std::f64::consts::PI;
        let input = PeriodicInput::new(
            period,
            DVector::zeros(1),
            vec![(DVector::zeros(1), DVector::from_vec(vec![20.0]))],
        )
        .unwrap();
        let x0 = DVector::zeros(2);
        let problem =
            StationaryProblem::new(&model, &theta, &input, &x0, period, 256).unwrap();
        match stationary_emptiness(&problem, 12, 11, 1e-6).unwrap() {
            EmptinessVerdict::NumericallyEmpty { confident, best_value, .. } => {
                assert!(confident, "best objective {best_value:.3e}");
            }
            EmptinessVerdict::NonEmpty { value, .. } => {
                panic!("expected emptiness, found witness with value {value:.3e}")
            }
        }
    }

    #[test]
    fn emptiness_interval_oracle_one_dimensional() {
        // E = 0, p = 1: emptiness ⟺ osc(y*) > 2r exactly
        let model = scalar_model(-1.0, 1.0, 1.0, 0.0);
        let theta = ball1(0.2);
        let period = 2.0;
        for (amp, should_be_empty) in [(0.05, false), (2.0, true)] {
            let input = PeriodicInput::new(
                period,
                DVector::zeros(1),
                vec![(DVector::from_vec(vec![amp]), DVector::zeros(1))],
            )
            .unwrap();
            let x0 = DVector::from_vec(vec![0.0]);
            let problem =
                StationaryProblem::new(&model, &theta, &input, &x0, period, 512).unwrap();
            let verdict = stationary_emptiness(&problem, 8, 3, 1e-6).unwrap();
            match (should_be_empty, verdict) {
                (true, EmptinessVerdict::NumericallyEmpty { .. }) => {}
                (false, EmptinessVerdict::NonEmpty { .. }) => {}
                (expected, got) => panic!("amp {amp}: expected empty={expected}, got {got:?}"),
            }
        }
    }
}
