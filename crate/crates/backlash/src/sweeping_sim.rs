//! Catching-up simulation of the closed loop: per step the plant integrates
//! with the backlash output frozen (classical 4th-order step), then the
//! backlash output is pulled back by metric projection onto the translated
//! set y + Θ. First order in the sweeping variable; the inner plant step
//! keeps the linear part's error negligible against the projection error.

use nalgebra::{DMatrix, DVector};

use crate::convex_sets::ConvexCompact;
use crate::error::{Error, Result};
use crate::linear_subsystem::{PeriodicInput, PlantModel};

/// Simulation window and initial data. The step is T/steps_per_period so
/// period boundaries land exactly on grid points.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub steps_per_period: usize,
    pub periods: usize,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
    /// Repair an inadmissible z0 by projecting onto y(0) + Θ instead of
    /// rejecting it.
    pub project_z0: bool,
}

impl SimConfig {
    pub fn new(steps_per_period: usize, periods: usize, x0: DVector<f64>, z0: DVector<f64>) -> Self {
        SimConfig {
            steps_per_period,
            periods,
            x0,
            z0,
            project_z0: true,
        }
    }

    pub fn step_size(&self, period: f64) -> f64 {
        period / self.steps_per_period as f64
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_period * self.periods
    }
}

/// Closed-loop sample path on a uniform grid, with the discrete increment
/// norms and the online invariant bookkeeping.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    x: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
    q: Vec<DVector<f64>>,
    /// |z_k - z_{k-1}|, with a leading zero so indices align with `times`.
    dz_norms: Vec<f64>,
    /// |y_k - y_{k-1}|, same alignment.
    dy_norms: Vec<f64>,
    steps_per_period: usize,
    max_membership_distance: f64,
    max_nonexpansive_violation: f64,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn z(&self) -> &[DVector<f64>] {
        &self.z
    }

    pub fn q(&self) -> &[DVector<f64>] {
        &self.q
    }

    pub fn dz_norms(&self) -> &[f64] {
        &self.dz_norms
    }

    pub fn dy_norms(&self) -> &[f64] {
        &self.dy_norms
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    /// max_k ρ(q_k, Θ) observed during the run.
    pub fn max_membership_distance(&self) -> f64 {
        self.max_membership_distance
    }

    /// max_k (|Δz_k| - |Δy_k|), the worst violation of the discrete
    /// nonexpansiveness |ż| ≤ |ẏ|.
    pub fn max_nonexpansive_violation(&self) -> f64 {
        self.max_nonexpansive_violation
    }

    /// Σ|Δz| over each whole period window.
    pub fn path_length_per_period(&self) -> Vec<f64> {
        self.dz_norms[1..]
            .chunks(self.steps_per_period)
            .map(|w| w.iter().sum())
            .collect()
    }

    pub fn total_path_length(&self) -> f64 {
        self.dz_norms.iter().sum()
    }
}

fn plant_rhs(
    model: &PlantModel,
    input: &PeriodicInput,
    t: f64,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> DVector<f64> {
    model.a() * x + model.b() * input.eval(t) + model.e() * z
}

/// One catching-up step: RK4 on ẋ = Ax + Bw + Ez with z frozen, then
/// z ← y⁺ + P_Θ(z - y⁺).
pub fn step(
    model: &PlantModel,
    theta: &ConvexCompact,
    input: &PeriodicInput,
    x: &DVector<f64>,
    z: &DVector<f64>,
    t: f64,
    h: f64,
    boundary_tol: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let q = z - model.c() * x;
    let gap = theta.distance(&q)?;
    if gap > 10.0 * boundary_tol {
        return Err(Error::Numerical(format!(
            "catching-up integrity lost at t = {t:.6}: ρ(q, Θ) = {gap:.3e} \
             (> 10×{boundary_tol:.3e}); the step size is probably too large"
        )));
    }
    let k1 = plant_rhs(model, input, t, x, z);
    let k2 = plant_rhs(model, input, t + 0.5 * h, &(x + &k1 * (0.5 * h)), z);
    let k3 = plant_rhs(model, input, t + 0.5 * h, &(x + &k2 * (0.5 * h)), z);
    let k4 = plant_rhs(model, input, t + h, &(x + &k3 * h), z);
    let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let y_next = model.c() * &x_next;
    let z_next = &y_next + theta.project(&(z - &y_next))?;
    Ok((x_next, z_next))
}

fn check_dims(
    model: &PlantModel,
    theta: &ConvexCompact,
    input: &PeriodicInput,
    cfg: &SimConfig,
) -> Result<()> {
    if theta.dim() != model.output_dim() {
        return Err(Error::Domain(format!(
            "backlash set dimension {} does not match output dimension {}",
            theta.dim(),
            model.output_dim()
        )));
    }
    if input.dim() != model.input_dim() {
        return Err(Error::Domain(format!(
            "input dimension {} does not match B columns {}",
            input.dim(),
            model.input_dim()
        )));
    }
    if cfg.x0.len() != model.state_dim() || cfg.z0.len() != model.output_dim() {
        return Err(Error::Domain(
            "initial condition dimensions do not match the model".into(),
        ));
    }
    if cfg.steps_per_period == 0 || cfg.periods == 0 {
        return Err(Error::Domain("empty simulation window".into()));
    }
    Ok(())
}

/// Admissible z(0): inside y(0) + Θ, with optional projection repair.
fn admissible_z0(
    model: &PlantModel,
    theta: &ConvexCompact,
    cfg: &SimConfig,
    boundary_tol: f64,
) -> Result<DVector<f64>> {
    let y0 = model.c() * &cfg.x0;
    let q0 = &cfg.z0 - &y0;
    let gap = theta.distance(&q0)?;
    if gap <= boundary_tol {
        Ok(cfg.z0.clone())
    } else if cfg.project_z0 {
        Ok(&y0 + theta.project(&q0)?)
    } else {
        Err(Error::Domain(format!(
            "z(0) is not admissible: ρ(z(0) - y(0), Θ) = {gap:.3e}; \
             enable z0 projection or move z(0) into y(0) + Θ"
        )))
    }
}

/// Full catching-up run with the membership and nonexpansiveness invariants
/// tracked online.
pub fn simulate(
    model: &PlantModel,
    theta: &ConvexCompact,
    input: &PeriodicInput,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    check_dims(model, theta, input, cfg)?;
    let boundary_tol = theta.default_boundary_tol();
    let h = cfg.step_size(input.period());
    let total = cfg.total_steps();

    let mut x = cfg.x0.clone();
    let mut z = admissible_z0(model, theta, cfg, boundary_tol)?;

    let mut traj = Trajectory {
        times: Vec::with_capacity(total + 1),
        x: Vec::with_capacity(total + 1),
        y: Vec::with_capacity(total + 1),
        z: Vec::with_capacity(total + 1),
        q: Vec::with_capacity(total + 1),
        dz_norms: Vec::with_capacity(total + 1),
        dy_norms: Vec::with_capacity(total + 1),
        steps_per_period: cfg.steps_per_period,
        max_membership_distance: 0.0,
        max_nonexpansive_violation: f64::NEG_INFINITY,
    };

    let record = |traj: &mut Trajectory, t: f64, x: &DVector<f64>, z: &DVector<f64>, dz: f64, dy: f64| -> Result<()> {
        let y = model.c() * x;
        let q = z - &y;
        let gap = theta.distance(&q)?;
        if gap > traj.max_membership_distance {
            traj.max_membership_distance = gap;
        }
        traj.times.push(t);
        traj.x.push(x.clone());
        traj.y.push(y);
        traj.z.push(z.clone());
        traj.q.push(q);
        traj.dz_norms.push(dz);
        traj.dy_norms.push(dy);
        Ok(())
    };

    record(&mut traj, 0.0, &x, &z, 0.0, 0.0)?;
    for k in 0..total {
        let t = k as f64 * h;
        let (x_next, z_next) = step(model, theta, input, &x, &z, t, h, boundary_tol)?;
        let dz = (&z_next - &z).norm();
        let dy = (model.c() * &x_next - model.c() * &x).norm();
        let violation = dz - dy;
        if violation > traj.max_nonexpansive_violation {
            traj.max_nonexpansive_violation = violation;
        }
        if violation > 1e-8 {
            return Err(Error::Numerical(format!(
                "discrete nonexpansiveness broken at step {k}: |Δz| - |Δy| = {violation:.3e}"
            )));
        }
        x = x_next;
        z = z_next;
        record(&mut traj, (k + 1) as f64 * h, &x, &z, dz, dy)?;
    }
    Ok(traj)
}

/// Two synchronized trajectories under the identical input, with the
/// deviation Lyapunov data V(t_k) = ‖X‖²_Π + |Q|² and the per-step
/// dissipation ledger γ_k = (|Δz₁| + |Δz₂|)/(2Rh).
#[derive(Clone, Debug)]
pub struct PairRun {
    pub first: Trajectory,
    pub second: Trajectory,
    /// V at every grid point (aligned with `first.times()`).
    pub v: Vec<f64>,
    /// γ_k per step (length = total steps).
    pub gamma: Vec<f64>,
    /// max over steps of Q_{k+1}ᵀΔZ_k + γ_k h |Q_{k+1}|², the discrete
    /// strong-convexity dissipation residual (should be ≤ rounding).
    pub qz_violation_max: f64,
    pub h: f64,
}

impl PairRun {
    /// Deviation state X = x₁ - x₂ at a grid index.
    pub fn deviation_x(&self, k: usize) -> DVector<f64> {
        &self.first.x[k] - &self.second.x[k]
    }

    /// Deviation backlash gap Q = q₁ - q₂ at a grid index.
    pub fn deviation_q(&self, k: usize) -> DVector<f64> {
        &self.first.q[k] - &self.second.q[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.first.times
    }
}

pub fn pair_simulate(
    model: &PlantModel,
    theta: &ConvexCompact,
    input: &PeriodicInput,
    cfg1: &SimConfig,
    cfg2: &SimConfig,
    pi: &DMatrix<f64>,
) -> Result<PairRun> {
    check_dims(model, theta, input, cfg1)?;
    check_dims(model, theta, input, cfg2)?;
    if cfg1.steps_per_period != cfg2.steps_per_period || cfg1.periods != cfg2.periods {
        return Err(Error::Domain(
            "paired runs must share the simulation grid".into(),
        ));
    }
    let n = model.state_dim();
    if pi.nrows() != n || pi.ncols() != n {
        return Err(Error::Domain(format!(
            "Π must be {n}x{n} to weigh the deviation state"
        )));
    }
    let r = theta.strong_convexity_constant();
    if !r.is_finite() {
        return Err(Error::Domain(
            "pair_simulate needs a finite strong convexity constant".into(),
        ));
    }

    // run both copies in lockstep so the ledger sees both increments per step
    let boundary_tol = theta.default_boundary_tol();
    let h = cfg1.step_size(input.period());
    let total = cfg1.total_steps();

    let lyap = |x1: &DVector<f64>, x2: &DVector<f64>, q1: &DVector<f64>, q2: &DVector<f64>| {
        let xd = x1 - x2;
        let qd = q1 - q2;
        (pi * &xd).dot(&xd) + qd.norm_squared()
    };

    let mut run1 = simulate_streaming_init(model, theta, cfg1, boundary_tol)?;
    let mut run2 = simulate_streaming_init(model, theta, cfg2, boundary_tol)?;
    let mut v = Vec::with_capacity(total + 1);
    let mut gamma = Vec::with_capacity(total);
    let mut qz_violation_max = f64::NEG_INFINITY;

    v.push(lyap(&run1.x, &run2.x, &run1.q(model), &run2.q(model)));
    let mut traj1 = trajectory_shell(model, theta, cfg1, &run1)?;
    let mut traj2 = trajectory_shell(model, theta, cfg2, &run2)?;

    for k in 0..total {
        let t = k as f64 * h;
        let z_prev_1 = run1.z.clone();
        let z_prev_2 = run2.z.clone();

        run1.advance(model, theta, input, t, h, boundary_tol)?;
        run2.advance(model, theta, input, t, h, boundary_tol)?;

        let dz1 = (&run1.z - &z_prev_1).norm();
        let dz2 = (&run2.z - &z_prev_2).norm();
        let g = (dz1 + dz2) / (2.0 * r * h);
        gamma.push(g);

        let q1 = run1.q(model);
        let q2 = run2.q(model);
        let q_next = &q1 - &q2;
        let dzz = (&run1.z - &z_prev_1) - (&run2.z - &z_prev_2);
        let resid = q_next.dot(&dzz) + g * h * q_next.norm_squared();
        if resid > qz_violation_max {
            qz_violation_max = resid;
        }

        v.push(lyap(&run1.x, &run2.x, &q1, &q2));
        push_sample(&mut traj1, model, theta, (k + 1) as f64 * h, &run1, dz1)?;
        push_sample(&mut traj2, model, theta, (k + 1) as f64 * h, &run2, dz2)?;
    }

    Ok(PairRun {
        first: traj1,
        second: traj2,
        v,
        gamma,
        qz_violation_max,
        h,
    })
}

/// Minimal mutable state for one streaming copy inside pair_simulate.
struct StreamState {
    x: DVector<f64>,
    z: DVector<f64>,
    y_prev: DVector<f64>,
}

impl StreamState {
    fn q(&self, model: &PlantModel) -> DVector<f64> {
        &self.z - model.c() * &self.x
    }

    fn advance(
        &mut self,
        model: &PlantModel,
        theta: &ConvexCompact,
        input: &PeriodicInput,
        t: f64,
        h: f64,
        boundary_tol: f64,
    ) -> Result<()> {
        let (x_next, z_next) = step(model, theta, input, &self.x, &self.z, t, h, boundary_tol)?;
        self.y_prev = model.c() * &self.x;
        self.x = x_next;
        self.z = z_next;
        Ok(())
    }
}

fn simulate_streaming_init(
    model: &PlantModel,
    theta: &ConvexCompact,
    cfg: &SimConfig,
    boundary_tol: f64,
) -> Result<StreamState> {
    let z = admissible_z0(model, theta, cfg, boundary_tol)?;
    Ok(StreamState {
        x: cfg.x0.clone(),
        y_prev: model.c() * &cfg.x0,
        z,
    })
}

fn trajectory_shell(
    model: &PlantModel,
    theta: &ConvexCompact,
    cfg: &SimConfig,
    state: &StreamState,
) -> Result<Trajectory> {
    let y = model.c() * &state.x;
    let q = &state.z - &y;
    let gap = theta.distance(&q)?;
    Ok(Trajectory {
        times: vec![0.0],
        x: vec![state.x.clone()],
        y: vec![y],
        z: vec![state.z.clone()],
        q: vec![q],
        dz_norms: vec![0.0],
        dy_norms: vec![0.0],
        steps_per_period: cfg.steps_per_period,
        max_membership_distance: gap,
        max_nonexpansive_violation: f64::NEG_INFINITY,
    })
}

fn push_sample(
    traj: &mut Trajectory,
    model: &PlantModel,
    theta: &ConvexCompact,
    t: f64,
    state: &StreamState,
    dz: f64,
) -> Result<()> {
    let y = model.c() * &state.x;
    let q = &state.z - &y;
    let gap = theta.distance(&q)?;
    if gap > traj.max_membership_distance {
        traj.max_membership_distance = gap;
    }
    let dy = (&y - &state.y_prev).norm();
    let violation = dz - dy;
    if violation > traj.max_nonexpansive_violation {
        traj.max_nonexpansive_violation = violation;
    }
    traj.times.push(t);
    traj.x.push(state.x.clone());
    traj.y.push(y);
    traj.z.push(state.z.clone());
    traj.q.push(q);
    traj.dz_norms.push(dz);
    traj.dy_norms.push(dy);
    Ok(())
}
