//! The linearized loop: plant matrices, trigonometric periodic inputs,
//! stepwise-exact forced responses, the unique periodic solution and its
//! output, and the Φ(t) nonsingularity scan used by the stationarity
//! queries.

use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix_core::{expm, psi_matrix, spectral_abscissa};
use crate::quadrature::{GL3_NODES, GL3_WEIGHTS};

/// Plant matrices ẋ = Ax + Bw + Ez, y = Cx, with the derived closed-loop
/// matrix F = A + EC and its spectral abscissa μ cached.
#[derive(Clone, Debug)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    e: DMatrix<f64>,
    f: DMatrix<f64>,
    mu: f64,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        e: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Domain(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Domain(format!(
                "B must have {} rows, got {}",
                n,
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::Domain(format!(
                "C must have {} columns, got {}",
                n,
                c.ncols()
            )));
        }
        let p = c.nrows();
        if e.nrows() != n || e.ncols() != p {
            return Err(Error::Domain(format!(
                "E must be {}x{}, got {}x{}",
                n,
                p,
                e.nrows(),
                e.ncols()
            )));
        }
        let f = &a + &e * &c;
        let mu = spectral_abscissa(&f)?.mu;
        Ok(PlantModel { a, b, c, e, f, mu })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    /// F = A + EC, the dynamics matrix of the linearized loop.
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// Spectral abscissa of F.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn is_hurwitz(&self) -> bool {
        self.mu < 0.0
    }

    pub fn require_hurwitz(&self) -> Result<()> {
        if self.is_hurwitz() {
            Ok(())
        } else {
            Err(Error::Hypothesis(format!(
                "F = A + EC must be Hurwitz (spectral abscissa {:.6e} >= 0)",
                self.mu
            )))
        }
    }
}

/// T-periodic input as a finite trigonometric series
/// w(t) = a₀ + Σ_k (aₖ cos(2πkt/T) + bₖ sin(2πkt/T)), coefficients in ℝ^m.
/// Periodicity is exact by construction and so is the derivative.
#[derive(Clone, Debug)]
pub struct PeriodicInput {
    period: f64,
    mean: DVector<f64>,
    harmonics: Vec<(DVector<f64>, DVector<f64>)>,
}

impl PeriodicInput {
    pub fn new(
        period: f64,
        mean: DVector<f64>,
        harmonics: Vec<(DVector<f64>, DVector<f64>)>,
    ) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Domain(format!(
                "input period must be positive, got {period}"
            )));
        }
        let m = mean.len();
        for (k, (a, b)) in harmonics.iter().enumerate() {
            if a.len() != m || b.len() != m {
                return Err(Error::Domain(format!(
                    "harmonic {} has coefficient dimensions {}/{}, expected {}",
                    k + 1,
                    a.len(),
                    b.len(),
                    m
                )));
            }
        }
        Ok(PeriodicInput {
            period,
            mean,
            harmonics,
        })
    }

    pub fn constant(period: f64, value: DVector<f64>) -> Result<Self> {
        PeriodicInput::new(period, value, Vec::new())
    }

    pub fn zero(period: f64, m: usize) -> Result<Self> {
        PeriodicInput::constant(period, DVector::zeros(m))
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut w = self.mean.clone();
        let base = 2.0 * std::f64::consts::PI / self.period;
        for (k, (a, b)) in self.harmonics.iter().enumerate() {
            let arg = base * (k + 1) as f64 * t;
            w += a * arg.cos() + b * arg.sin();
        }
        w
    }

    pub fn derivative(&self, t: f64) -> DVector<f64> {
        let mut w = DVector::zeros(self.mean.len());
        let base = 2.0 * std::f64::consts::PI / self.period;
        for (k, (a, b)) in self.harmonics.iter().enumerate() {
            let omega = base * (k + 1) as f64;
            let arg = omega * t;
            w += (b * arg.cos() - a * arg.sin()) * omega;
        }
        w
    }

    /// ‖w‖_∞ by a dense grid over one period.
    pub fn sup_norm(&self, samples: usize) -> f64 {
        (0..samples.max(1))
            .map(|k| self.eval(self.period * k as f64 / samples.max(1) as f64).norm())
            .fold(0.0_f64, f64::max)
    }
}

/// Propagation cache for one step size: e^{hA} and the Gauss-Legendre node
/// propagators e^{(h-sⱼ)A}B with half-step weights folded in.
struct StepKernel {
    exp_h: DMatrix<f64>,
    node_times: [f64; 3],
    node_mats: Vec<DMatrix<f64>>,
    half_weights: [f64; 3],
}

fn build_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> Result<StepKernel> {
    let exp_h = expm(a, h)?;
    let mut node_times = [0.0; 3];
    let mut node_mats = Vec::with_capacity(3);
    let mut half_weights = [0.0; 3];
    for j in 0..3 {
        let s = 0.5 * h * (GL3_NODES[j] + 1.0);
        node_times[j] = s;
        node_mats.push(expm(a, h - s)? * b);
        half_weights[j] = 0.5 * h * GL3_WEIGHTS[j];
    }
    Ok(StepKernel {
        exp_h,
        node_times,
        node_mats,
        half_weights,
    })
}

/// Stepwise-exact propagation of ẋ = Ax + Bw(t) from x(0) = x0, sampled on
/// the ascending `grid` (t = 0 is prepended internally when grid[0] > 0).
/// Per step the homogeneous part is the exact exponential and the input
/// convolution is an order-6 Gauss-Legendre quadrature.
pub fn propagate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    input: &PeriodicInput,
    x0: &DVector<f64>,
    grid: &[f64],
) -> Result<Vec<DVector<f64>>> {
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "propagation grid must be ascending and nonnegative".into(),
        ));
    }
    let mut kernels: HashMap<u64, StepKernel> = HashMap::new();
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    for &target in grid {
        let h = target - t;
        if h > 0.0 {
            let kernel = match kernels.get(&h.to_bits()) {
                Some(k) => k,
                None => {
                    let k = build_kernel(a, b, h)?;
                    kernels.entry(h.to_bits()).or_insert(k)
                }
            };
            let mut next = &kernel.exp_h * &x;
            for j in 0..3 {
                next += &kernel.node_mats[j]
                    * input.eval(t + kernel.node_times[j])
                    * kernel.half_weights[j];
            }
            x = next;
            t = target;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// x*(t) = e^{tA}x(0) + ∫₀ᵗ e^{(t-s)A}Bw(s) ds — the plant response with the
/// feedback removed.
pub fn forced_response(
    model: &PlantModel,
    input: &PeriodicInput,
    x0: &DVector<f64>,
    grid: &[f64],
) -> Result<Vec<DVector<f64>>> {
    propagate(model.a(), model.b(), input, x0, grid)
}

/// ξ(t): the response of the linearized loop ξ̇ = Fξ + Bw from ξ(0) = x0.
pub fn linearized_response(
    model: &PlantModel,
    input: &PeriodicInput,
    x0: &DVector<f64>,
    grid: &[f64],
) -> Result<Vec<DVector<f64>>> {
    propagate(model.f(), model.b(), input, x0, grid)
}

/// ξ_T(0) = (I - e^{TF})⁻¹ ∫₀ᵀ e^{(T-s)F} Bw(s) ds.
pub fn periodic_initial_state(
    model: &PlantModel,
    input: &PeriodicInput,
    steps_per_period: usize,
) -> Result<DVector<f64>> {
    model.require_hurwitz()?;
    let n = model.state_dim();
    let t_end = input.period();
    let grid: Vec<f64> = (1..=steps_per_period)
        .map(|k| t_end * k as f64 / steps_per_period as f64)
        .collect();
    let reached = propagate(model.f(), model.b(), input, &DVector::zeros(n), &grid)?
        .pop()
        .expect("nonempty grid");
    let lhs = DMatrix::<f64>::identity(n, n) - expm(model.f(), t_end)?;
    lhs.lu().solve(&reached).ok_or_else(|| {
        Error::Hypothesis("I - e^{TF} is singular; F is not Hurwitz for this period".into())
    })
}

/// One period of the linearized loop's periodic solution with its output
/// data and the certificate inputs ℧ and ‖η̇_T‖_∞.
#[derive(Clone, Debug)]
pub struct PeriodicOrbit {
    times: Vec<f64>,
    xi: Vec<DVector<f64>>,
    eta: Vec<DVector<f64>>,
    eta_dot: Vec<DVector<f64>>,
    oscillation: f64,
    eta_dot_sup: f64,
    period: f64,
    periodicity_residual: f64,
}

impl PeriodicOrbit {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn xi(&self) -> &[DVector<f64>] {
        &self.xi
    }

    pub fn eta(&self) -> &[DVector<f64>] {
        &self.eta
    }

    pub fn eta_dot(&self) -> &[DVector<f64>] {
        &self.eta_dot
    }

    /// ℧ = Ω_{[0,T]}(η_T), the oscillation (image diameter) of the output.
    pub fn oscillation(&self) -> f64 {
        self.oscillation
    }

    pub fn eta_dot_sup(&self) -> f64 {
        self.eta_dot_sup
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn periodicity_residual(&self) -> f64 {
        self.periodicity_residual
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.xi[0]
    }
}

/// Max pairwise distance over samples. O(N²) on purpose: per-coordinate
/// bounding is wrong for p ≥ 2 and N stays ≤ a few thousand at desk scale.
/// p = 1 collapses to max - min.
fn image_diameter(samples: &[DVector<f64>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    if samples[0].len() == 1 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in samples {
            lo = lo.min(s[0]);
            hi = hi.max(s[0]);
        }
        return (hi - lo).max(0.0);
    }
    let mut best = 0.0_f64;
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let d = (&samples[i] - &samples[j]).norm();
            if d > best {
                best = d;
            }
        }
    }
    best
}

/// Sample the T-periodic solution ξ_T on a uniform grid of
/// `steps_per_period` steps, with η_T = Cξ_T and η̇_T = C(Fξ_T + Bw).
pub fn periodic_orbit(
    model: &PlantModel,
    input: &PeriodicInput,
    steps_per_period: usize,
) -> Result<PeriodicOrbit> {
    model.require_hurwitz()?;
    let t_end = input.period();
    let xi0 = periodic_initial_state(model, input, steps_per_period)?;
    let times: Vec<f64> = (0..=steps_per_period)
        .map(|k| t_end * k as f64 / steps_per_period as f64)
        .collect();
    let xi = propagate(model.f(), model.b(), input, &xi0, &times)?;

    let residual = (&xi[steps_per_period] - &xi0).norm();
    let allowance = 1e-8 * (1.0 + xi0.norm());
    if residual > allowance {
        return Err(Error::Numerical(format!(
            "periodic orbit does not close: |ξ_T(T) - ξ_T(0)| = {residual:.3e} > {allowance:.3e} \
             (increase steps_per_period)"
        )));
    }

    let eta: Vec<DVector<f64>> = xi.iter().map(|x| model.c() * x).collect();
    let eta_dot: Vec<DVector<f64>> = times
        .iter()
        .zip(xi.iter())
        .map(|(&t, x)| model.c() * (model.f() * x + model.b() * input.eval(t)))
        .collect();
    let oscillation = image_diameter(&eta);
    let eta_dot_sup = eta_dot.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);

    Ok(PeriodicOrbit {
        times,
        xi,
        eta,
        eta_dot,
        oscillation,
        eta_dot_sup,
        period: t_end,
        periodicity_residual: residual,
    })
}

/// Φ(t) = I_p - tCΨ(tA)E and its nonsingularity margin (smallest singular
/// value). Φ acts on the backlash output, so it is p×p.
pub fn phi_matrix(model: &PlantModel, t: f64) -> Result<(DMatrix<f64>, f64)> {
    if t < 0.0 {
        return Err(Error::Domain("phi_matrix: negative time".into()));
    }
    let p = model.output_dim();
    let psi = psi_matrix(model.a(), t)?;
    let phi = DMatrix::<f64>::identity(p, p) - (model.c() * psi * model.e()) * t;
    let margin = if p == 0 {
        1.0
    } else {
        phi.singular_values().min()
    };
    Ok((phi, margin))
}

/// Minimum nonsingularity margin of Φ over a uniform time grid on [0, T].
#[derive(Clone, Debug)]
pub struct PhiScan {
    pub min_margin: f64,
    pub argmin_time: f64,
}

pub fn phi_scan(model: &PlantModel, horizon: f64, steps: usize) -> Result<PhiScan> {
    let mut scan = PhiScan {
        min_margin: f64::INFINITY,
        argmin_time: 0.0,
    };
    for k in 0..=steps {
        let t = horizon * k as f64 / steps as f64;
        let (_, margin) = phi_matrix(model, t)?;
        if margin < scan.min_margin {
            scan.min_margin = margin;
            scan.argmin_time = t;
        }
    }
    Ok(scan)
}
