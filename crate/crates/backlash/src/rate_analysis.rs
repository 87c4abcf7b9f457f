//! Assembly of the convergence certificate: oscillation vs tube diameter,
//! path-length and velocity bounds for the backlash output, the ψ rate
//! function, the averaged exponent bound θ, and the comparison of θ with
//! exponents measured from paired simulations.

use nalgebra::{DMatrix, DVector};

use crate::convex_sets::ConvexCompact;
use crate::error::{Error, Result};
use crate::linear_subsystem::{PeriodicInput, PeriodicOrbit, PlantModel};
use crate::localization::{least_squares_slope, TubeCrossSection};
use crate::matrix_core::{lyapunov_certificate, symmetric_eigs, symmetrize};
use crate::sweeping_sim::PairRun;

/// ψ(γ) = √(β + ¼(α-λ+γ)²) - ½(α+λ+γ): the generalized-eigenvalue bound
/// on the dissipation form, nonincreasing and convex in γ with
/// ψ(γ) → -λ as γ → ∞.
pub fn psi(gamma: f64, lambda: f64, alpha: f64, beta: f64) -> f64 {
    debug_assert!(lambda > 0.0 && beta >= 0.0 && gamma >= 0.0);
    let half_diff = 0.5 * (alpha - lambda + gamma);
    (beta + half_diff * half_diff).sqrt() - 0.5 * (alpha + lambda + gamma)
}

/// Lower bounds on the asymptotic per-period path length of the backlash
/// output. Each is valid on its own; `best` is their maximum.
#[derive(Clone, Copy, Debug)]
pub struct PathBounds {
    /// (℧ - d)₊
    pub basic: f64,
    /// partition bound: max over grid partitions of Σ(|Δη_T| - d)₊
    pub partition: f64,
    /// ε-packing bound: sup over ε of (2ε - d)·N_ε
    pub packing: f64,
}

impl PathBounds {
    pub fn best(&self) -> f64 {
        self.basic.max(self.partition).max(self.packing)
    }
}

/// Dynamic program over the orbit samples: best[j] = max over i < j of
/// best[i] + (|η(t_j) - η(t_i)| - d)₊, with the endpoints pinned at 0 and T.
fn partition_bound(eta: &[DVector<f64>], d: f64) -> f64 {
    let n = eta.len();
    if n < 2 {
        return 0.0;
    }
    let mut best = vec![0.0_f64; n];
    for j in 1..n {
        let mut b = 0.0_f64;
        for i in 0..j {
            let gain = ((&eta[j] - &eta[i]).norm() - d).max(0.0);
            let candidate = best[i] + gain;
            if candidate > b {
                b = candidate;
            }
        }
        best[j] = b;
    }
    best[n - 1]
}

/// Greedy time-ordered ε-packing of the sampled curve. A packing of
/// cardinality 1 carries no pairwise constraint, so only N ≥ 2 yields a
/// usable bound (the periodic wrap closes the chain for N ≥ 2).
fn packing_bound(eta: &[DVector<f64>], d: f64, oscillation: f64) -> f64 {
    if eta.len() < 2 || oscillation <= d {
        return 0.0;
    }
    let mut bound = 0.0_f64;
    let eps_lo = 0.5 * d;
    let eps_hi = 0.5 * oscillation;
    let grid = 200;
    let mut centers: Vec<&DVector<f64>> = Vec::new();
    for g in 1..=grid {
        let eps = eps_lo + (eps_hi - eps_lo) * g as f64 / grid as f64;
        centers.clear();
        for point in eta {
            if centers.iter().all(|c| (*c - point).norm() >= 2.0 * eps) {
                centers.push(point);
            }
        }
        let n = centers.len();
        if n >= 2 {
            let candidate = (2.0 * eps - d) * n as f64;
            if candidate > bound {
                bound = candidate;
            }
        }
    }
    bound
}

/// All three path-length lower bounds from the orbit samples and the
/// output-tube diameter d.
pub fn path_length_bounds(orbit: &PeriodicOrbit, d: f64) -> PathBounds {
    let eta = orbit.eta();
    PathBounds {
        basic: (orbit.oscillation() - d).max(0.0),
        partition: partition_bound(eta, d),
        packing: packing_bound(eta, d, orbit.oscillation()),
    }
}

/// ‖η̇_T‖_∞ + D(C(FΞ∞ + EΘ), {0}): the asymptotic bound on |ż|.
pub fn velocity_bound(orbit: &PeriodicOrbit, tube: &TubeCrossSection) -> f64 {
    orbit.eta_dot_sup() + tube.velocity_deviation()
}

/// Everything the certificate proves, with the intermediates recorded.
#[derive(Clone, Debug)]
pub struct RateCertificate {
    pub lambda: f64,
    pub pi: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// strong convexity constant of Θ
    pub strong_convexity: f64,
    pub oscillation: f64,
    pub tube_diameter: f64,
    pub path_bounds: PathBounds,
    pub eta_dot_sup: f64,
    pub velocity_deviation: f64,
    pub velocity_bound: f64,
    pub gamma_1: f64,
    pub gamma_inf: f64,
    pub psi_zero: f64,
    pub psi_gamma_inf: f64,
    pub theta: f64,
    /// θ < 0: paired trajectories contract to the periodic regime
    pub contracting: bool,
    /// ψ(0) < 0 short-circuit (linear dissipation alone suffices)
    pub no_strong_convexity_needed: bool,
    pub mu: f64,
    pub period: f64,
}

/// θ from the ψ endpoints and the two γ bounds. γ∞ = 0 degenerates to
/// ψ(0) (no motion guarantee); ψ(0) < 0 short-circuits the same way since
/// the linear part already contracts.
pub(crate) fn assemble_theta(
    psi_zero: f64,
    psi_gamma_inf: f64,
    gamma_1: f64,
    gamma_inf: f64,
) -> (f64, bool) {
    if psi_zero < 0.0 {
        return (psi_zero, true);
    }
    if gamma_inf <= 0.0 {
        return (psi_zero, false);
    }
    let ratio = gamma_1 / gamma_inf;
    (psi_zero - ratio * (psi_zero - psi_gamma_inf), false)
}

/// Assemble the full certificate for a chosen rate λ ∈ (0, |μ|).
pub fn build_certificate(
    model: &PlantModel,
    theta_set: &ConvexCompact,
    input: &PeriodicInput,
    lambda: f64,
    tube: &TubeCrossSection,
    orbit: &PeriodicOrbit,
) -> Result<RateCertificate> {
    model.require_hurwitz()?;
    let mu = model.mu();
    if !(lambda > 0.0 && lambda < mu.abs()) {
        return Err(Error::Hypothesis(format!(
            "certificate rate must satisfy 0 < λ < |μ| = {:.6e}, got {lambda:.6e}",
            mu.abs()
        )));
    }
    let r = theta_set.strong_convexity_constant();
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::Domain(
            "certificate requires a finite positive strong convexity constant".into(),
        ));
    }

    let pi = lyapunov_certificate(model.f(), lambda)?;
    let h = (&pi * model.e() - model.f().transpose() * model.c().transpose()) * 0.5;
    let ce_sym = symmetrize(&(model.c() * model.e()));
    let alpha = symmetric_eigs(&ce_sym)?[0];
    let pinv_h = pi
        .clone()
        .lu()
        .solve(&h)
        .ok_or_else(|| Error::Numerical("Π solve failed while computing β".into()))?;
    let beta_mat = symmetrize(&(h.transpose() * pinv_h));
    let beta = symmetric_eigs(&beta_mat)?.last().copied().unwrap_or(0.0).max(0.0);

    let oscillation = orbit.oscillation();
    let d = tube.output_tube_diameter();
    let path_bounds = path_length_bounds(orbit, d);
    let eta_dot_sup = orbit.eta_dot_sup();
    let velocity_deviation = tube.velocity_deviation();
    let vel_bound = eta_dot_sup + velocity_deviation;

    let period = input.period();
    let gamma_1 = (oscillation - d).max(0.0) / (period * r);
    let gamma_inf = vel_bound / r;
    if gamma_1 > gamma_inf + 1e-9 * (1.0 + gamma_inf) {
        return Err(Error::Numerical(format!(
            "certificate inconsistency: γ₁ = {gamma_1:.6e} exceeds γ∞ = {gamma_inf:.6e}"
        )));
    }

    let psi_zero = psi(0.0, lambda, alpha, beta);
    let psi_gamma_inf = psi(gamma_inf.max(0.0), lambda, alpha, beta);
    let (theta, no_strong_convexity_needed) =
        assemble_theta(psi_zero, psi_gamma_inf, gamma_1, gamma_inf);

    // θ is a convex combination of the ψ endpoints; ψ never drops below -λ
    if theta < psi_gamma_inf - 1e-9 || theta > psi_zero + 1e-9 || psi_gamma_inf < -lambda - 1e-9 {
        return Err(Error::Numerical(
            "certificate inconsistency in the ψ range checks".into(),
        ));
    }

    Ok(RateCertificate {
        lambda,
        pi,
        alpha,
        beta,
        strong_convexity: r,
        oscillation,
        tube_diameter: d,
        path_bounds,
        eta_dot_sup,
        velocity_deviation,
        velocity_bound: vel_bound,
        gamma_1,
        gamma_inf,
        psi_zero,
        psi_gamma_inf,
        theta,
        contracting: theta < 0.0,
        no_strong_convexity_needed,
        mu,
        period,
    })
}

/// Coarse λ line search minimizing θ over fractions of |μ|. Returns the
/// best certificate and the (λ, θ) trace.
pub fn lambda_line_search(
    model: &PlantModel,
    theta_set: &ConvexCompact,
    input: &PeriodicInput,
    fractions: &[f64],
    tube: &TubeCrossSection,
    orbit: &PeriodicOrbit,
) -> Result<(RateCertificate, Vec<(f64, f64)>)> {
    model.require_hurwitz()?;
    let mu_abs = model.mu().abs();
    let mut best: Option<RateCertificate> = None;
    let mut trace = Vec::with_capacity(fractions.len());
    for &frac in fractions {
        let lambda = frac * mu_abs;
        if !(lambda > 0.0 && lambda < mu_abs) {
            continue;
        }
        let cert = build_certificate(model, theta_set, input, lambda, tube, orbit)?;
        trace.push((lambda, cert.theta));
        if best.as_ref().is_none_or(|b| cert.theta < b.theta) {
            best = Some(cert);
        }
    }
    best.map(|b| (b, trace))
        .ok_or_else(|| Error::Domain("λ line search had no admissible fraction".into()))
}

/// Comparison of the measured contraction against the certified θ, plus the
/// pathwise Gronwall and Jensen checks on the discrete ledger.
#[derive(Clone, Debug)]
pub struct ExponentReport {
    /// least-squares slope of ln √V over the fitting window
    pub fitted_slope: f64,
    pub theta: f64,
    /// slope is accepted up to θ + 0.05|θ| + 2h/T
    pub allowance: f64,
    pub within_bound: bool,
    /// max over k of ln√V(t_k) - ln√V(0) - Σ_{j<k} ψ(γ_j)h (≤ ln(1+10h))
    pub gronwall_max_excess: f64,
    pub gronwall_allowance: f64,
    pub gronwall_ok: bool,
    /// max violation of ψ(γ_k) ≤ ½(ψ(|ż₁|/R) + ψ(|ż₂|/R))
    pub jensen_max_violation: f64,
    /// V collapsed below 1e-280: contraction beyond measurement
    pub early_success: bool,
}

const V_FLOOR: f64 = 1e-280;

/// Fit the decay exponent of a paired run and check it and the discrete
/// Gronwall/Jensen inequalities against the certificate.
pub fn measure_exponent(pair: &PairRun, cert: &RateCertificate) -> Result<ExponentReport> {
    let times = pair.times();
    if times.len() < 3 {
        return Err(Error::Domain("paired run too short to fit".into()));
    }
    let h = pair.h;
    let period = cert.period;
    let total = *times.last().unwrap();
    let allowance = cert.theta + 0.05 * cert.theta.abs() + 2.0 * h / period;
    let gronwall_allowance = (1.0 + 10.0 * h).ln();

    let v0 = pair.v[0];
    if v0 == 0.0 {
        // identical initial conditions: V ≡ 0, trivially within any bound
        return Ok(ExponentReport {
            fitted_slope: f64::NEG_INFINITY,
            theta: cert.theta,
            allowance,
            within_bound: true,
            gronwall_max_excess: f64::NEG_INFINITY,
            gronwall_allowance,
            gronwall_ok: true,
            jensen_max_violation: 0.0,
            early_success: true,
        });
    }

    // Gronwall along the ledger, and the Jensen split of ψ(γ)
    let r = cert.strong_convexity;
    let half_log_v0 = 0.5 * v0.ln();
    let mut running = 0.0;
    let mut gronwall_max_excess = f64::NEG_INFINITY;
    let mut jensen_max_violation = f64::NEG_INFINITY;
    let mut early_success = false;
    for (k, &g) in pair.gamma.iter().enumerate() {
        running += psi(g, cert.lambda, cert.alpha, cert.beta) * h;
        let vk = pair.v[k + 1];
        if vk < V_FLOOR {
            early_success = true;
            break;
        }
        let excess = 0.5 * vk.ln() - half_log_v0 - running;
        if excess > gronwall_max_excess {
            gronwall_max_excess = excess;
        }
        let dz1 = pair.first.dz_norms()[k + 1];
        let dz2 = pair.second.dz_norms()[k + 1];
        let split = 0.5
            * (psi(dz1 / (h * r), cert.lambda, cert.alpha, cert.beta)
                + psi(dz2 / (h * r), cert.lambda, cert.alpha, cert.beta));
        let violation = psi(g, cert.lambda, cert.alpha, cert.beta) - split;
        if violation > jensen_max_violation {
            jensen_max_violation = violation;
        }
    }

    // slope over the last 60% of the horizon
    let cutoff = 0.4 * total;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(pair.v.iter())
        .filter(|(&t, &v)| t >= cutoff && v > V_FLOOR)
        .map(|(&t, &v)| (t, 0.5 * v.ln()))
        .collect();
    let fitted_slope = if pts.len() < 2 {
        early_success = true;
        f64::NEG_INFINITY
    } else {
        least_squares_slope(&pts)
    };

    Ok(ExponentReport {
        fitted_slope,
        theta: cert.theta,
        allowance,
        within_bound: early_success || fitted_slope <= allowance,
        gronwall_max_excess,
        gronwall_allowance,
        gronwall_ok: gronwall_max_excess <= gronwall_allowance + 1e-12,
        jensen_max_violation,
        early_success,
    })
}
