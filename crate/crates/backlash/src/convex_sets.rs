//! Convex compacts (balls and ellipsoids) with the geometric queries the
//! sweeping dynamics and the certificates need: support function, metric
//! projection, normal-cone projection, strong convexity constant, diameter
//! and deviation from the origin.
//!
//! The catalogue is restricted to balls and ellipsoids on purpose: both have
//! closed-form support functions, a computable metric projection (scalar
//! root-find on the KKT multiplier for the ellipsoid), a unique unit inward
//! normal at every boundary point, and a finite strong convexity constant.
//! Ball intersections — the general strongly convex class — have
//! non-singleton normal cones at corner points and are out of scope.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Cap and residual for the scalar KKT root-find used by the ellipsoid
/// projection and boundary-distance queries.
const ROOT_FIND_MAX_ITER: usize = 200;
const ROOT_FIND_RESIDUAL: f64 = 1e-13;

#[derive(Clone, Debug)]
pub struct Ball {
    center: DVector<f64>,
    radius: f64,
}

impl Ball {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Domain(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        if !center.iter().all(|x| x.is_finite()) {
            return Err(Error::Domain("ball center has non-finite entries".into()));
        }
        Ok(Ball { center, radius })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// {v : (v-c)ᵀ Σ⁻¹ (v-c) ≤ 1} with Σ symmetric positive definite.
/// The spectral decomposition Σ = V diag(λ) Vᵀ is cached at construction;
/// the semi-axes are √λᵢ along the columns of V.
#[derive(Clone, Debug)]
pub struct Ellipsoid {
    center: DVector<f64>,
    sigma: DMatrix<f64>,
    axes: DMatrix<f64>,
    lambdas: DVector<f64>,
    sigma_inv: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = center.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::Domain(format!(
                "ellipsoid shape matrix must be {p}x{p}, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let skew = (&sigma - sigma.transpose()).norm();
        if skew > 1e-10 * sigma.norm().max(1.0) {
            return Err(Error::Domain(
                "ellipsoid shape matrix is not symmetric".into(),
            ));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::Domain(format!(
                "ellipsoid shape matrix is not positive definite (min eig {:.3e})",
                eig.eigenvalues.min()
            )));
        }
        let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let sigma_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
        Ok(Ellipsoid {
            center,
            sigma: sym,
            axes: eig.eigenvectors,
            lambdas: eig.eigenvalues,
            sigma_inv,
        })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    fn lambda_min(&self) -> f64 {
        self.lambdas.min()
    }

    fn lambda_max(&self) -> f64 {
        self.lambdas.max()
    }

    /// Constraint value g(t) = Σ eᵢ² λᵢ/(λᵢ+t)² for the KKT multiplier t,
    /// where e are the coordinates of the query point (relative to the
    /// center) in the axis frame. g is strictly decreasing on (-λ_min, ∞).
    fn kkt_constraint(&self, e: &DVector<f64>, t: f64) -> f64 {
        let mut g = 0.0;
        for i in 0..e.len() {
            let li = self.lambdas[i];
            let denom = li + t;
            g += e[i] * e[i] * li / (denom * denom);
        }
        g
    }

    /// Solve g(t) = 1 by bisection on a bracket [lo, hi] with g(lo) > 1 > g(hi).
    fn kkt_root(&self, e: &DVector<f64>, mut lo: f64, mut hi: f64) -> Result<f64> {
        for _ in 0..ROOT_FIND_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            let g = self.kkt_constraint(e, mid);
            if (g - 1.0).abs() <= ROOT_FIND_RESIDUAL {
                return Ok(mid);
            }
            if g > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo).abs() <= f64::EPSILON * (1.0 + hi.abs()) {
                return Ok(0.5 * (lo + hi));
            }
        }
        Err(Error::Numerical(format!(
            "ellipsoid KKT root-find did not converge in {ROOT_FIND_MAX_ITER} iterations \
             (bracket [{lo:.6e}, {hi:.6e}], residual {:.3e})",
            (self.kkt_constraint(e, 0.5 * (lo + hi)) - 1.0).abs()
        )))
    }
}

/// A convex compact Θ ⊂ ℝ^p from the supported catalogue.
#[derive(Clone, Debug)]
pub enum ConvexCompact {
    Ball(Ball),
    Ellipsoid(Ellipsoid),
}

impl ConvexCompact {
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        Ok(ConvexCompact::Ball(Ball::new(center, radius)?))
    }

    pub fn ellipsoid(center: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        Ok(ConvexCompact::Ellipsoid(Ellipsoid::new(center, sigma)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexCompact::Ball(b) => b.center.len(),
            ConvexCompact::Ellipsoid(e) => e.center.len(),
        }
    }

    pub fn center(&self) -> &DVector<f64> {
        match self {
            ConvexCompact::Ball(b) => &b.center,
            ConvexCompact::Ellipsoid(e) => &e.center,
        }
    }

    /// Exact diameter of the set itself (2r for balls, twice the largest
    /// semi-axis for ellipsoids). The sampled [`diameter`] on support
    /// functions is for composite sets.
    pub fn diameter_exact(&self) -> f64 {
        match self {
            ConvexCompact::Ball(b) => 2.0 * b.radius,
            ConvexCompact::Ellipsoid(e) => 2.0 * e.lambda_max().sqrt(),
        }
    }

    /// Tolerance separating "interior" from "boundary" in the normal-cone
    /// projection: 1e-9 · (1 + diameter). The cone map is discontinuous
    /// exactly at this decision, so the constant is exposed rather than
    /// buried.
    pub fn default_boundary_tol(&self) -> f64 {
        1e-9 * (1.0 + self.diameter_exact())
    }

    /// Support function σ(u) = max_{v∈S} uᵀv. u = 0 is allowed (σ = uᵀc = 0
    /// contribution plus zero norm terms).
    pub fn support(&self, u: &DVector<f64>) -> f64 {
        match self {
            ConvexCompact::Ball(b) => b.center.dot(u) + b.radius * u.norm(),
            ConvexCompact::Ellipsoid(e) => {
                e.center.dot(u) + (u.dot(&(&e.sigma * u))).max(0.0).sqrt()
            }
        }
    }

    /// Metric projection P_S(u) = argmin_{v∈S} |u - v|.
    pub fn project(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ConvexCompact::Ball(b) => {
                let d = u - &b.center;
                let norm = d.norm();
                if norm <= b.radius {
                    Ok(u.clone())
                } else {
                    Ok(&b.center + d * (b.radius / norm))
                }
            }
            ConvexCompact::Ellipsoid(e) => {
                let d = u - &e.center;
                let quad = d.dot(&(&e.sigma_inv * &d));
                if quad <= 1.0 {
                    return Ok(u.clone());
                }
                // outside: unique KKT multiplier t > 0 with g(t) = 1
                let coords = e.axes.transpose() * &d;
                let mut hi = (0..coords.len())
                    .map(|i| coords[i] * coords[i] * e.lambdas[i])
                    .sum::<f64>()
                    .sqrt()
                    .max(e.lambda_min() * 1e-3);
                while e.kkt_constraint(&coords, hi) > 1.0 {
                    hi *= 2.0;
                }
                let t = e.kkt_root(&coords, 0.0, hi)?;
                let scaled = DVector::from_fn(coords.len(), |i, _| {
                    coords[i] * e.lambdas[i] / (e.lambdas[i] + t)
                });
                Ok(&e.center + &e.axes * scaled)
            }
        }
    }

    /// Distance from u to the set (0 inside).
    pub fn distance(&self, u: &DVector<f64>) -> Result<f64> {
        Ok((u - self.project(u)?).norm())
    }

    /// Signed distance: negative inside (minus the distance to the
    /// boundary), positive outside.
    pub fn signed_distance(&self, u: &DVector<f64>) -> Result<f64> {
        match self {
            ConvexCompact::Ball(b) => Ok((u - &b.center).norm() - b.radius),
            ConvexCompact::Ellipsoid(e) => {
                let d = u - &e.center;
                let quad = d.dot(&(&e.sigma_inv * &d));
                if quad > 1.0 {
                    self.distance(u)
                } else {
                    Ok(-self.boundary_distance_inside(u)?)
                }
            }
        }
    }

    /// Distance from an interior (or boundary) point to the boundary ∂S.
    fn boundary_distance_inside(&self, u: &DVector<f64>) -> Result<f64> {
        match self {
            ConvexCompact::Ball(b) => Ok((b.radius - (u - &b.center).norm()).max(0.0)),
            ConvexCompact::Ellipsoid(e) => {
                let d = u - &e.center;
                let coords = e.axes.transpose() * &d;
                if coords.norm() <= 1e-14 * (1.0 + e.lambda_max().sqrt()) {
                    // center: nearest boundary point sits on the shortest semi-axis
                    return Ok(e.lambda_min().sqrt());
                }
                let lam_min = e.lambda_min();
                // nearest boundary point solves g(t) = 1 with t ∈ (-λ_min, 0]
                let lo_probe = -lam_min * (1.0 - 1e-12);
                if self.kkt_degenerate_case(e, &coords, lo_probe) {
                    // no root in the bracket: the minimizer picks up a free
                    // component in the λ_min eigenspace at t = -λ_min
                    return Ok(Self::degenerate_boundary_distance(e, &coords));
                }
                let t = e.kkt_root(&coords, lo_probe, 0.0)?;
                let mut dist2 = 0.0;
                for i in 0..coords.len() {
                    let w = coords[i] * e.lambdas[i] / (e.lambdas[i] + t) - coords[i];
                    dist2 += w * w;
                }
                Ok(dist2.sqrt())
            }
        }
    }

    fn kkt_degenerate_case(&self, e: &Ellipsoid, coords: &DVector<f64>, lo_probe: f64) -> bool {
        e.kkt_constraint(coords, lo_probe) < 1.0
    }

    /// Boundary distance when the KKT multiplier saturates at t = -λ_min:
    /// components in the λ_min eigenspace become free and absorb the
    /// remaining constraint slack.
    fn degenerate_boundary_distance(e: &Ellipsoid, coords: &DVector<f64>) -> f64 {
        let lam_min = e.lambda_min();
        let min_space = |l: f64| l <= lam_min * (1.0 + 1e-12);
        let mut dist2 = 0.0;
        let mut used = 0.0;
        for i in 0..coords.len() {
            let li = e.lambdas[i];
            if min_space(li) {
                continue;
            }
            let shift = coords[i] * lam_min / (li - lam_min);
            dist2 += shift * shift;
            let w = coords[i] * li / (li - lam_min);
            used += w * w / li;
        }
        let free2 = (lam_min * (1.0 - used)).max(0.0);
        (dist2 + free2).sqrt()
    }

    /// Membership within an absolute distance tolerance.
    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.distance(u)? <= tol)
    }

    /// Unit inward normal at a boundary point q.
    pub fn unit_inward_normal(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ConvexCompact::Ball(b) => {
                let d = &b.center - q;
                let norm = d.norm();
                if norm == 0.0 {
                    return Err(Error::Domain(
                        "inward normal undefined at the ball center".into(),
                    ));
                }
                Ok(d / norm)
            }
            ConvexCompact::Ellipsoid(e) => {
                let g = &e.sigma_inv * (q - &e.center);
                let norm = g.norm();
                if norm == 0.0 {
                    return Err(Error::Domain(
                        "inward normal undefined at the ellipsoid center".into(),
                    ));
                }
                Ok(-g / norm)
            }
        }
    }

    /// Projection of v onto the inward normal cone N_S(q): zero for interior
    /// q, and the ray projection max(nᵀv, 0)·n at boundary points. q must
    /// belong to S within `boundary_tol`.
    pub fn normal_cone_project(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        boundary_tol: f64,
    ) -> Result<DVector<f64>> {
        let sd = self.signed_distance(q)?;
        if sd > boundary_tol {
            return Err(Error::Domain(format!(
                "normal_cone_project: point is outside the set by {sd:.3e} (tol {boundary_tol:.3e})"
            )));
        }
        if sd < -boundary_tol {
            return Ok(DVector::zeros(q.len()));
        }
        let n = self.unit_inward_normal(q)?;
        let t = n.dot(v).max(0.0);
        Ok(n * t)
    }

    /// Strong convexity constant R: the smallest r such that the set is an
    /// intersection of radius-r balls. Balls: the radius. Ellipsoids: the
    /// largest principal radius of curvature λ_max/√λ_min.
    pub fn strong_convexity_constant(&self) -> f64 {
        match self {
            ConvexCompact::Ball(b) => b.radius,
            ConvexCompact::Ellipsoid(e) => e.lambda_max() / e.lambda_min().sqrt(),
        }
    }

    /// Boundary point associated with a (nonzero) parameter direction:
    /// c + r·u/|u| for balls, c + Σ^{1/2} u/|u| for ellipsoids.
    pub fn boundary_point(&self, dir: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = dir.norm();
        if norm == 0.0 {
            return Err(Error::Domain("boundary_point: zero direction".into()));
        }
        let s = dir / norm;
        match self {
            ConvexCompact::Ball(b) => Ok(&b.center + s * b.radius),
            ConvexCompact::Ellipsoid(e) => {
                let coords = e.axes.transpose() * s;
                let scaled =
                    DVector::from_fn(coords.len(), |i, _| coords[i] * e.lambdas[i].sqrt());
                Ok(&e.center + &e.axes * scaled)
            }
        }
    }

    pub fn support_fn(&self) -> SupportFn {
        SupportFn::from_set(self)
    }
}

/// An evaluable direction → scalar map σ(u), closed under linear images,
/// Minkowski sums and quadrature-defined integrals.
#[derive(Clone)]
pub struct SupportFn {
    dim: usize,
    eval: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
}

impl SupportFn {
    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        SupportFn {
            dim,
            eval: Arc::new(f),
        }
    }

    pub fn from_set(set: &ConvexCompact) -> Self {
        let set = set.clone();
        SupportFn::from_fn(set.dim(), move |u| set.support(u))
    }

    /// Singleton {v}: σ(u) = uᵀv.
    pub fn point(v: DVector<f64>) -> Self {
        let dim = v.len();
        SupportFn::from_fn(dim, move |u| v.dot(u))
    }

    pub fn origin(dim: usize) -> Self {
        SupportFn::from_fn(dim, |_| 0.0)
    }

    /// Linear image M·S: σ_{MS}(u) = σ_S(Mᵀu).
    pub fn linear_image(m: DMatrix<f64>, inner: SupportFn) -> Self {
        assert_eq!(
            m.ncols(),
            inner.dim,
            "linear_image: matrix columns must match the inner dimension"
        );
        let dim = m.nrows();
        let mt = m.transpose();
        SupportFn::from_fn(dim, move |u| inner.eval(&(&mt * u)))
    }

    /// Minkowski sum: support functions add pointwise.
    pub fn minkowski_sum(&self, other: &SupportFn) -> Self {
        assert_eq!(self.dim, other.dim, "minkowski_sum: dimension mismatch");
        let a = self.clone();
        let b = other.clone();
        SupportFn::from_fn(self.dim, move |u| a.eval(u) + b.eval(u))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        (self.eval)(u)
    }
}

/// Unit-sphere direction samples: exact for p = 1, uniform angular grid for
/// p = 2, Fibonacci sphere for p = 3, seeded low-discrepancy normals above.
pub fn unit_directions(dim: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(dim > 0, "unit_directions: zero dimension");
    match dim {
        1 => vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![-1.0]),
        ],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + dim as u64);
            (0..count)
                .map(|_| {
                    loop {
                        let v = DVector::from_fn(dim, |_, _| {
                            // Box-Muller pair, one component at a time
                            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                            let u2: f64 = rng.random_range(0.0..1.0);
                            (-2.0 * u1.ln()).sqrt()
                                * (2.0 * std::f64::consts::PI * u2).cos()
                        });
                        let norm = v.norm();
                        if norm > 1e-8 {
                            return v / norm;
                        }
                    }
                })
                .collect()
        }
    }
}

/// Default direction budget per dimension (doubled under refinement).
pub fn default_direction_count(dim: usize) -> usize {
    match dim {
        1 => 2,
        2 => 2048,
        _ => 8192,
    }
}

const REFINE_REL_TOL: f64 = 1e-6;
const REFINE_MAX_COUNT: usize = 1 << 17;

/// Evaluate a direction-sampled extremum with the budget doubled until the
/// relative change drops below 1e-6 (exact two-direction case for dim 1).
pub(crate) fn refine_over_directions<F: Fn(&[DVector<f64>]) -> f64>(dim: usize, f: F) -> f64 {
    let mut count = default_direction_count(dim);
    let mut prev = f(&unit_directions(dim, count));
    if dim == 1 {
        return prev; // two directions are exact
    }
    loop {
        count *= 2;
        let next = f(&unit_directions(dim, count));
        if (next - prev).abs() <= REFINE_REL_TOL * (1.0 + next.abs()) || count >= REFINE_MAX_COUNT
        {
            return next;
        }
        prev = next;
    }
}

/// Sampled diameter max_u (σ(u) + σ(-u)) over the unit sphere, refined by
/// doubling the direction budget until the relative change drops below 1e-6.
/// Always a lower bound on the true diameter.
pub fn diameter(sigma: &SupportFn) -> f64 {
    refine_over_directions(sigma.dim(), |dirs| {
        dirs.iter()
            .map(|u| sigma.eval(u) + sigma.eval(&(-u)))
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Hausdorff deviation D(L, M) through support functions:
/// max_u (σ_L(u) - σ_M(u))₊ over sampled directions. With `m = None` this is
/// the deviation from the origin, D(L, {0}) = max_u σ_L(u). For general M the
/// formula is valid when M is a summand-translate of L (the only way this
/// crate uses it); it is a documented limitation, not a general Hausdorff
/// deviation.
pub fn deviation_from(sigma_l: &SupportFn, m: Option<&SupportFn>) -> f64 {
    let dim = sigma_l.dim();
    if let Some(sigma_m) = m {
        assert_eq!(dim, sigma_m.dim(), "deviation_from: dimension mismatch");
    }
    refine_over_directions(dim, |dirs| {
        dirs.iter()
            .map(|u| {
                let gap = sigma_l.eval(u) - m.map_or(0.0, |sm| sm.eval(u));
                gap.max(0.0)
            })
            .fold(0.0_f64, f64::max)
    })
}

/// One witness of a violated inward-normal inequality.
#[derive(Clone, Debug)]
pub struct NormalWitness {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub violation: f64,
    pub which: &'static str,
}

/// Outcome of [`check_normal_inequalities`].
#[derive(Clone, Debug)]
pub struct NormalInequalityReport {
    pub trials: usize,
    pub tol: f64,
    /// max over trials of (u-v)ᵀ(x-y) + (|u|+|v|)|x-y|²/(2R), clamped at 0
    pub max_violation_strong: f64,
    /// max over trials of (u-v)ᵀ(x-y) + 2r(|u|+|v|), clamped at 0
    pub max_violation_midpoint: f64,
    /// max violation of the chain r ≥ R-√(R²-|x-y|²/4) ≥ |x-y|²/(8R)
    pub max_violation_chain: f64,
    pub witnesses: Vec<NormalWitness>,
}

impl NormalInequalityReport {
    pub fn max_violation(&self) -> f64 {
        self.max_violation_strong
            .max(self.max_violation_midpoint)
            .max(self.max_violation_chain)
    }

    pub fn passed(&self) -> bool {
        self.witnesses.is_empty()
    }
}

/// Randomized check of the two inward-normal inequalities for a strongly
/// convex set with constant R = [`ConvexCompact::strong_convexity_constant`]:
///
/// - (u-v)ᵀ(x-y) ≤ -(|u|+|v|)·|x-y|²/(2R) for boundary points x, y and
///   inward normals u, v (nonnegative scalings of the unit normals);
/// - (u-v)ᵀ(x-y) ≤ -2r(|u|+|v|) with r the distance from the midpoint of
///   [x, y] to the boundary;
/// - the chain r ≥ R - √(R² - |x-y|²/4) ≥ |x-y|²/(8R).
pub fn check_normal_inequalities(
    set: &ConvexCompact,
    trials: usize,
    rng_seed: u64,
) -> Result<NormalInequalityReport> {
    let p = set.dim();
    let r_strong = set.strong_convexity_constant();
    let scale = 1.0 + set.diameter_exact() + r_strong;
    let tol = 1e-9 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = NormalInequalityReport {
        trials,
        tol,
        max_violation_strong: 0.0,
        max_violation_midpoint: 0.0,
        max_violation_chain: 0.0,
        witnesses: Vec::new(),
    };

    let random_dir = |rng: &mut ChaCha8Rng| loop {
        let v = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0_f64));
        if v.norm() > 1e-3 {
            return v;
        }
    };

    for trial in 0..trials {
        let x = set.boundary_point(&random_dir(&mut rng))?;
        let y = set.boundary_point(&random_dir(&mut rng))?;
        let nx = set.unit_inward_normal(&x)?;
        let ny = set.unit_inward_normal(&y)?;
        // occasional zero scalings exercise the cone apex
        let su = if trial % 17 == 0 {
            0.0
        } else {
            rng.random_range(0.0..2.0)
        };
        let sv = if trial % 23 == 0 {
            0.0
        } else {
            rng.random_range(0.0..2.0)
        };
        let u = &nx * su;
        let v = &ny * sv;

        let diff = &x - &y;
        let lhs = (&u - &v).dot(&diff);
        let norms = u.norm() + v.norm();
        let dist2 = diff.norm_squared();

        let viol_strong = lhs + norms * dist2 / (2.0 * r_strong);
        if viol_strong > report.max_violation_strong {
            report.max_violation_strong = viol_strong;
        }
        if viol_strong > tol {
            report.witnesses.push(NormalWitness {
                x: x.clone(),
                y: y.clone(),
                u: u.clone(),
                v: v.clone(),
                violation: viol_strong,
                which: "strong-convexity inequality",
            });
        }

        let mid = (&x + &y) * 0.5;
        let r_mid = set.boundary_distance_inside(&mid)?;
        let viol_mid = lhs + 2.0 * r_mid * norms;
        if viol_mid > report.max_violation_midpoint {
            report.max_violation_midpoint = viol_mid;
        }
        if viol_mid > tol {
            report.witnesses.push(NormalWitness {
                x: x.clone(),
                y: y.clone(),
                u: u.clone(),
                v: v.clone(),
                violation: viol_mid,
                which: "midpoint-radius inequality",
            });
        }

        // chain of radius lower bounds
        let disc = (r_strong * r_strong - 0.25 * dist2).max(0.0);
        let bound1 = r_strong - disc.sqrt();
        let bound2 = dist2 / (8.0 * r_strong);
        let viol_chain = (bound1 - r_mid).max(bound2 - bound1);
        if viol_chain > report.max_violation_chain {
            report.max_violation_chain = viol_chain;
        }
        if viol_chain > tol {
            report.witnesses.push(NormalWitness {
                x,
                y,
                u,
                v,
                violation: viol_chain,
                which: "radius chain bound",
            });
        }
    }

    // violations are data in the report, not an abort: the caller decides
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn unit_ball2() -> ConvexCompact {
        ConvexCompact::ball(DVector::zeros(2), 1.0).unwrap()
    }

    fn ellipse41() -> ConvexCompact {
        ConvexCompact::ellipsoid(
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
        )
        .unwrap()
    }

    #[test]
    fn constructors_validate() {
        assert!(ConvexCompact::ball(DVector::zeros(2), 0.0).is_err());
        assert!(ConvexCompact::ball(DVector::zeros(2), -1.0).is_err());
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(ConvexCompact::ellipsoid(DVector::zeros(2), bad).is_err());
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(ConvexCompact::ellipsoid(DVector::zeros(2), skew).is_err());
    }

    #[test]
    fn support_values() {
        assert!((unit_ball2().support(&vec2(3.0, 4.0)) - 5.0).abs() < 1e-14);
        let id = ConvexCompact::ellipsoid(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((id.support(&vec2(0.0, 1.0)) - 1.0).abs() < 1e-14);
        // centre (1,0), Σ = diag(4,1), u = (1,0): uᵀc + √(uᵀΣu) = 1 + 2 = 3,
        // which matches maximizing uᵀv over the boundary by Lagrange
        let e = ConvexCompact::ellipsoid(
            vec2(1.0, 0.0),
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
        )
        .unwrap();
        assert!((e.support(&vec2(1.0, 0.0)) - 3.0).abs() < 1e-14);
        let boundary_max = (0..20000)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 20000.0;
                1.0 + 2.0 * a.cos()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((e.support(&vec2(1.0, 0.0)) - boundary_max).abs() < 1e-7);
    }

    #[test]
    fn projection_examples() {
        let b = unit_ball2();
        let p = b.project(&vec2(2.0, 0.0)).unwrap();
        assert!((p - vec2(1.0, 0.0)).norm() < 1e-14);

        // members are fixed points
        let inside = vec2(0.3, -0.2);
        assert!((b.project(&inside).unwrap() - &inside).norm() == 0.0);

        let e = ellipse41();
        let p = e.project(&vec2(4.0, 0.0)).unwrap();
        assert!((p - vec2(2.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn projection_matches_dense_boundary_search() {
        let e = ellipse41();
        let q = vec2(3.0, 2.5);
        let p = e.project(&q).unwrap();
        let best = (0..200000)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 200000.0;
                (vec2(2.0 * a.cos(), a.sin()) - &q).norm()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(((p - &q).norm() - best).abs() < 1e-8);
    }

    #[test]
    fn normal_cone_projection_cases() {
        let b = unit_ball2();
        let tol = b.default_boundary_tol();
        // interior point: cone is {0}
        let z = b
            .normal_cone_project(&vec2(0.0, 0.0), &vec2(5.0, -3.0), tol)
            .unwrap();
        assert_eq!(z, vec2(0.0, 0.0));
        // boundary, v with inward component: ray projection
        let r = b
            .normal_cone_project(&vec2(1.0, 0.0), &vec2(-2.0, 5.0), tol)
            .unwrap();
        assert!((r - vec2(-2.0, 0.0)).norm() < 1e-12);
        // boundary, v pointing outward: apex
        let r = b
            .normal_cone_project(&vec2(1.0, 0.0), &vec2(3.0, 0.0), tol)
            .unwrap();
        assert!(r.norm() == 0.0);
        // outside beyond tolerance: domain error
        assert!(b
            .normal_cone_project(&vec2(1.5, 0.0), &vec2(0.0, 0.0), tol)
            .is_err());
    }

    #[test]
    fn strong_convexity_constants() {
        let b = ConvexCompact::ball(vec2(0.3, -1.0), 2.5).unwrap();
        assert_eq!(b.strong_convexity_constant(), 2.5);
        assert!((ellipse41().strong_convexity_constant() - 4.0).abs() < 1e-12);
        let id = ConvexCompact::ellipsoid(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((id.strong_convexity_constant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strong_convexity_ball_inclusion_definition() {
        // Θ ⊂ B̄_R(x + Rν) at sampled boundary points, and the inclusion
        // fails once R shrinks by a relative 1e-3
        let e = ellipse41();
        let r = e.strong_convexity_constant();
        let r_bad = r * (1.0 - 1e-3);
        let boundary: Vec<DVector<f64>> = unit_directions(2, 512)
            .into_iter()
            .map(|d| e.boundary_point(&d).unwrap())
            .collect();
        let mut bad_fails = false;
        for x in &boundary {
            let n = e.unit_inward_normal(x).unwrap();
            let c_good = x + &n * r;
            let c_bad = x + &n * r_bad;
            for v in &boundary {
                assert!(
                    (v - &c_good).norm() <= r + 1e-9,
                    "ball inclusion failed at R"
                );
                if (v - &c_bad).norm() > r_bad + 1e-9 {
                    bad_fails = true;
                }
            }
        }
        assert!(bad_fails, "shrunk radius should violate the inclusion");
    }

    #[test]
    fn diameter_examples() {
        let b = ConvexCompact::ball(vec2(1.0, -2.0), 1.5).unwrap();
        assert!((diameter(&b.support_fn()) - 3.0).abs() < 1e-9);

        let sum = unit_ball2()
            .support_fn()
            .minkowski_sum(&ConvexCompact::ball(DVector::zeros(2), 2.0).unwrap().support_fn());
        assert!((diameter(&sum) - 6.0).abs() < 1e-9);

        // 2 × max semi-axis; cross-checked against pairwise boundary distances
        let e = ellipse41();
        let d = diameter(&e.support_fn());
        assert!((d - 4.0).abs() < 1e-6);
        let pts: Vec<DVector<f64>> = (0..1024)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 1024.0;
                vec2(2.0 * a.cos(), a.sin())
            })
            .collect();
        let pairwise = pts
            .iter()
            .flat_map(|p| pts.iter().map(move |q| (p - q).norm()))
            .fold(0.0_f64, f64::max);
        assert!((d - pairwise).abs() < 1e-4);
    }

    #[test]
    fn deviation_examples() {
        let shifted = ConvexCompact::ball(vec2(1.0, 0.0), 1.0).unwrap();
        assert!((deviation_from(&shifted.support_fn(), None) - 2.0).abs() < 1e-9);

        let b = ConvexCompact::ball(DVector::zeros(2), 0.7).unwrap();
        assert!((deviation_from(&b.support_fn(), None) - 0.7).abs() < 1e-9);

        let e = ellipse41();
        assert!((deviation_from(&e.support_fn(), None) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn deviation_one_dimensional_exact() {
        let theta =
            ConvexCompact::ball(DVector::from_vec(vec![0.1]), 0.2).unwrap();
        assert!((deviation_from(&theta.support_fn(), None) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn normal_inequalities_hand_cases() {
        // antipodal points on the unit ball with unit normals:
        // LHS = -4, strong-convexity RHS = -(1+1)·4/(2·1) = -4 (tight)
        let x = vec2(1.0, 0.0);
        let y = vec2(-1.0, 0.0);
        let u = vec2(-1.0, 0.0);
        let v = vec2(1.0, 0.0);
        let lhs = (&u - &v).dot(&(&x - &y));
        assert!(lhs <= -(u.norm() + v.norm()) * 4.0 / (2.0 * 1.0) + 1e-12);
        // zero normals: 0 ≤ 0
        let z = DVector::zeros(2);
        assert!((&z - &z).dot(&(&x - &y)) <= 0.0);
    }

    #[test]
    fn normal_inequalities_randomized() {
        let e = ellipse41();
        let report = check_normal_inequalities(&e, 2000, 42).unwrap();
        assert!(
            report.passed(),
            "violations up to {:.3e}",
            report.max_violation()
        );
        assert!(report.max_violation() <= 1e-9);

        let b = ConvexCompact::ball(vec2(0.5, 0.5), 1.3).unwrap();
        let report = check_normal_inequalities(&b, 2000, 43).unwrap();
        assert!(report.passed());
    }

    #[test]
    fn interior_boundary_distance_matches_dense_search() {
        let e = ellipse41();
        for q in [vec2(1.0, 0.0), vec2(0.5, 0.3), vec2(-1.2, -0.4), vec2(0.0, 0.0)] {
            let d = e.boundary_distance_inside(&q).unwrap();
            let dense = (0..400000)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / 400000.0;
                    (vec2(2.0 * a.cos(), a.sin()) - &q).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(
                (d - dense).abs() < 1e-8,
                "interior distance mismatch at {q:?}: {d} vs {dense}"
            );
        }
    }

    #[test]
    fn signed_distance_signs() {
        let e = ellipse41();
        assert!(e.signed_distance(&vec2(0.0, 0.0)).unwrap() < 0.0);
        assert!(e.signed_distance(&vec2(3.0, 0.0)).unwrap() > 0.0);
        let on = e.signed_distance(&vec2(2.0, 0.0)).unwrap();
        assert!(on.abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn projection_nonexpansive_ball(
            ux in -5.0..5.0f64, uy in -5.0..5.0f64,
            vx in -5.0..5.0f64, vy in -5.0..5.0f64,
        ) {
            let b = ConvexCompact::ball(vec2(0.2, -0.3), 0.8).unwrap();
            let pu = b.project(&vec2(ux, uy)).unwrap();
            let pv = b.project(&vec2(vx, vy)).unwrap();
            prop_assert!((pu - pv).norm() <= (vec2(ux, uy) - vec2(vx, vy)).norm() + 1e-12);
        }

        #[test]
        fn projection_nonexpansive_ellipsoid(
            ux in -5.0..5.0f64, uy in -5.0..5.0f64,
            vx in -5.0..5.0f64, vy in -5.0..5.0f64,
        ) {
            let e = ellipse41();
            let pu = e.project(&vec2(ux, uy)).unwrap();
            let pv = e.project(&vec2(vx, vy)).unwrap();
            prop_assert!((pu - pv).norm() <= (vec2(ux, uy) - vec2(vx, vy)).norm() + 1e-12);
        }

        #[test]
        fn support_fn_homogeneous_and_subadditive(
            ux in -2.0..2.0f64, uy in -2.0..2.0f64,
            vx in -2.0..2.0f64, vy in -2.0..2.0f64,
            a in 0.0..3.0f64,
        ) {
            let e = ConvexCompact::ellipsoid(
                vec2(0.4, -0.1),
                DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            ).unwrap();
            let s = e.support_fn();
            let u = vec2(ux, uy);
            let v = vec2(vx, vy);
            prop_assert!((s.eval(&(&u * a)) - a * s.eval(&u)).abs() <= 1e-10 * (1.0 + s.eval(&u).abs()));
            prop_assert!(s.eval(&(&u + &v)) <= s.eval(&u) + s.eval(&v) + 1e-10);
        }

        #[test]
        fn normal_cone_projection_nonexpanding(
            qa in 0.0..(2.0 * std::f64::consts::PI),
            vx in -3.0..3.0f64, vy in -3.0..3.0f64,
        ) {
            let b = unit_ball2();
            let q = vec2(qa.cos(), qa.sin());
            let v = vec2(vx, vy);
            let r = b.normal_cone_project(&q, &v, b.default_boundary_tol()).unwrap();
            prop_assert!(r.norm() <= v.norm() + 1e-12);
        }

        #[test]
        fn support_project_consistency(ang in 0.0..(2.0 * std::f64::consts::PI)) {
            // projecting from far along u lands on the face where uᵀv = σ(u)
            // (the gap closes quadratically in 1/distance)
            let e = ellipse41();
            let u = vec2(ang.cos(), ang.sin());
            let far = &u * 1e7;
            let p = e.project(&far).unwrap();
            prop_assert!((u.dot(&p) - e.support(&u)).abs() < 1e-6);
        }
    }
}
