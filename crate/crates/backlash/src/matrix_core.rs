//! Dense linear-algebra kernels sized for small state dimensions: matrix
//! exponential, the Ψ propagator, symmetric eigenvalues, a canonical
//! Lyapunov-inequality solve and the closed-form spectral bound for
//! two-scalar block matrices.
//!
//! Everything here targets n + p ≲ 64; no sparse or structured paths.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetrizer (M + Mᵀ)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Operator 2-norm (largest singular value).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn assert_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Domain(format!(
            "{what}: expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

fn assert_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.norm();
    let skew = (m - m.transpose()).norm();
    if skew > 1e-10 * scale.max(1.0) {
        return Err(Error::Domain(format!(
            "{what}: matrix is not symmetric (asymmetry {skew:.3e} vs scale {scale:.3e})"
        )));
    }
    Ok(())
}

// Padé-13 coefficients and switching thresholds from the scaling-and-squaring
// method (Higham 2005).
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA3: f64 = 1.495_585_217_958_292e-2;
const THETA5: f64 = 2.539_398_330_063_230e-1;
const THETA7: f64 = 9.504_178_996_162_932e-1;
const THETA9: f64 = 2.097_847_961_257_068;
const THETA13: f64 = 5.371_920_351_148_152;

fn pade_uv(m: &DMatrix<f64>, coeffs: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let m2 = m * m;
    // even/odd polynomial split: U = M * (odd coeffs in M²), V = even coeffs in M²
    let mut u_poly = DMatrix::<f64>::identity(n, n) * coeffs[1];
    let mut v_poly = DMatrix::<f64>::identity(n, n) * coeffs[0];
    let mut power = DMatrix::<f64>::identity(n, n);
    for k in 1..=(coeffs.len() - 1) / 2 {
        power = &power * &m2;
        if 2 * k + 1 < coeffs.len() {
            u_poly += &power * coeffs[2 * k + 1];
        }
        v_poly += &power * coeffs[2 * k];
    }
    (m * u_poly, v_poly)
}

/// Matrix exponential e^{tA} by scaling-and-squaring with a Padé kernel.
pub fn expm(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = assert_square(a, "expm")?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let m = a * t;
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical("expm: non-finite entries in tA".into()));
    }
    let norm1 = m
        .column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);

    let (u, v, squarings) = if norm1 <= THETA9 {
        let coeffs: &[f64] = if norm1 <= THETA3 {
            &[120.0, 60.0, 12.0, 1.0]
        } else if norm1 <= THETA5 {
            &[30_240.0, 15_120.0, 3_360.0, 420.0, 30.0, 1.0]
        } else if norm1 <= THETA7 {
            &[
                17_297_280.0,
                8_648_640.0,
                1_995_840.0,
                277_200.0,
                25_200.0,
                1_512.0,
                56.0,
                1.0,
            ]
        } else {
            &[
                17_643_225_600.0,
                8_821_612_800.0,
                2_075_673_600.0,
                302_702_400.0,
                30_270_240.0,
                2_162_160.0,
                110_880.0,
                3_960.0,
                90.0,
                1.0,
            ]
        };
        let (u, v) = pade_uv(&m, coeffs);
        (u, v, 0u32)
    } else {
        let squarings = ((norm1 / THETA13).log2().ceil()).max(0.0) as u32;
        if squarings > 60 {
            return Err(Error::Numerical(format!(
                "expm: ||tA|| = {norm1:.3e} too large (would need {squarings} squarings)"
            )));
        }
        let scaled = &m / 2f64.powi(squarings as i32);
        let (u, v) = pade_uv(&scaled, &PADE13);
        (u, v, squarings)
    };

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Numerical("expm: Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical("expm: overflow during squaring".into()));
    }
    Ok(r)
}

/// Ψ(tA), the entire function with Ψ(0) = I and Ψ(u) = (e^u - 1)/u,
/// evaluated so that ξ(t) = tΨ(tA)ω solves ξ̇ = Aξ + ω, ξ(0) = 0.
///
/// Computed from the augmented exponential
/// exp([[tA, I], [0, 0]]) = [[e^{tA}, Ψ(tA)], [0, I]]
/// (the top-right block is Σ (tA)^k/(k+1)! = Ψ(tA) exactly), which avoids
/// the (e^{tA}-I)(tA)⁻¹ form and its singular-A caveat. A short series
/// covers |t|·||A|| below the rounding threshold.
pub fn psi_matrix(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = assert_square(a, "psi_matrix")?;
    let scale = t.abs() * a.norm();
    if scale == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    if scale < 1e-8 {
        // Ψ(B) = I + B/2! + B²/3! with error O(||B||³) < 1e-24
        let b = a * t;
        let b2 = &b * &b;
        return Ok(DMatrix::identity(n, n) + b / 2.0 + b2 / 6.0);
    }
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    let e = expm(&aug, 1.0)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// Real eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigs(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    assert_square(m, "symmetric_eigs")?;
    assert_symmetric(m, "symmetric_eigs")?;
    let sym = symmetrize(m);
    let mut eigs: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eigs)
}

/// Largest real part of the eigenvalues, plus the Hurwitz verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralAbscissa {
    pub mu: f64,
    pub hurwitz: bool,
}

pub fn spectral_abscissa(f: &DMatrix<f64>) -> Result<SpectralAbscissa> {
    let n = assert_square(f, "spectral_abscissa")?;
    if n == 0 {
        return Err(Error::Domain("spectral_abscissa: empty matrix".into()));
    }
    let eigs = f.clone().complex_eigenvalues();
    let mu = eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !mu.is_finite() {
        return Err(Error::Numerical(
            "spectral_abscissa: eigenvalue iteration failed".into(),
        ));
    }
    Ok(SpectralAbscissa { mu, hurwitz: mu < 0.0 })
}

/// Canonical Π ≻ 0 with 𝐒(ΠF) ≼ -λΠ, from the Lyapunov equation
/// (F + λI)ᵀΠ + Π(F + λI) = -I solved densely via the Kronecker form.
///
/// Requires 0 < λ < |μ(F)| so that F + λI is Hurwitz. The inequality is
/// re-verified a posteriori on every call.
pub fn lyapunov_certificate(f: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let n = assert_square(f, "lyapunov_certificate")?;
    let sa = spectral_abscissa(f)?;
    if !sa.hurwitz {
        return Err(Error::Hypothesis(format!(
            "lyapunov_certificate: F is not Hurwitz (spectral abscissa {:.6e})",
            sa.mu
        )));
    }
    if !(lambda > 0.0 && lambda < -sa.mu) {
        return Err(Error::Hypothesis(format!(
            "lyapunov_certificate: need 0 < lambda < |mu| = {:.6e}, got lambda = {:.6e}",
            -sa.mu, lambda
        )));
    }
    let shifted = f + DMatrix::<f64>::identity(n, n) * lambda;

    // vec(AᵀΠ + ΠA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(Π) = -vec(I)
    let big = DMatrix::<f64>::identity(n, n).kronecker(&shifted.transpose())
        + shifted.transpose().kronecker(&DMatrix::identity(n, n));
    let rhs = DVector::<f64>::from_fn(n * n, |k, _| {
        if k % n == k / n {
            -1.0
        } else {
            0.0
        }
    });
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("lyapunov_certificate: Kronecker solve failed".into()))?;
    let pi = symmetrize(&DMatrix::from_fn(n, n, |i, j| sol[j * n + i]));

    // postconditions: Π ≻ 0 and λ_max(𝐒(ΠF) + λΠ) ≤ 1e-9
    let eigs = symmetric_eigs(&pi)?;
    if eigs[0] <= 0.0 {
        return Err(Error::Numerical(format!(
            "lyapunov_certificate: solution not positive definite (min eig {:.3e})",
            eigs[0]
        )));
    }
    let residual = symmetrize(&(&pi * f)) + &pi * lambda;
    let max_eig = *symmetric_eigs(&residual)?.last().unwrap();
    if max_eig > 1e-9 * pi.norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "lyapunov_certificate: inequality residual {max_eig:.3e} too large"
        )));
    }
    Ok(pi)
}

/// λ_max of [[aIₙ, g], [gᵀ, bI_p]] in closed form:
/// (a+b)/2 + sqrt(||g||² + ((a-b)/2)²) with ||g|| the largest singular value.
pub fn block_spectral_max(a: f64, b: f64, g: &DMatrix<f64>) -> f64 {
    let half_diff = 0.5 * (a - b);
    let gnorm = operator_norm(g);
    0.5 * (a + b) + (gnorm * gnorm + half_diff * half_diff).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Taylor-series oracle with terms summed until they fall below 1e-16
    /// relative; independent of the Padé path.
    fn expm_series(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let n = a.nrows();
        let m = a * t;
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..200 {
            term = &term * &m / k as f64;
            sum += &term;
            if term.norm() < 1e-16 * sum.norm() {
                break;
            }
        }
        sum
    }

    #[test]
    fn expm_zero_is_identity() {
        let a = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&a, 1.0).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0]));
        let e = expm(&a, 1.0).unwrap();
        assert!((e[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn expm_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4);
            let e = expm(&a, 0.7).unwrap();
            let oracle = expm_series(&a, 0.7);
            assert!((e - &oracle).norm() <= 1e-10 * oracle.norm());
        }
    }

    #[test]
    fn expm_handles_large_norm_via_squaring() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 5);
        let e1 = expm(&a, 20.0).unwrap();
        // semigroup property against two half steps
        let half = expm(&a, 10.0).unwrap();
        let e2 = &half * &half;
        assert!((e1 - &e2).norm() <= 1e-9 * e2.norm());
    }

    #[test]
    fn expm_rejects_nonsquare_and_huge() {
        assert!(expm(&DMatrix::zeros(2, 3), 1.0).is_err());
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1e20, 1.0]));
        assert!(expm(&a, 1e20).is_err());
    }

    #[test]
    fn psi_at_zero_is_identity() {
        let a = random_matrix(&mut ChaCha8Rng::seed_from_u64(1), 3);
        assert_eq!(psi_matrix(&a, 0.0).unwrap(), DMatrix::identity(3, 3));
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(psi_matrix(&z, 2.5).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn psi_scalar_value() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let p = psi_matrix(&a, 1.0).unwrap();
        assert!((p[(0, 0)] - (1.0f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn psi_matches_inverse_formula_for_invertible_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4) + DMatrix::identity(4, 4) * 0.5;
            let t = rng.random_range(0.1..3.0);
            let psi = psi_matrix(&a, t).unwrap();
            let ta = &a * t;
            let oracle = ta
                .clone()
                .lu()
                .solve(&(expm(&a, t).unwrap() - DMatrix::identity(4, 4)))
                .unwrap();
            assert!((psi - &oracle).norm() <= 1e-10 * (1.0 + oracle.norm()));
        }
    }

    /// Composite GL8 quadrature of the vector integrand s ↦ e^{sA}ω.
    fn quadrature_oracle(a: &DMatrix<f64>, omega: &DVector<f64>, t: f64) -> DVector<f64> {
        use crate::quadrature::{GL8_NODES, GL8_WEIGHTS};
        let segments = 16;
        let h = t / segments as f64;
        let mut acc = DVector::zeros(a.nrows());
        for k in 0..segments {
            let mid = (k as f64 + 0.5) * h;
            for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
                let s = mid + 0.5 * h * x;
                acc += expm(a, s).unwrap() * omega * (0.5 * h * w);
            }
        }
        acc
    }

    #[test]
    fn psi_consistent_with_quadrature_of_exponential() {
        // ||tΨ(tA)ω - ∫₀ᵗ e^{sA}ω ds|| ≤ 1e-9 on random Hurwitz matrices
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n = rng.random_range(1..=6);
            let raw = random_matrix(&mut rng, n);
            let sa = spectral_abscissa(&raw).unwrap();
            let a = raw - DMatrix::identity(n, n) * (sa.mu + rng.random_range(0.2..1.0));
            let t = rng.random_range(0.05..5.0);
            let omega = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let lhs = psi_matrix(&a, t).unwrap() * &omega * t;
            let rhs = quadrature_oracle(&a, &omega, t);
            assert!(
                (lhs - rhs).norm() <= 1e-9,
                "psi/quadrature mismatch at n={n}, t={t}"
            );
        }
    }

    #[test]
    fn symmetric_eigs_basics() {
        assert_eq!(
            symmetric_eigs(&DMatrix::identity(3, 3)).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, -2.0]));
        assert_eq!(symmetric_eigs(&d).unwrap(), vec![-2.0, 5.0]);
    }

    #[test]
    fn symmetric_eigs_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(symmetric_eigs(&m).is_err());
    }

    #[test]
    fn symmetric_eigs_charpoly_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let raw = random_matrix(&mut rng, 6);
        let m = symmetrize(&raw);
        let eigs = symmetric_eigs(&m).unwrap();
        for l in eigs {
            let shifted = &m - DMatrix::identity(6, 6) * l;
            // normalized characteristic-polynomial residual
            let det = shifted.determinant();
            assert!(det.abs() < 1e-9 * m.norm().powi(6).max(1.0));
        }
    }

    #[test]
    fn lyapunov_diagonal_cases() {
        let f = DMatrix::<f64>::identity(2, 2) * -1.0;
        let pi = lyapunov_certificate(&f, 0.5).unwrap();
        assert!((pi - DMatrix::identity(2, 2)).norm() < 1e-12);

        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -3.0]));
        let pi = lyapunov_certificate(&f, 0.5).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.2]));
        assert!((pi - expected).norm() < 1e-12);
    }

    #[test]
    fn lyapunov_output_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let n = rng.random_range(2..=6);
            let raw = random_matrix(&mut rng, n);
            let sa = spectral_abscissa(&raw).unwrap();
            let f = raw - DMatrix::identity(n, n) * (sa.mu + 1.0);
            let mu = spectral_abscissa(&f).unwrap().mu;
            let pi = lyapunov_certificate(&f, 0.5 * mu.abs()).unwrap();
            assert!(symmetric_eigs(&pi).unwrap()[0] > 0.0);
        }
    }

    #[test]
    fn lyapunov_rejects_lambda_out_of_range() {
        let f = DMatrix::<f64>::identity(2, 2) * -1.0;
        assert!(lyapunov_certificate(&f, 1.5).is_err());
        assert!(lyapunov_certificate(&f, 0.0).is_err());
    }

    #[test]
    fn block_spectral_max_degenerate_cases() {
        let g0 = DMatrix::<f64>::zeros(2, 3);
        assert!((block_spectral_max(3.0, -1.0, &g0) - 3.0).abs() < 1e-15);
        let g1 = DMatrix::from_element(1, 1, 1.0);
        assert!((block_spectral_max(0.0, 0.0, &g1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn block_spectral_max_matches_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let p = rng.random_range(1..=8);
            let a = rng.random_range(-2.0..2.0);
            let b = rng.random_range(-2.0..2.0);
            let g = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
            let mut m = DMatrix::<f64>::zeros(n + p, n + p);
            m.view_mut((0, 0), (n, n))
                .copy_from(&(DMatrix::identity(n, n) * a));
            m.view_mut((n, n), (p, p))
                .copy_from(&(DMatrix::identity(p, p) * b));
            m.view_mut((0, n), (n, p)).copy_from(&g);
            m.view_mut((n, 0), (p, n)).copy_from(&g.transpose());
            let dense = *symmetric_eigs(&m).unwrap().last().unwrap();
            let closed = block_spectral_max(a, b, &g);
            assert!((dense - closed).abs() <= 1e-10 * (1.0 + dense.abs()));
        }
    }

    #[test]
    fn block_spectral_max_convex_in_ab() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let g = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        for _ in 0..1000 {
            let (a1, b1) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (a2, b2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let mid = block_spectral_max(0.5 * (a1 + a2), 0.5 * (b1 + b2), &g);
            let avg = 0.5 * (block_spectral_max(a1, b1, &g) + block_spectral_max(a2, b2, &g));
            assert!(mid <= avg + 1e-12);
        }
    }

    #[test]
    fn spectral_abscissa_cases() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let sa = spectral_abscissa(&d).unwrap();
        assert!((sa.mu + 1.0).abs() < 1e-12 && sa.hurwitz);

        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let sa = spectral_abscissa(&rot).unwrap();
        assert!(sa.mu.abs() < 1e-12 && !sa.hurwitz);

        // companion matrix of (s+1)(s+2)(s+0.5) = s³ + 3.5s² + 3.5s + 1
        let comp = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -3.5, -3.5],
        );
        let sa = spectral_abscissa(&comp).unwrap();
        assert!((sa.mu + 0.5).abs() < 1e-9);
    }
}
