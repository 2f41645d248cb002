//! Complex dense linear algebra used by every other module.
//!
//! Thin layer over nalgebra's pure-Rust decompositions: SVD-based
//! pseudo-inverse and least squares, plus the rank-truncated Gram
//! factorization used by the pilot design iteration. All operations are pure
//! functions on value-semantic matrices and safe to call concurrently.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative singular-value cutoff: anything below
/// `max(rows, cols) * sigma_max * RANK_TOL_FACTOR` is treated as zero.
pub const RANK_TOL_FACTOR: f64 = 1e-12;

/// Singular value decomposition `X = U * diag(sigma) * V^H` with singular
/// values sorted in descending order and thin unitary factors.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: CMat,
    pub singular_values: Vec<f64>,
    pub v: CMat,
}

impl SvdResult {
    /// Reconstructs `U * diag(sigma) * V^H`.
    pub fn reconstruct(&self) -> CMat {
        let k = self.singular_values.len();
        let mut scaled = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate().take(k) {
            scaled.column_mut(j).scale_mut(*s);
        }
        &scaled * self.v.adjoint()
    }
}

fn ensure_finite(x: &CMat, context: &'static str) -> Result<()> {
    if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Thin SVD with descending singular values.
pub fn svd(x: &CMat) -> Result<SvdResult> {
    ensure_finite(x, "svd input")?;
    let decomposition = x.clone().svd(true, true);
    let u = decomposition.u.expect("svd requested u");
    let v_t = decomposition.v_t.expect("svd requested v_t");
    let singular_values: Vec<f64> = decomposition.singular_values.iter().copied().collect();
    Ok(SvdResult {
        u,
        singular_values,
        v: v_t.adjoint(),
    })
}

fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * RANK_TOL_FACTOR
}

/// Moore-Penrose pseudo-inverse.
///
/// Singular values below the numerical-rank cutoff are treated as zero, so
/// rank-deficient inputs yield the minimum-norm inverse of the dominant part.
pub fn pseudo_inverse(x: &CMat) -> Result<CMat> {
    let decomposition = svd(x)?;
    let sigma_max = decomposition.singular_values.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(x.nrows(), x.ncols(), sigma_max);
    // X† = V * diag(1/sigma) * U^H over the retained spectrum.
    let mut scaled_v = decomposition.v.clone();
    for (j, s) in decomposition.singular_values.iter().enumerate() {
        let inv = if *s > tol { 1.0 / s } else { 0.0 };
        scaled_v.column_mut(j).scale_mut(inv);
    }
    Ok(&scaled_v * decomposition.u.adjoint())
}

/// Minimum-norm least-squares solution of `X * B = Y`.
pub fn least_squares(x: &CMat, y: &CMat) -> Result<CMat> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "least_squares: lhs has {} rows, rhs has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(pseudo_inverse(x)? * y)
}

/// Numerical rank under the shared cutoff rule.
pub fn numerical_rank(x: &CMat) -> Result<usize> {
    let decomposition = svd(x)?;
    let sigma_max = decomposition.singular_values.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(x.nrows(), x.ncols(), sigma_max);
    Ok(decomposition.singular_values.iter().filter(|s| **s > tol).count())
}

/// Best rank-`rank_t` factor `S` (shape `rank_t x K`) with `G ~= S^H * S`.
///
/// `G` must be Hermitian within tolerance; it is symmetrized to absorb
/// round-off and negative eigenvalues are clamped to zero before factoring,
/// since the Gram-shrinkage iteration can make it slightly indefinite. The
/// result is Eckart-Young optimal among rank-`rank_t` Gram factorizations.
pub fn truncated_gram_factor(g: &CMat, rank_t: usize) -> Result<CMat> {
    ensure_finite(g, "truncated_gram_factor input")?;
    let k = g.nrows();
    if g.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "truncated_gram_factor: {}x{} is not square",
            g.nrows(),
            g.ncols()
        )));
    }
    if rank_t == 0 || rank_t > k {
        return Err(Error::InvalidArgument(format!(
            "truncated_gram_factor: rank {rank_t} outside 1..={k}"
        )));
    }
    let asym = (g - g.adjoint()).norm() / g.norm().max(1.0);
    if asym > 1e-10 {
        return Err(Error::NotHermitian { max_asymmetry: asym });
    }
    let symmetrized = (g + g.adjoint()).scale(0.5);
    let eigen = nalgebra::SymmetricEigen::new(symmetrized);
    // Descending eigenvalues, clamped to the PSD cone.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let mut factor = CMat::zeros(rank_t, k);
    for (row, &idx) in order.iter().take(rank_t).enumerate() {
        let lambda = eigen.eigenvalues[idx].max(0.0);
        let scale = lambda.sqrt();
        let v = eigen.eigenvectors.column(idx);
        for col in 0..k {
            factor[(row, col)] = v[col].conj() * scale;
        }
    }
    Ok(factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_gaussian_matrix, master_rng};

    fn rel_err(a: &CMat, b: &CMat) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn penrose_ok(x: &CMat, pinv: &CMat, tol: f64) -> bool {
        let xp = x * pinv;
        let px = pinv * x;
        let scale = x.norm().max(1.0);
        (x * &px - x).norm() / scale <= tol
            && (pinv * &xp - pinv).norm() / pinv.norm().max(1.0) <= tol
            && (&xp.adjoint() - &xp).norm() / xp.norm().max(1.0) <= tol
            && (&px.adjoint() - &px).norm() / px.norm().max(1.0) <= tol
    }

    #[test]
    fn pinv_identity() {
        let eye = CMat::identity(3, 3);
        let p = pseudo_inverse(&eye).unwrap();
        assert!(rel_err(&p, &eye) < 1e-14);
    }

    #[test]
    fn pinv_diagonal_with_zero() {
        let d = CMat::from_diagonal(&CVec::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, 0.0)]));
        let expected =
            CMat::from_diagonal(&CVec::from_vec(vec![C64::new(0.5, 0.0), C64::new(0.0, 0.0)]));
        let p = pseudo_inverse(&d).unwrap();
        assert!((p - expected).norm() < 1e-14);
    }

    #[test]
    fn pinv_random_full_rank_penrose() {
        let mut rng = master_rng(101);
        let x = complex_gaussian_matrix(4, 6, 1.0, &mut rng);
        let p = pseudo_inverse(&x).unwrap();
        assert!((&x * &p * &x - &x).norm() / x.norm() < 1e-10);
        assert!(penrose_ok(&x, &p, 1e-10));
    }

    #[test]
    fn pinv_all_shape_regimes() {
        let mut rng = master_rng(77);
        for (rows, cols) in [(8usize, 3usize), (5, 5), (3, 9)] {
            let x = complex_gaussian_matrix(rows, cols, 1.0, &mut rng);
            let p = pseudo_inverse(&x).unwrap();
            assert!(penrose_ok(&x, &p, 1e-8), "{rows}x{cols}");
        }
        // Rank-deficient: product of thin factors.
        let a = complex_gaussian_matrix(7, 2, 1.0, &mut rng);
        let b = complex_gaussian_matrix(2, 6, 1.0, &mut rng);
        let x = &a * &b;
        let p = pseudo_inverse(&x).unwrap();
        assert!(penrose_ok(&x, &p, 1e-8), "rank-deficient 7x6");
        assert_eq!(numerical_rank(&x).unwrap(), 2);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let mut x = CMat::identity(2, 2);
        x[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert!(matches!(pseudo_inverse(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn least_squares_identity_passthrough() {
        let eye = CMat::identity(4, 4);
        let mut rng = master_rng(5);
        let y = complex_gaussian_matrix(4, 2, 1.0, &mut rng);
        let sol = least_squares(&eye, &y).unwrap();
        assert!(rel_err(&sol, &y) < 1e-14);
    }

    #[test]
    fn least_squares_overdetermined_consistent() {
        let mut rng = master_rng(6);
        let x = complex_gaussian_matrix(8, 3, 1.0, &mut rng);
        let beta = complex_gaussian_matrix(3, 1, 1.0, &mut rng);
        let y = &x * &beta;
        let sol = least_squares(&x, &y).unwrap();
        assert!((&x * &sol - &y).norm() < 1e-10);
        assert!(rel_err(&sol, &beta) < 1e-10);
    }

    #[test]
    fn least_squares_underdetermined_minimum_norm() {
        let mut rng = master_rng(7);
        let x = complex_gaussian_matrix(3, 7, 1.0, &mut rng);
        let y = complex_gaussian_matrix(3, 1, 1.0, &mut rng);
        let sol = least_squares(&x, &y).unwrap();
        assert!((&x * &sol - &y).norm() < 1e-10);
        // Any feasible candidate sol + (I - X†X) z has no smaller norm.
        let p = pseudo_inverse(&x).unwrap();
        let null_proj = CMat::identity(7, 7) - &p * &x;
        for trial in 0..10 {
            let z = complex_gaussian_matrix(7, 1, 1.0, &mut master_rng(100 + trial));
            let candidate = &sol + &null_proj * z;
            assert!((&x * &candidate - &y).norm() < 1e-9);
            assert!(candidate.norm() + 1e-12 >= sol.norm());
        }
    }

    #[test]
    fn least_squares_rejects_dimension_mismatch() {
        let x = CMat::identity(3, 3);
        let y = CMat::identity(4, 4);
        assert!(matches!(least_squares(&x, &y), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn svd_reconstruction_small_and_large() {
        let mut rng = master_rng(42);
        for (rows, cols) in [(5usize, 3usize), (16, 16), (12, 40)] {
            let x = complex_gaussian_matrix(rows, cols, 1.0, &mut rng);
            let s = svd(&x).unwrap();
            assert!(rel_err(&s.reconstruct(), &x) < 1e-10, "{rows}x{cols}");
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.singular_values.iter().all(|v| *v >= 0.0));
        }
        let x = complex_gaussian_matrix(256, 1024, 1.0, &mut rng);
        let s = svd(&x).unwrap();
        assert!(rel_err(&s.reconstruct(), &x) < 1e-10, "256x1024");
    }

    #[test]
    fn gram_factor_identity() {
        let eye = CMat::identity(3, 3);
        let s = truncated_gram_factor(&eye, 3).unwrap();
        assert!((s.adjoint() * &s - &eye).norm() < 1e-12);
    }

    #[test]
    fn gram_factor_rank_one_exact() {
        let mut rng = master_rng(13);
        let v = complex_gaussian_matrix(5, 1, 1.0, &mut rng);
        let g = &v * v.adjoint();
        let s = truncated_gram_factor(&g, 1).unwrap();
        assert_eq!(s.nrows(), 1);
        assert!((s.adjoint() * &s - &g).norm() < 1e-10);
    }

    #[test]
    fn gram_factor_is_eckart_young_optimal() {
        // PSD matrix with known spectrum: the discarded eigenvalues are the
        // oracle for the optimal truncation error.
        let mut rng = master_rng(21);
        let raw = complex_gaussian_matrix(6, 6, 1.0, &mut rng);
        let q = raw.qr().q();
        let eigenvalues = [5.0, 3.0, 1.5, 0.7, 0.2, 0.05];
        let lambda = CMat::from_diagonal(&CVec::from_iterator(
            6,
            eigenvalues.iter().map(|l| C64::new(*l, 0.0)),
        ));
        let g = &q * lambda * q.adjoint();
        let s = truncated_gram_factor(&g, 2).unwrap();
        let achieved = (s.adjoint() * &s - &g).norm();
        let optimal: f64 = eigenvalues[2..].iter().map(|l| l * l).sum::<f64>().sqrt();
        assert!((achieved - optimal).abs() < 1e-10, "achieved {achieved}, optimal {optimal}");
    }

    #[test]
    fn gram_factor_rejects_non_hermitian() {
        let mut rng = master_rng(3);
        let x = complex_gaussian_matrix(4, 4, 1.0, &mut rng);
        assert!(matches!(
            truncated_gram_factor(&x, 2),
            Err(Error::NotHermitian { .. })
        ));
    }
}
