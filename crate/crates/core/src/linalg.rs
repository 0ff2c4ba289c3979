//! Small dense complex linear algebra on top of `nalgebra`.
//!
//! Everything here works on `2n × 2n` matrices with `n ≤ 6` or so, so the
//! routines favour clarity over blocking or allocation tricks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

pub const IMAG: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// Max-entry difference relative to the larger operand, floored at one so
/// that comparisons against zero stay absolute.
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    max_abs_diff(a, b) / max_abs(a).max(max_abs(b)).max(1.0)
}

/// Scalar analogue of [`rel_diff`].
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn skew_part(m: &CMat) -> CMat {
    (m - m.adjoint()) * c(0.5)
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

/// `max|M + M†|` relative to `max(1, max|M|)`.
pub fn anti_hermitian_residual(m: &CMat) -> f64 {
    max_abs(&(m + m.adjoint())) / max_abs(m).max(1.0)
}

pub fn hermitian_residual(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint())) / max_abs(m).max(1.0)
}

pub fn unitarity_residual(u: &CMat) -> f64 {
    max_abs_diff(&(u.adjoint() * u), &identity(u.nrows()))
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a * b + b * a
}

/// `AB + BA` for even `k`, `AB − BA` for odd `k`.
pub fn parity_bracket(a: &CMat, b: &CMat, k: u32) -> CMat {
    if k % 2 == 0 {
        anticommutator(a, b)
    } else {
        commutator(a, b)
    }
}

/// `Re tr(AB)` without forming the product.
pub fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    trace_product(a, b).re
}

pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Powers `Y^0 ..= Y^max` of a square matrix.
#[derive(Debug, Clone)]
pub struct PowerTable {
    powers: Vec<CMat>,
}

impl PowerTable {
    pub fn new(y: &CMat, max: u32) -> Self {
        let mut powers = Vec::with_capacity(max as usize + 1);
        powers.push(identity(y.nrows()));
        for k in 1..=max as usize {
            let next = &powers[k - 1] * y;
            powers.push(next);
        }
        PowerTable { powers }
    }

    pub fn get(&self, k: u32) -> &CMat {
        &self.powers[k as usize]
    }

    pub fn max_power(&self) -> u32 {
        (self.powers.len() - 1) as u32
    }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted in
/// descending order with matching eigenvector columns.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let herm = hermitian_part(m);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(m.nrows(), m.ncols(), |r, col| {
        eig.eigenvectors[(r, order[col])]
    });
    (values, vectors)
}

/// Exponential of an anti-Hermitian matrix, computed through the spectral
/// decomposition of the Hermitian matrix `−iA` so the result is unitary to
/// rounding.
pub fn exp_anti_hermitian(a: &CMat) -> CMat {
    let (values, vectors) = hermitian_eigen(&(a * (-IMAG)));
    let phases = CVec::from_iterator(
        values.len(),
        values.iter().map(|&t| Complex64::from_polar(1.0, t)),
    );
    &vectors * CMat::from_diagonal(&phases) * vectors.adjoint()
}

/// Complex Schur form `M = Q T Q†` with `T` upper triangular.
pub fn schur(m: &CMat) -> Result<(CMat, CMat)> {
    let decomposition = nalgebra::linalg::Schur::try_new(m.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (q, mut t) = decomposition.unpack();
    for j in 0..t.ncols() {
        for i in (j + 1)..t.nrows() {
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    Ok((q, t))
}

pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    let (_, t) = schur(m)?;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Principal square root via the Schur method: the triangular factor is
/// square-rooted column by column, taking the principal branch on the
/// diagonal.
pub fn sqrtm(m: &CMat) -> Result<CMat> {
    let (q, t) = schur(m)?;
    let dim = t.nrows();
    let scale = max_abs(&t).max(f64::MIN_POSITIVE);
    let mut r = CMat::zeros(dim, dim);
    for i in 0..dim {
        let d = t[(i, i)];
        if d.im.abs() <= 1e-14 * scale && d.re <= 0.0 {
            return Err(Error::DegenerateSpectrum(format!(
                "eigenvalue {d} on the closed negative real axis has no principal square root"
            )));
        }
        r[(i, i)] = d.sqrt();
    }
    for j in 1..dim {
        for i in (0..j).rev() {
            let mut s = t[(i, j)];
            for k in (i + 1)..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            let denom = r[(i, i)] + r[(j, j)];
            if denom.norm() <= 1e-300 {
                return Err(Error::Singular("Schur square-root recurrence".into()));
            }
            r[(i, j)] = s / denom;
        }
    }
    Ok(&q * r * q.adjoint())
}

/// Thin real SVD `M = U diag(s) Vᵀ`, singular values descending.
///
/// Delegated to `faer`: the bidiagonal SVD in `nalgebra` returns visibly
/// wrong factors for some rank-deficient commutator maps.
pub fn real_svd(m: &RMat) -> Result<(RMat, Vec<f64>, RMat)> {
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    Ok((
        RMat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        (0..s.nrows()).map(|i| s[i]).collect(),
        RMat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    ))
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &RMat) -> f64 {
    let Ok((_, sv, _)) = real_svd(m) else {
        return f64::INFINITY;
    };
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Haar-distributed unitary: QR of a complex Ginibre matrix with the phases
/// of `diag(R)` moved into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMat {
    let z = CMat::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Anti-Hermitian matrix with standard-normal real and imaginary parts,
/// scaled by `1/√dim`.
pub fn random_anti_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMat {
    let z = CMat::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    skew_part(&z) * c(1.0 / (dim as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sqrtm_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [1, 2, 4, 8] {
            let u = random_unitary(&mut rng, dim);
            let root = sqrtm(&u).unwrap();
            assert!(max_abs_diff(&(&root * &root), &u) < 1e-12);
            assert!(unitarity_residual(&root) < 1e-12);
        }
    }

    #[test]
    fn sqrtm_of_non_normal_triangular() {
        let m = CMat::from_row_slice(2, 2, &[c(4.0), c(1.0), c(0.0), c(9.0)]);
        let root = sqrtm(&m).unwrap();
        assert!(max_abs_diff(&(&root * &root), &m) < 1e-13);
        assert!((root[(0, 0)] - c(2.0)).norm() < 1e-14);
        assert!((root[(1, 1)] - c(3.0)).norm() < 1e-14);
    }

    #[test]
    fn sqrtm_rejects_negative_eigenvalue() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(-1.0)]));
        assert!(matches!(sqrtm(&m), Err(Error::DegenerateSpectrum(_))));
    }

    #[test]
    fn exp_of_anti_hermitian_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_anti_hermitian(&mut rng, 6);
        let u = exp_anti_hermitian(&a);
        assert!(unitarity_residual(&u) < 1e-13);
        // exp(A)exp(-A) = 1
        let v = exp_anti_hermitian(&(-&a));
        assert!(max_abs_diff(&(&u * &v), &identity(6)) < 1e-13);
    }

    #[test]
    fn real_svd_reconstructs_rank_deficient_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = RMat::from_fn(12, 3, |_, _| {
            Rng::sample::<f64, _>(&mut rng, StandardNormal)
        });
        let b = RMat::from_fn(3, 8, |_, _| Rng::sample::<f64, _>(&mut rng, StandardNormal));
        let m = &a * &b;
        let (u, s, v) = real_svd(&m).unwrap();
        let rebuilt =
            &u * RMat::from_diagonal(&nalgebra::DVector::from_vec(s.clone())) * v.transpose();
        assert!((rebuilt - &m).amax() < 1e-12);
        assert!(s[3] < 1e-12 * s[0]);
        assert!((condition_number(&RMat::identity(4, 4)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hermitian_eigen_is_sorted_descending() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(3.0), c(-2.0)]));
        let (values, _) = hermitian_eigen(&m);
        assert_eq!(values, vec![3.0, 1.0, -2.0]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn principal_root_of_unitary(seed in any::<u64>(), dim in 1usize..=8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // phases strictly inside (−π, π)
                let u = exp_anti_hermitian(&(random_anti_hermitian(&mut rng, dim) * c(0.3)));
                let root = sqrtm(&u).unwrap();
                prop_assert!(max_abs_diff(&(&root * &root), &u) <= 1e-12);
                prop_assert!(unitarity_residual(&root) <= 1e-12);
            }

            #[test]
            fn svd_reconstructs(seed in any::<u64>(), rows in 1usize..=9, cols in 1usize..=9) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = RMat::from_fn(rows, cols, |_, _| Rng::sample::<f64, _>(&mut rng, StandardNormal));
                let (u, s, v) = real_svd(&m).unwrap();
                let back = &u * RMat::from_diagonal(&nalgebra::DVector::from_vec(s.clone())) * v.transpose();
                prop_assert!((back - &m).amax() <= 1e-12);
                prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}
