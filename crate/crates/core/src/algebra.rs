//! Lie-algebra utilities for u(2n) with the block involution `Γ(M) = C M C`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    anti_hermitian_residual, c, commutator, max_abs, re_trace_product, real_svd, trace_product,
    CMat, RMat, IMAG,
};

/// Relative residual below which an increment counts as orbit-tangent.
pub const TANGENT_TOL: f64 = 1e-8;

/// Imaginary residue of `tr(Y1 Y2)` tolerated relative to the matrix scale.
const TRACE_IMAG_TOL: f64 = 1e-12;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_CUTOFF: f64 = 1e-10;

/// Half the side length of an even square matrix.
pub fn half_dim(m: &CMat) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 || m.nrows() % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "expected a non-empty even square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows() / 2)
}

pub(crate) fn same_shape(a: &CMat, b: &CMat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `[[0, 1], [1, 0]]` in `n × n` blocks.
pub fn c_matrix(n: usize) -> CMat {
    CMat::from_fn(2 * n, 2 * n, |i, j| {
        if (i + n == j) || (j + n == i) {
            c(1.0)
        } else {
            c(0.0)
        }
    })
}

/// `C M C`, computed as a block swap.
pub fn gamma(m: &CMat) -> Result<CMat> {
    let n = half_dim(m)?;
    Ok(gamma_unchecked(m, n))
}

pub(crate) fn gamma_unchecked(m: &CMat, n: usize) -> CMat {
    CMat::from_fn(2 * n, 2 * n, |i, j| {
        m[((i + n) % (2 * n), (j + n) % (2 * n))]
    })
}

/// Γ-even and Γ-odd parts.
pub fn split_pm(y: &CMat) -> Result<(CMat, CMat)> {
    let g = gamma(y)?;
    Ok(((y + &g) * c(0.5), (y - &g) * c(0.5)))
}

pub fn plus_part(y: &CMat) -> Result<CMat> {
    Ok(split_pm(y)?.0)
}

/// `tr(Y1 Y2)` for anti-Hermitian arguments, asserting the result is real.
pub fn trace_form(y1: &CMat, y2: &CMat) -> Result<f64> {
    half_dim(y1)?;
    same_shape(y1, y2)?;
    let t = trace_product(y1, y2);
    let scale = y1.norm() * y2.norm();
    let residue = t.im.abs() / scale.max(1.0);
    if residue > TRACE_IMAG_TOL {
        return Err(Error::NotAntiHermitian { residual: residue });
    }
    Ok(t.re)
}

/// An anti-Hermitian, Γ-fixed matrix: a point of a `G₊` coadjoint orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitElement(CMat);

impl OrbitElement {
    pub fn new(value: CMat) -> Result<Self> {
        let n = half_dim(&value)?;
        let skew = anti_hermitian_residual(&value);
        if skew > 1e-10 {
            return Err(Error::NotAntiHermitian { residual: skew });
        }
        let odd = max_abs(&(&value - gamma_unchecked(&value, n))) / max_abs(&value).max(1.0);
        if odd > 1e-10 {
            return Err(Error::Constraint(format!(
                "orbit element is not Γ-fixed (residual {odd:.3e})"
            )));
        }
        Ok(OrbitElement(value))
    }

    pub fn value(&self) -> &CMat {
        &self.0
    }

    pub fn into_inner(self) -> CMat {
        self.0
    }
}

/// Real basis of the Γ-fixed subalgebra `{[[a, b], [b, a]] : a, b ∈ u(n)}`,
/// of real dimension `2n²`.
pub fn g_plus_basis(n: usize) -> Vec<CMat> {
    let mut u_n = Vec::with_capacity(n * n);
    for i in 0..n {
        let mut e = CMat::zeros(n, n);
        e[(i, i)] = IMAG;
        u_n.push(e);
        for j in (i + 1)..n {
            let mut re = CMat::zeros(n, n);
            re[(i, j)] = c(1.0);
            re[(j, i)] = c(-1.0);
            u_n.push(re);
            let mut im = CMat::zeros(n, n);
            im[(i, j)] = IMAG;
            im[(j, i)] = IMAG;
            u_n.push(im);
        }
    }
    let mut basis = Vec::with_capacity(2 * n * n);
    for off_diagonal in [false, true] {
        for e in &u_n {
            let mut m = CMat::zeros(2 * n, 2 * n);
            let (r, s) = if off_diagonal { (0, n) } else { (0, 0) };
            m.view_mut((r, s), (n, n)).copy_from(e);
            m.view_mut((n - r, n - s), (n, n)).copy_from(e);
            basis.push(m);
        }
    }
    basis
}

fn realify(m: &CMat) -> DVector<f64> {
    let len = m.len();
    DVector::from_fn(2 * len, |i, _| {
        if i < len {
            m.as_slice()[i].re
        } else {
            m.as_slice()[i - len].im
        }
    })
}

/// Least-squares inverse of `D ↦ [D, υ]` restricted to `𝔊₊`.
///
/// The commutator map is rank-deficient (its kernel is the stabilizer of υ),
/// so it is factored once by SVD and applied as a truncated pseudoinverse,
/// which yields the minimum-norm representative.
#[derive(Debug, Clone)]
pub struct OrbitTangentSolver {
    upsilon: CMat,
    basis: Vec<CMat>,
    left: RMat,
    singular_values: Vec<f64>,
    right: RMat,
    cutoff: f64,
    tol: f64,
}

impl OrbitTangentSolver {
    pub fn new(upsilon: &CMat) -> Result<Self> {
        Self::with_tolerance(upsilon, TANGENT_TOL)
    }

    pub fn with_tolerance(upsilon: &CMat, tol: f64) -> Result<Self> {
        let n = half_dim(upsilon)?;
        let basis = g_plus_basis(n);
        let rows = 2 * upsilon.len();
        let mut map = DMatrix::<f64>::zeros(rows, basis.len());
        for (j, b) in basis.iter().enumerate() {
            map.set_column(j, &realify(&commutator(b, upsilon)));
        }
        let (left, singular_values, right) = real_svd(&map)?;
        // ‖υ‖ floors the cutoff so a numerically zero map has rank zero
        let top = singular_values
            .iter()
            .cloned()
            .fold(max_abs(upsilon), f64::max);
        Ok(OrbitTangentSolver {
            upsilon: upsilon.clone(),
            basis,
            left,
            singular_values,
            right,
            cutoff: top * RANK_CUTOFF,
            tol,
        })
    }

    pub fn upsilon(&self) -> &CMat {
        &self.upsilon
    }

    /// Numerical rank of the commutator map, i.e. the orbit dimension.
    pub fn rank(&self) -> usize {
        self.singular_values
            .iter()
            .filter(|&&s| s > self.cutoff)
            .count()
    }

    fn combine(&self, coeffs: &DVector<f64>) -> CMat {
        let dim = self.upsilon.nrows();
        let mut d = CMat::zeros(dim, dim);
        for (b, &x) in self.basis.iter().zip(coeffs.iter()) {
            if x != 0.0 {
                d += b * c(x);
            }
        }
        d
    }

    /// Minimum-norm `D ∈ 𝔊₊` with `[D, υ] ≈ δυ`, plus the residual relative
    /// to `max(‖δυ‖, 1)`.
    pub fn solve_unchecked(&self, delta: &CMat) -> Result<(CMat, f64)> {
        same_shape(delta, &self.upsilon)?;
        let rhs = realify(delta);
        let rhs_norm = rhs.norm();
        if rhs_norm == 0.0 {
            let dim = self.upsilon.nrows();
            return Ok((CMat::zeros(dim, dim), 0.0));
        }
        let projected = self.left.transpose() * &rhs;
        let mut scaled = DVector::zeros(projected.len());
        for (i, &s) in self.singular_values.iter().enumerate() {
            if s > self.cutoff {
                scaled[i] = projected[i] / s;
            }
        }
        let coeffs = &self.right * scaled;
        let d = self.combine(&coeffs);
        // floored at one, like every other relative comparison here
        let residual = (realify(&commutator(&d, &self.upsilon)) - rhs).norm() / rhs_norm.max(1.0);
        Ok((d, residual))
    }

    /// As [`solve_unchecked`](Self::solve_unchecked), rejecting increments
    /// that are not tangent to the orbit.
    pub fn solve(&self, delta: &CMat) -> Result<CMat> {
        let (d, residual) = self.solve_unchecked(delta)?;
        if residual > self.tol {
            return Err(Error::NotTangent { residual });
        }
        Ok(d)
    }

    /// Elements of `𝔊₊` commuting with υ (right singular vectors of the
    /// truncated part of the spectrum).
    pub fn stabilizer(&self) -> Vec<CMat> {
        let mut out = Vec::new();
        for i in 0..self.right.ncols() {
            let s = self.singular_values.get(i).copied().unwrap_or(0.0);
            if s <= self.cutoff {
                out.push(self.combine(&self.right.column(i).into_owned()));
            }
        }
        out
    }

    /// `⟨[D, D′], υ⟩` for already-solved representatives.
    pub fn pairing_of(&self, d: &CMat, d_prime: &CMat) -> f64 {
        re_trace_product(&commutator(d, d_prime), &self.upsilon)
    }

    pub fn pairing(&self, delta: &CMat, delta_prime: &CMat) -> Result<f64> {
        let d = self.solve(delta)?;
        let d_prime = self.solve(delta_prime)?;
        Ok(self.pairing_of(&d, &d_prime))
    }
}

/// Kirillov–Kostant–Souriau pairing of two orbit-tangent increments at υ.
pub fn kks_pairing(upsilon: &OrbitElement, delta: &CMat, delta_prime: &CMat) -> Result<f64> {
    OrbitTangentSolver::new(upsilon.value())?.pairing(delta, delta_prime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_abs_diff, random_anti_hermitian, random_unitary, CVec};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_orbit_point(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        // υ = iμ(VV† − 1) + i(μ − ν)C with CV + V = 0
        let (mu, nu) = (0.3, 1.1);
        let w = random_unitary(rng, n).column(0).into_owned();
        let mut v = CVec::zeros(2 * n);
        for i in 0..n {
            v[i] = w[i];
            v[n + i] = -w[i];
        }
        v *= c((n as f64).sqrt());
        (&v * v.adjoint() - identity(2 * n)) * (IMAG * mu) + c_matrix(n) * (IMAG * (mu - nu))
    }

    #[test]
    fn trace_form_examples() {
        for n in 1..4 {
            let i_one = identity(2 * n) * IMAG;
            assert!((trace_form(&i_one, &i_one).unwrap() + 2.0 * n as f64).abs() < 1e-14);
            let ic = c_matrix(n) * IMAG;
            assert!((trace_form(&ic, &ic).unwrap() + 2.0 * n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_form_is_ad_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_anti_hermitian(&mut rng, 6);
        let b = random_anti_hermitian(&mut rng, 6);
        let g = random_unitary(&mut rng, 6);
        let (ga, gb) = (&g * &a * g.adjoint(), &g * &b * g.adjoint());
        let lhs = trace_form(&ga, &gb).unwrap();
        assert!((lhs - trace_form(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn trace_form_rejects_bad_input() {
        let a = identity(4) * IMAG;
        let h = identity(4) * IMAG * c(3.0);
        let hermitian = identity(4);
        assert!(matches!(
            trace_form(&a, &hermitian),
            Err(Error::NotAntiHermitian { .. })
        ));
        assert!(matches!(
            trace_form(&a, &identity(2)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(trace_form(&a, &h).is_ok());
        assert!(matches!(
            trace_form(&identity(3), &identity(3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn c_matrix_invariants() {
        let cm = c_matrix(3);
        assert_eq!(cm, cm.adjoint());
        assert!(max_abs_diff(&(&cm * &cm), &identity(6)) == 0.0);
        assert_eq!(cm.trace(), c(0.0));
    }

    #[test]
    fn gamma_examples() {
        let cm = c_matrix(2);
        assert_eq!(gamma(&cm).unwrap(), cm);
        let d = DVector::from_vec(vec![c(1.5), c(-0.5), c(-1.5), c(0.5)]);
        let flipped = DVector::from_vec(vec![c(-1.5), c(0.5), c(1.5), c(-0.5)]);
        assert_eq!(
            gamma(&CMat::from_diagonal(&d)).unwrap(),
            CMat::from_diagonal(&flipped)
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_anti_hermitian(&mut rng, 8) + identity(8) * c(0.3);
        assert!(max_abs_diff(&gamma(&gamma(&m).unwrap()).unwrap(), &m) <= 1e-15);
        assert!(max_abs_diff(&gamma(&m).unwrap(), &(&c_matrix(4) * &m * c_matrix(4))) == 0.0);
    }

    #[test]
    fn split_pm_examples() {
        let ic = c_matrix(2) * IMAG;
        let (p, m) = split_pm(&ic).unwrap();
        assert_eq!(p, ic);
        assert!(max_abs(&m) == 0.0);

        let diag = CMat::from_diagonal(&DVector::from_vec(vec![
            IMAG * 2.0,
            IMAG * 1.0,
            IMAG * -2.0,
            IMAG * -1.0,
        ]));
        let (p, m) = split_pm(&diag).unwrap();
        assert!(max_abs(&p) == 0.0);
        assert_eq!(m, diag);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_anti_hermitian(&mut rng, 6);
        let (p, m) = split_pm(&y).unwrap();
        assert!(max_abs_diff(&(&p + &m), &y) <= 1e-15);
        assert!(max_abs_diff(&gamma(&p).unwrap(), &p) <= 1e-15);
        assert!(max_abs_diff(&gamma(&m).unwrap(), &(-&m)) <= 1e-15);
    }

    #[test]
    fn g_plus_basis_spans_fixed_subalgebra() {
        for n in 1..4 {
            let basis = g_plus_basis(n);
            assert_eq!(basis.len(), 2 * n * n);
            for b in &basis {
                assert!(anti_hermitian_residual(b) == 0.0);
                assert_eq!(&gamma(b).unwrap(), b);
            }
        }
    }

    #[test]
    fn orbit_solver_rank_matches_orbit_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..5 {
            let u = random_orbit_point(&mut rng, n);
            let solver = OrbitTangentSolver::new(&u).unwrap();
            assert_eq!(solver.rank(), 2 * (n - 1));
        }
    }

    #[test]
    fn kks_pairing_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 3;
        let u = random_orbit_point(&mut rng, n);
        let solver = OrbitTangentSolver::new(&u).unwrap();
        let tangent = |rng: &mut ChaCha8Rng| {
            let d = plus_part(&random_anti_hermitian(rng, 2 * n)).unwrap();
            commutator(&d, &u)
        };
        let (a, b, e) = (tangent(&mut rng), tangent(&mut rng), tangent(&mut rng));
        let zero = CMat::zeros(2 * n, 2 * n);
        assert_eq!(solver.pairing(&zero, &b).unwrap(), 0.0);
        let ab = solver.pairing(&a, &b).unwrap();
        assert!((ab + solver.pairing(&b, &a).unwrap()).abs() < 1e-12);
        let lin = solver.pairing(&(&a * c(2.0) + &e), &b).unwrap();
        assert!((lin - 2.0 * ab - solver.pairing(&e, &b).unwrap()).abs() < 1e-12);

        let d = solver.solve(&a).unwrap();
        let d_prime = solver.solve(&b).unwrap();
        let stab = solver.stabilizer();
        assert!(!stab.is_empty());
        for s in &stab {
            assert!(max_abs(&commutator(s, &u)) < 1e-10);
            let shifted = solver.pairing_of(&(&d + s), &d_prime);
            assert!((shifted - ab).abs() < 1e-12);
        }
        let via_free_fn = kks_pairing(&OrbitElement::new(u.clone()).unwrap(), &a, &b).unwrap();
        assert!((via_free_fn - ab).abs() < 1e-14);
    }

    #[test]
    fn non_tangent_increment_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_orbit_point(&mut rng, 2);
        let solver = OrbitTangentSolver::new(&u).unwrap();
        let off = random_anti_hermitian(&mut rng, 4);
        assert!(matches!(solver.solve(&off), Err(Error::NotTangent { .. })));
    }

    #[test]
    fn orbit_element_validation() {
        assert!(OrbitElement::new(c_matrix(2) * IMAG).is_ok());
        let diag = CMat::from_diagonal(&DVector::from_vec(vec![IMAG, IMAG * 2.0]));
        assert!(OrbitElement::new(diag).is_err());
        assert!(OrbitElement::new(c_matrix(2)).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reflection_split(seed in any::<u64>(), n in 1usize..=4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y = random_anti_hermitian(&mut rng, 2 * n);
                prop_assert_eq!(gamma(&gamma(&y).unwrap()).unwrap(), y.clone());
                let (plus, minus) = split_pm(&y).unwrap();
                prop_assert!(max_abs_diff(&(&plus + &minus), &y) <= 1e-15);
                prop_assert!(max_abs_diff(&gamma(&plus).unwrap(), &plus) == 0.0);
                prop_assert!(max_abs_diff(&gamma(&minus).unwrap(), &(-&minus)) == 0.0);
                let z = random_anti_hermitian(&mut rng, 2 * n);
                let (a, b) = (trace_form(&y, &z).unwrap(), trace_form(&z, &y).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
