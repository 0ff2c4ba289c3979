//! Momentum map, orbit membership, gauge action and spectral extraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{c_matrix, gamma_unchecked, half_dim, plus_part};
use crate::crosssection::{ModelParams, PhasePoint};
use crate::error::{Error, Result};
use crate::linalg::{
    c, hermitian_eigen, hermitian_residual, identity, max_abs, random_unitary, unitarity_residual,
    CMat, IMAG,
};

/// Ratio of the second to the largest eigenvalue below which the orbit
/// matrix counts as rank one.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Residual tolerance for the remaining orbit-membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Tolerance for accepting a gauge transformation as an element of `G₊`.
pub const G_PLUS_TOL: f64 = 1e-10;

pub(crate) fn inverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("group element is not invertible".into()))
}

/// `((yYy⁻¹)₊ + υ^ℓ, −Y₊ + υ^r)`.
pub fn momentum_map(x: &PhasePoint) -> Result<(CMat, CMat)> {
    let y_inv = inverse(&x.group)?;
    let left = plus_part(&(&x.group * &x.fiber * y_inv))? + &x.orbit_left;
    let right = -plus_part(&x.fiber)? + &x.orbit_right;
    Ok((left, right))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitMembership {
    pub passed: bool,
    /// Second-largest over largest eigenvalue of the reconstructed `VV†`.
    pub rank_ratio: f64,
    /// Most negative eigenvalue relative to the largest.
    pub negativity: f64,
    pub hermitian_residual: f64,
    /// `|tr W − 2n| / 2n`.
    pub trace_error: f64,
    /// `max|CV + V| / |V|` for the recovered range vector.
    pub reflection_residual: f64,
}

/// Test whether `υ` lies on the orbit `{iμ(VV† − 1) + i(μ − ν)C : |V|² = 2n,
/// CV + V = 0}`.
pub fn orbit_membership(upsilon: &CMat, p: &ModelParams) -> Result<OrbitMembership> {
    if p.mu == 0.0 {
        return Err(Error::Unsupported("orbit membership needs μ ≠ 0".into()));
    }
    let n = half_dim(upsilon)?;
    let w =
        (upsilon - c_matrix(n) * (IMAG * (p.mu - p.nu))) * (IMAG * p.mu).inv() + identity(2 * n);
    let herm = hermitian_residual(&w);
    let (values, vectors) = hermitian_eigen(&w);
    let top = values[0];
    let scale = top.abs().max(f64::MIN_POSITIVE);
    let rank_ratio = if values.len() > 1 {
        values[1].abs() / scale
    } else {
        0.0
    };
    let negativity = (-values[values.len() - 1]).max(0.0) / scale;
    let trace = w.trace().re;
    let trace_error = (trace - 2.0 * n as f64).abs() / (2.0 * n as f64);
    let v = vectors.column(0) * c(top.max(0.0).sqrt());
    let reflection_residual = (&c_matrix(n) * &v + &v).camax() / v.norm().max(f64::MIN_POSITIVE);
    let passed = top > 0.0
        && rank_ratio <= RANK_THRESHOLD
        && negativity <= RANK_THRESHOLD
        && herm <= MEMBERSHIP_TOL
        && trace_error <= MEMBERSHIP_TOL
        && reflection_residual <= MEMBERSHIP_TOL;
    Ok(OrbitMembership {
        passed,
        rank_ratio,
        negativity,
        hermitian_residual: herm,
        trace_error,
        reflection_residual,
    })
}

/// `(unitarity residual, Γ residual)` of a candidate `G₊` element.
pub fn g_plus_residuals(g: &CMat) -> Result<(f64, f64)> {
    let n = half_dim(g)?;
    Ok((unitarity_residual(g), max_abs(&(g - gamma_unchecked(g, n)))))
}

fn check_g_plus(g: &CMat) -> Result<()> {
    let (unitarity, gamma) = g_plus_residuals(g)?;
    if unitarity > G_PLUS_TOL || gamma > G_PLUS_TOL {
        return Err(Error::NotInFixedGroup { unitarity, gamma });
    }
    Ok(())
}

/// `(g_L y g_R⁻¹, g_R Y g_R⁻¹, g_L υ^ℓ g_L⁻¹, υ^r)`.
pub fn gauge_act(g_left: &CMat, g_right: &CMat, x: &PhasePoint) -> Result<PhasePoint> {
    check_g_plus(g_left)?;
    check_g_plus(g_right)?;
    if g_left.shape() != x.group.shape() || g_right.shape() != x.group.shape() {
        return Err(Error::DimensionMismatch(
            "gauge elements vs phase point".into(),
        ));
    }
    let (l_inv, r_inv) = (g_left.adjoint(), g_right.adjoint());
    Ok(PhasePoint {
        group: g_left * &x.group * &r_inv,
        fiber: g_right * &x.fiber * &r_inv,
        orbit_left: g_left * &x.orbit_left * &l_inv,
        orbit_right: x.orbit_right.clone(),
    })
}

/// `½[[u₁ + u₂, u₁ − u₂], [u₁ − u₂, u₁ + u₂]]`, the image of `(u₁, u₂)` in
/// the fixed-point subgroup.
pub fn embed_g_plus(u1: &CMat, u2: &CMat) -> CMat {
    let n = u1.nrows();
    let (s, d) = ((u1 + u2) * c(0.5), (u1 - u2) * c(0.5));
    let mut g = CMat::zeros(2 * n, 2 * n);
    g.view_mut((0, 0), (n, n)).copy_from(&s);
    g.view_mut((n, n), (n, n)).copy_from(&s);
    g.view_mut((0, n), (n, n)).copy_from(&d);
    g.view_mut((n, 0), (n, n)).copy_from(&d);
    g
}

pub fn random_g_plus<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let u1 = random_unitary(rng, n);
    let u2 = random_unitary(rng, n);
    embed_g_plus(&u1, &u2)
}

/// Positive eigenvalues of `−iY`, strictly decreasing.
pub fn spectral_lambda(fiber: &CMat) -> Result<Vec<f64>> {
    let n = half_dim(fiber)?;
    let (values, _) = hermitian_eigen(&(fiber * (-IMAG)));
    let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    for i in 0..n {
        let mismatch = (values[i] + values[2 * n - 1 - i]).abs();
        if mismatch > tol {
            return Err(Error::DegenerateSpectrum(format!(
                "spectrum not symmetric about zero (mismatch {mismatch:.3e})"
            )));
        }
    }
    let positive: Vec<f64> = values[..n].to_vec();
    if positive[n - 1] <= tol {
        return Err(Error::DegenerateSpectrum("zero eigenvalue".into()));
    }
    if positive.windows(2).any(|w| w[0] - w[1] <= tol) {
        return Err(Error::DegenerateSpectrum("eigenvalue collision".into()));
    }
    Ok(positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crosssection::{build_point, DualCoordinates};
    use crate::linalg::{max_abs_diff, random_anti_hermitian, CVec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (DualCoordinates, ModelParams) {
        (
            DualCoordinates::new(vec![4.5, 3.0, 1.6], vec![0.7, 2.1, -1.2]),
            ModelParams::new(3, 0.3, 1.1, 0.6).unwrap(),
        )
    }

    #[test]
    fn momentum_map_vanishes_on_slice() {
        let (coords, p) = sample();
        let x = build_point(&coords, &p).unwrap();
        let (l, r) = momentum_map(&x).unwrap();
        assert!(max_abs(&l) <= 1e-9 && max_abs(&r) <= 1e-9);
    }

    #[test]
    fn momentum_map_nonzero_on_generic_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PhasePoint {
            group: random_unitary(&mut rng, 4),
            fiber: random_anti_hermitian(&mut rng, 4),
            orbit_left: plus_part(&random_anti_hermitian(&mut rng, 4)).unwrap(),
            orbit_right: c_matrix(2) * IMAG,
        };
        let (l, r) = momentum_map(&x).unwrap();
        assert!(max_abs(&l) > 1e-3 && max_abs(&r) > 1e-3);
    }

    #[test]
    fn momentum_map_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = PhasePoint {
            group: random_unitary(&mut rng, 6),
            fiber: random_anti_hermitian(&mut rng, 6),
            orbit_left: plus_part(&random_anti_hermitian(&mut rng, 6)).unwrap(),
            orbit_right: c_matrix(3) * (IMAG * 0.4),
        };
        let gl = random_g_plus(&mut rng, 3);
        let gr = random_g_plus(&mut rng, 3);
        let (l0, r0) = momentum_map(&x).unwrap();
        let (l1, r1) = momentum_map(&gauge_act(&gl, &gr, &x).unwrap()).unwrap();
        assert!(max_abs_diff(&l1, &(&gl * l0 * gl.adjoint())) < 1e-12);
        assert!(max_abs_diff(&r1, &(&gr * r0 * gr.adjoint())) < 1e-12);
    }

    #[test]
    fn orbit_membership_cases() {
        let (coords, p) = sample();
        let x = build_point(&coords, &p).unwrap();
        let m = orbit_membership(&x.orbit_left, &p).unwrap();
        assert!(m.passed, "{m:?}");
        assert!(!orbit_membership(&x.orbit_right, &p).unwrap().passed);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_g_plus(&mut rng, 3);
        let conj = &g * &x.orbit_left * g.adjoint();
        assert!(orbit_membership(&conj, &p).unwrap().passed);

        let bad = ModelParams { mu: 0.0, ..p };
        assert!(matches!(
            orbit_membership(&x.orbit_left, &bad),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gauge_action_composes_and_preserves_level_set() {
        let (coords, p) = sample();
        let x = build_point(&coords, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = identity(6);
        assert_eq!(gauge_act(&one, &one, &x).unwrap(), x);
        let (g1, g2, h1, h2) = (
            random_g_plus(&mut rng, 3),
            random_g_plus(&mut rng, 3),
            random_g_plus(&mut rng, 3),
            random_g_plus(&mut rng, 3),
        );
        let twice = gauge_act(&h1, &h2, &gauge_act(&g1, &g2, &x).unwrap()).unwrap();
        let once = gauge_act(&(&h1 * &g1), &(&h2 * &g2), &x).unwrap();
        assert!(max_abs_diff(&twice.group, &once.group) < 1e-13);
        assert!(max_abs_diff(&twice.fiber, &once.fiber) < 1e-13);
        assert!(max_abs_diff(&twice.orbit_left, &once.orbit_left) < 1e-13);
        let (l, r) = momentum_map(&once).unwrap();
        assert!(max_abs(&l) <= 1e-9 && max_abs(&r) <= 1e-9);
    }

    #[test]
    fn gauge_action_rejects_non_fixed_elements() {
        let (coords, p) = sample();
        let x = build_point(&coords, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let generic = random_unitary(&mut rng, 6);
        assert!(matches!(
            gauge_act(&generic, &identity(6), &x),
            Err(Error::NotInFixedGroup { .. })
        ));
    }

    #[test]
    fn spectral_lambda_cases() {
        let y = CMat::from_diagonal(&CVec::from_vec(vec![
            IMAG * 3.0,
            IMAG * 1.0,
            IMAG * -3.0,
            IMAG * -1.0,
        ]));
        let l = spectral_lambda(&y).unwrap();
        assert!((l[0] - 3.0).abs() < 1e-14 && (l[1] - 1.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_unitary(&mut rng, 4);
        let l2 = spectral_lambda(&(&g * &y * g.adjoint())).unwrap();
        assert!((l2[0] - 3.0).abs() < 1e-12 && (l2[1] - 1.0).abs() < 1e-12);

        let asym = CMat::from_diagonal(&CVec::from_vec(vec![IMAG * 3.0, IMAG * -1.0]));
        assert!(spectral_lambda(&asym).is_err());
        let collide = CMat::from_diagonal(&CVec::from_vec(vec![
            IMAG * 2.0,
            IMAG * 2.0,
            IMAG * -2.0,
            IMAG * -2.0,
        ]));
        assert!(spectral_lambda(&collide).is_err());
    }
}
