//! The gauge slice: from dual coordinates `(λ, ϑ)` to a point of the
//! extended phase space on the zero level of the momentum map.
//!
//! The chain is `h → F → A → B → q → y → V → υ^ℓ`; [`CrossSection`] keeps
//! every intermediate so structure checks can inspect them.

use num_complex::Complex64 as Complex;
use serde::{Deserialize, Serialize};

use crate::algebra::{c_matrix, gamma_unchecked, half_dim};
use crate::error::{Error, Result};
use crate::fault::Faults;
use crate::linalg::{
    anti_hermitian_residual, c, eigenvalues, identity, max_abs, sqrtm, unitarity_residual, CMat,
    CVec, IMAG,
};

/// Default strictness margin for the domain inequalities.
pub const DOMAIN_MARGIN: f64 = 1e-8;

/// Tolerance for pairing eigenphases of `B` into `±2q`.
pub const PHASE_PAIRING_TOL: f64 = 1e-8;

/// Constraint residual on `V` above which the chain is considered broken.
pub const V_CONSTRAINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub mu: f64,
    pub nu: f64,
    pub kappa: f64,
}

impl ModelParams {
    pub fn new(n: usize, mu: f64, nu: f64, kappa: f64) -> Result<Self> {
        let p = ModelParams { n, mu, nu, kappa };
        p.validate()?;
        Ok(p)
    }

    /// `n ≥ 1`, `μ > 0`, `ν > |κ| ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be positive".into()));
        }
        if ![self.mu, self.nu, self.kappa].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("couplings must be finite".into()));
        }
        if self.mu == 0.0 {
            return Err(Error::Unsupported("μ = 0".into()));
        }
        if self.mu < 0.0 {
            return Err(Error::InvalidParams(format!(
                "μ = {} must be positive",
                self.mu
            )));
        }
        if self.nu <= self.kappa.abs() {
            return Err(Error::InvalidParams(format!(
                "need ν > |κ|, got ν = {}, κ = {}",
                self.nu, self.kappa
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCoordinates {
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
}

impl DualCoordinates {
    pub fn new(lambda: Vec<f64>, theta: Vec<f64>) -> Self {
        DualCoordinates { lambda, theta }
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        self.validate_with_margin(p, DOMAIN_MARGIN)
    }

    /// Strict domain inequalities, each required to hold with slack
    /// `margin`:
    /// `λ_a − λ_{a+1} > 2μ`, `λ_n > ν`, `λ_n > |κ|`, and `λ_a ≠ μ`
    /// (the last keeps the `A` denominators away from their removable zero).
    pub fn validate_with_margin(&self, p: &ModelParams, margin: f64) -> Result<()> {
        p.validate()?;
        let n = p.n;
        if self.lambda.len() != n || self.theta.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} λ and {n} ϑ values, got {} and {}",
                self.lambda.len(),
                self.theta.len()
            )));
        }
        if !self.lambda.iter().chain(&self.theta).all(|v| v.is_finite()) {
            return Err(Error::Domain("coordinates must be finite".into()));
        }
        for a in 0..n.saturating_sub(1) {
            let gap = self.lambda[a] - self.lambda[a + 1];
            if gap - 2.0 * p.mu <= margin {
                return Err(Error::Domain(format!(
                    "λ_{} − λ_{} = {gap} must exceed 2μ = {}",
                    a + 1,
                    a + 2,
                    2.0 * p.mu
                )));
            }
        }
        let last = self.lambda[n - 1];
        if last - p.nu <= margin {
            return Err(Error::Domain(format!(
                "λ_{n} = {last} must exceed ν = {}",
                p.nu
            )));
        }
        if last - p.kappa.abs() <= margin {
            return Err(Error::Domain(format!(
                "λ_{n} = {last} must exceed |κ| = {}",
                p.kappa.abs()
            )));
        }
        for (a, &l) in self.lambda.iter().enumerate() {
            if (l - p.mu).abs() <= margin {
                return Err(Error::Domain(format!(
                    "λ_{} = {l} coincides with μ = {}",
                    a + 1,
                    p.mu
                )));
            }
        }
        Ok(())
    }

    /// Coordinates moved by `step` along direction `index`, ordered
    /// `(λ_1..λ_n, ϑ_1..ϑ_n)`.
    pub fn shifted(&self, index: usize, step: f64) -> DualCoordinates {
        let mut out = self.clone();
        let n = self.n();
        if index < n {
            out.lambda[index] += step;
        } else {
            out.theta[index - n] += step;
        }
        out
    }
}

/// `(Λ, h)` with `Λ = diag(λ, −λ)` and `h` the real orthogonal block matrix
/// conjugating `iΛ` into the slice momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub diag: Vec<f64>,
    pub h: CMat,
}

/// The two real functions building `h`; `α² + β² = 1`.
pub fn alpha_beta(x: f64, kappa: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || x < kappa.abs() {
        return Err(Error::Domain(format!(
            "need x ≥ |κ| and x > 0, got x = {x}, κ = {kappa}"
        )));
    }
    if kappa == 0.0 {
        return Ok((1.0, 0.0));
    }
    let r = (x + (x * x - kappa * kappa).sqrt()).sqrt();
    let norm = (2.0 * x).sqrt();
    Ok((r / norm, kappa / (norm * r)))
}

fn check_decreasing(lambda: &[f64], kappa: f64) -> Result<()> {
    if lambda.is_empty() {
        return Err(Error::DimensionMismatch("λ must be non-empty".into()));
    }
    if lambda.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Domain("λ must be strictly decreasing".into()));
    }
    let last = lambda[lambda.len() - 1];
    if !(last > kappa.abs()) {
        return Err(Error::Domain(format!(
            "λ_n = {last} must exceed |κ| = {}",
            kappa.abs()
        )));
    }
    Ok(())
}

pub fn build_h(lambda: &[f64], kappa: f64) -> Result<SpectralData> {
    check_decreasing(lambda, kappa)?;
    let n = lambda.len();
    let mut h = CMat::zeros(2 * n, 2 * n);
    for (a, &x) in lambda.iter().enumerate() {
        let (alpha, beta) = alpha_beta(x, kappa)?;
        h[(a, a)] = c(alpha);
        h[(n + a, n + a)] = c(alpha);
        h[(a, n + a)] = c(beta);
        h[(n + a, a)] = c(-beta);
    }
    let diag = lambda
        .iter()
        .copied()
        .chain(lambda.iter().map(|x| -x))
        .collect();
    Ok(SpectralData { diag, h })
}

impl SpectralData {
    /// `i h Λ hᵀ`.
    pub fn momentum(&self) -> CMat {
        let d = CVec::from_iterator(self.diag.len(), self.diag.iter().map(|&x| IMAG * x));
        &self.h * CMat::from_diagonal(&d) * self.h.transpose()
    }
}

/// The slice value of the cotangent-fibre coordinate, `i h Λ h⁻¹`.
pub fn build_momentum(lambda: &[f64], kappa: f64) -> Result<CMat> {
    Ok(build_h(lambda, kappa)?.momentum())
}

fn bracket_factor(value: f64, what: &str) -> Result<f64> {
    if value < 0.0 {
        return Err(Error::Domain(format!("negative factor {value} in {what}")));
    }
    Ok(value)
}

pub fn build_f(coords: &DualCoordinates, p: &ModelParams) -> Result<CVec> {
    coords.validate(p)?;
    f_unchecked(coords, p)
}

fn f_unchecked(coords: &DualCoordinates, p: &ModelParams) -> Result<CVec> {
    let n = p.n;
    let lam = &coords.lambda;
    let two_mu = 2.0 * p.mu;
    let mut f = CVec::zeros(2 * n);
    for a in 0..n {
        let mut lower = 1.0 - p.nu / lam[a];
        let mut upper = 1.0 + p.nu / lam[a];
        for b in (0..n).filter(|&b| b != a) {
            let (dif, sum) = (lam[a] - lam[b], lam[a] + lam[b]);
            lower *= (1.0 - two_mu / dif) * (1.0 - two_mu / sum);
            upper *= (1.0 + two_mu / dif) * (1.0 + two_mu / sum);
        }
        f[a] = c(bracket_factor(lower, "F_a")?.sqrt());
        f[n + a] = Complex::from_polar(bracket_factor(upper, "F_{n+a}")?.sqrt(), coords.theta[a]);
    }
    Ok(f)
}

/// Moduli `|X_a|` from their closed product form; independent of ϑ.
pub fn x_moduli(lambda: &[f64], p: &ModelParams) -> Result<Vec<f64>> {
    let n = lambda.len();
    let four_mu2 = 4.0 * p.mu * p.mu;
    (0..n)
        .map(|a| {
            let la = lambda[a];
            let mut prod = 1.0 - p.nu * p.nu / (la * la);
            for b in (0..n).filter(|&b| b != a) {
                let (dif, sum) = (la - lambda[b], la + lambda[b]);
                prod *= (1.0 - four_mu2 / (dif * dif)) * (1.0 - four_mu2 / (sum * sum));
            }
            Ok(bracket_factor(prod, "|X_a|²")?.sqrt())
        })
        .collect()
}

/// `X_a = F_a · conj(F_{n+a})`.
pub fn build_x(coords: &DualCoordinates, p: &ModelParams) -> Result<CVec> {
    let f = build_f(coords, p)?;
    let n = p.n;
    Ok(CVec::from_fn(n, |a, _| f[a] * f[n + a].conj()))
}

/// `X_a = e^{−iϑ_a}|X_a|` from the closed form.
pub fn build_x_closed(coords: &DualCoordinates, p: &ModelParams) -> Result<CVec> {
    coords.validate(p)?;
    let moduli = x_moduli(&coords.lambda, p)?;
    Ok(CVec::from_fn(p.n, |a, _| {
        Complex::from_polar(moduli[a], -coords.theta[a])
    }))
}

fn a_unchecked(
    coords: &DualCoordinates,
    p: &ModelParams,
    f: &CVec,
    faults: Faults,
) -> Result<CMat> {
    let n = p.n;
    let cm = c_matrix(n);
    let cf = &cm * f;
    let big_lambda: Vec<f64> = coords
        .lambda
        .iter()
        .copied()
        .chain(coords.lambda.iter().map(|x| -x))
        .collect();
    let coupling = if faults.drop_coupling_term {
        0.0
    } else {
        2.0 * (p.mu - p.nu)
    };
    let mut a = CMat::zeros(2 * n, 2 * n);
    for j in 0..2 * n {
        for k in 0..2 * n {
            let denom = 2.0 * p.mu - big_lambda[j] + big_lambda[k];
            if denom.abs() <= DOMAIN_MARGIN * p.mu.max(1.0) {
                return Err(Error::Domain(format!(
                    "vanishing denominator 2μ − Λ_{} + Λ_{} = {denom}",
                    j + 1,
                    k + 1
                )));
            }
            let num = f[j] * cf[k].conj() * (2.0 * p.mu) - cm[(j, k)] * coupling;
            a[(j, k)] = num / denom;
        }
    }
    Ok(a)
}

pub fn build_a(coords: &DualCoordinates, p: &ModelParams) -> Result<CMat> {
    let f = build_f(coords, p)?;
    a_unchecked(coords, p, &f, Faults::NONE)
}

pub fn build_b(coords: &DualCoordinates, p: &ModelParams) -> Result<CMat> {
    Ok(CrossSection::build(coords, p)?.b)
}

/// Half-phases `π/2 > q_1 > … > q_n > 0` of a unitary `B` whose spectrum is
/// `{e^{±2iq_a}}`.
pub fn extract_q(b: &CMat) -> Result<Vec<f64>> {
    let n = half_dim(b)?;
    let phases: Vec<f64> = eigenvalues(b)?.iter().map(|z| z.arg()).collect();
    for &phi in &phases {
        if phi.abs() <= PHASE_PAIRING_TOL || (std::f64::consts::PI - phi.abs()) <= PHASE_PAIRING_TOL
        {
            return Err(Error::DegenerateSpectrum(format!(
                "eigenphase {phi} at 0 or ±π"
            )));
        }
    }
    let mut positive: Vec<f64> = phases.iter().copied().filter(|&x| x > 0.0).collect();
    let mut negative: Vec<f64> = phases.iter().copied().filter(|&x| x < 0.0).collect();
    if positive.len() != n || negative.len() != n {
        return Err(Error::DegenerateSpectrum(format!(
            "{} positive and {} negative eigenphases, expected {n} each",
            positive.len(),
            negative.len()
        )));
    }
    for &phi in &positive {
        let (idx, err) = negative
            .iter()
            .enumerate()
            .map(|(i, &psi)| (i, (phi + psi).abs()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty");
        if err > PHASE_PAIRING_TOL {
            return Err(Error::DegenerateSpectrum(format!(
                "eigenphase {phi} has no conjugate partner (closest mismatch {err:.3e})"
            )));
        }
        negative.swap_remove(idx);
    }
    positive.sort_by(|x, y| y.total_cmp(x));
    let q: Vec<f64> = positive.iter().map(|x| x / 2.0).collect();
    if q.windows(2).any(|w| w[0] - w[1] < 1e-6) {
        log::warn!("near-coincident half-phases {q:?}: slice point is poorly conditioned");
    }
    Ok(q)
}

pub fn build_y(coords: &DualCoordinates, p: &ModelParams) -> Result<CMat> {
    Ok(CrossSection::build(coords, p)?.y)
}

pub fn build_v(coords: &DualCoordinates, p: &ModelParams) -> Result<CVec> {
    Ok(CrossSection::build(coords, p)?.v)
}

/// `iμ(VV† − 1) + i(μ − ν)C`.
pub fn orbit_point(v: &CVec, p: &ModelParams) -> CMat {
    let dim = v.len();
    (v * v.adjoint() - identity(dim)) * (IMAG * p.mu) + c_matrix(dim / 2) * (IMAG * (p.mu - p.nu))
}

/// A point `(y, Y, υ^ℓ, υ^r)` of the extended phase space, with the
/// cotangent bundle trivialised by left translations.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    /// Group element `y ∈ U(2n)`.
    pub group: CMat,
    /// Cotangent-fibre coordinate `Y ∈ u(2n)`.
    pub fiber: CMat,
    pub orbit_left: CMat,
    pub orbit_right: CMat,
}

impl PhasePoint {
    pub fn n(&self) -> usize {
        self.group.nrows() / 2
    }

    /// Shape and manifold checks with the given tolerance.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = half_dim(&self.group)?;
        for m in [&self.fiber, &self.orbit_left, &self.orbit_right] {
            if m.shape() != self.group.shape() {
                return Err(Error::DimensionMismatch("phase point components".into()));
            }
        }
        let u = unitarity_residual(&self.group);
        if u > tol {
            return Err(Error::Constraint(format!(
                "y not unitary (residual {u:.3e})"
            )));
        }
        for m in [&self.fiber, &self.orbit_left, &self.orbit_right] {
            let r = anti_hermitian_residual(m);
            if r > tol {
                return Err(Error::NotAntiHermitian { residual: r });
            }
        }
        for m in [&self.orbit_left, &self.orbit_right] {
            let r = max_abs(&(m - gamma_unchecked(m, n))) / max_abs(m).max(1.0);
            if r > tol {
                return Err(Error::Constraint(format!(
                    "orbit component not Γ-fixed (residual {r:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// Every intermediate of the slice construction at one point.
#[derive(Debug, Clone)]
pub struct CrossSection {
    pub params: ModelParams,
    pub coords: DualCoordinates,
    pub spectral: SpectralData,
    pub f: CVec,
    pub a: CMat,
    pub b: CMat,
    /// Half-phases of `B`; empty if they could not be paired (only possible
    /// under injected faults).
    pub q: Vec<f64>,
    pub y: CMat,
    pub v: CVec,
    pub point: PhasePoint,
}

impl CrossSection {
    pub fn build(coords: &DualCoordinates, p: &ModelParams) -> Result<Self> {
        Self::build_with_faults(coords, p, Faults::NONE)
    }

    /// Run the whole chain. Under injected faults, the constraint checks on
    /// `q` and `V` are skipped so the corrupted point reaches the
    /// verification checks instead of being rejected here.
    pub fn build_with_faults(
        coords: &DualCoordinates,
        p: &ModelParams,
        faults: Faults,
    ) -> Result<Self> {
        coords.validate(p)?;
        let n = p.n;
        let spectral = build_h(&coords.lambda, p.kappa)?;
        let f = f_unchecked(coords, p)?;
        let a = a_unchecked(coords, p, &f, faults)?;
        let h = &spectral.h;
        let b = -(h * &a * h).adjoint();
        let q = match extract_q(&b) {
            Ok(q) => q,
            Err(e) if !faults.any() => return Err(e),
            Err(_) => Vec::new(),
        };
        let y = sqrtm(&b)?;
        let v = &y * h * &f;
        if !faults.any() {
            let norm_err = (v.norm_squared() - 2.0 * n as f64).abs() / (2.0 * n as f64);
            let cv = (&c_matrix(n) * &v + &v).camax();
            if norm_err > V_CONSTRAINT_TOL || cv > V_CONSTRAINT_TOL {
                return Err(Error::Constraint(format!(
                    "|V|² − 2n relative error {norm_err:.3e}, max|CV + V| = {cv:.3e}"
                )));
            }
        }
        let point = PhasePoint {
            group: y.clone(),
            fiber: spectral.momentum(),
            orbit_left: orbit_point(&v, p),
            orbit_right: c_matrix(n) * (IMAG * -p.kappa),
        };
        Ok(CrossSection {
            params: *p,
            coords: coords.clone(),
            spectral,
            f,
            a,
            b,
            q,
            y,
            v,
            point,
        })
    }
}

pub fn build_point(coords: &DualCoordinates, p: &ModelParams) -> Result<PhasePoint> {
    Ok(CrossSection::build(coords, p)?.point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::gamma;
    use crate::constraints::{inverse, momentum_map, orbit_membership, spectral_lambda};
    use crate::fixtures;
    use crate::linalg::max_abs_diff;
    use crate::sampling::{AngleFilter, SamplerConfig};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn alpha_beta_examples() {
        assert_eq!(alpha_beta(2.5, 0.0).unwrap(), (1.0, 0.0));
        let (a, b) = alpha_beta(0.7, 0.7).unwrap();
        assert!((a - FRAC_1_SQRT_2).abs() < 1e-15 && (b - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(alpha_beta(0.5, 0.7).is_err());
        assert!(alpha_beta(0.0, 0.0).is_err());
    }

    #[test]
    fn h_and_momentum() {
        let lam = [3.0, 1.5];
        let s = build_h(&lam, 0.0).unwrap();
        assert_eq!(s.h, identity(4));
        let y0 = build_momentum(&lam, 0.0).unwrap();
        assert!(
            max_abs_diff(
                &y0,
                &CMat::from_diagonal(&CVec::from_vec(vec![
                    IMAG * 3.0,
                    IMAG * 1.5,
                    -IMAG * 3.0,
                    -IMAG * 1.5
                ]))
            ) == 0.0
        );

        let s = build_h(&lam, -0.8).unwrap();
        assert!(unitarity_residual(&s.h) < 1e-14);
        assert!(max_abs_diff(&gamma(&s.h).unwrap(), &s.h.transpose()) < 1e-14);
        assert!(max_abs_diff(&gamma(&s.h).unwrap(), &inverse(&s.h).unwrap()) < 1e-14);
        let y = s.momentum();
        assert!(anti_hermitian_residual(&y) < 1e-14);
        let back = spectral_lambda(&y).unwrap();
        assert!(back.iter().zip(lam).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(build_h(&[1.0, 2.0], 0.0).is_err());
        assert!(build_h(&[1.0, 0.5], 0.6).is_err());
    }

    #[test]
    fn single_particle_chain_by_hand() {
        let (lam, th, nu) = (3.0, 0.7, 1.0);
        let p = ModelParams::new(1, 0.1, nu, 0.5).unwrap();
        let coords = DualCoordinates::new(vec![lam], vec![th]);
        let f = build_f(&coords, &p).unwrap();
        assert!((f[0] - c((1.0 - nu / lam).sqrt())).norm() < 1e-15);
        assert!((f[1] - Complex::from_polar((1.0 + nu / lam).sqrt(), th)).norm() < 1e-15);
        assert!((f.norm_squared() - 2.0).abs() < 1e-14);

        let modulus = (1.0 - nu * nu / (lam * lam)).sqrt();
        let x = build_x(&coords, &p).unwrap();
        assert!((x[0] - Complex::from_polar(modulus, -th)).norm() < 1e-14);

        let a = build_a(&coords, &p).unwrap();
        let expect = CMat::from_row_slice(
            2,
            2,
            &[
                Complex::from_polar(modulus, -th),
                c(-nu / lam),
                c(nu / lam),
                Complex::from_polar(modulus, th),
            ],
        );
        assert!(max_abs_diff(&a, &expect) < 1e-14, "{a}");
    }

    #[test]
    fn real_amplitudes_at_zero_angle() {
        let (mut coords, p) = fixtures::generic();
        coords.theta = vec![0.0; 3];
        let f = build_f(&coords, &p).unwrap();
        assert!(f.iter().all(|z| z.im == 0.0 && z.re > 0.0));
    }

    #[test]
    fn diagonal_half_phase() {
        let b = CMat::from_diagonal(&CVec::from_vec(vec![
            Complex::from_polar(1.0, 1.4),
            Complex::from_polar(1.0, -1.4),
        ]));
        let q = extract_q(&b).unwrap();
        assert!((q[0] - 0.7).abs() < 1e-15);
        assert!(matches!(
            extract_q(&identity(2)),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn domain_violations_name_the_inequality() {
        let p = ModelParams::new(2, 0.1, 1.0, 0.0).unwrap();
        let err = DualCoordinates::new(vec![3.0, 2.9], vec![0.0, 0.0])
            .validate(&p)
            .unwrap_err();
        assert!(err.to_string().contains("must exceed 2μ"), "{err}");
        let err = DualCoordinates::new(vec![3.0, 0.9], vec![0.0, 0.0])
            .validate(&p)
            .unwrap_err();
        assert!(err.to_string().contains("must exceed ν"), "{err}");
        assert!(matches!(
            ModelParams::new(1, 0.0, 1.0, 0.0),
            Err(Error::Unsupported(_))
        ));
        assert!(ModelParams::new(1, -0.1, 1.0, 0.0).is_err());
        assert!(ModelParams::new(1, 0.1, 0.5, 0.5).is_err());
        assert!(ModelParams::new(0, 0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn lambda_at_mu_is_rejected() {
        let p = ModelParams::new(1, 1.5, 1.0, 0.0).unwrap();
        assert!(DualCoordinates::new(vec![1.5], vec![0.3])
            .validate(&p)
            .is_err());
    }

    #[test]
    fn right_orbit_component_is_exact() {
        let (coords, p) = fixtures::generic();
        let x = build_point(&coords, &p).unwrap();
        assert_eq!(x.orbit_right, c_matrix(3) * (IMAG * -p.kappa));
        x.validate(1e-12).unwrap();
    }

    fn chain_residuals(s: &CrossSection) -> f64 {
        let n = s.params.n;
        let q_ok = s.q.len() == n
            && s.q.windows(2).all(|w| w[0] > w[1])
            && s.q
                .iter()
                .all(|&q| q > 0.0 && q < std::f64::consts::FRAC_PI_2);
        assert!(q_ok, "{:?}", s.q);
        let y_phases_ok = eigenvalues(&s.y)
            .unwrap()
            .iter()
            .all(|z| z.arg().abs() < std::f64::consts::FRAC_PI_2 && z.arg() != 0.0);
        assert!(y_phases_ok);
        [
            unitarity_residual(&s.spectral.h),
            unitarity_residual(&s.a),
            unitarity_residual(&s.b),
            unitarity_residual(&s.y),
            max_abs_diff(&(gamma(&s.a).unwrap() * &s.a), &identity(2 * n)),
            max_abs_diff(&(gamma(&s.b).unwrap() * &s.b), &identity(2 * n)),
            max_abs_diff(&(&s.y * &s.y), &s.b),
            (s.v.norm_squared() - 2.0 * n as f64).abs(),
            (s.v.norm_squared() - s.f.norm_squared()).abs(),
            (c_matrix(n) * &s.v + &s.v).norm(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn alpha_beta_is_normalised(x in 0.01f64..50.0, t in -1.0f64..=1.0) {
            let (a, b) = alpha_beta(x, t * x).unwrap();
            prop_assert!((a * a + b * b - 1.0).abs() <= 1e-14);
        }

        #[test]
        fn chain_invariants_hold(seed in any::<u64>(), n in 1usize..=4) {
            let s = SamplerConfig::default().sample(seed, 0, n, AngleFilter::None).unwrap();
            let cs = CrossSection::build(&s.coords, &s.params).unwrap();
            prop_assert!(chain_residuals(&cs) <= 1e-10);
            let x_closed = build_x_closed(&s.coords, &s.params).unwrap();
            let x = build_x(&s.coords, &s.params).unwrap();
            prop_assert!((x - x_closed).camax() <= 1e-13);
            let (l, r) = momentum_map(&cs.point).unwrap();
            prop_assert!(max_abs(&l).max(max_abs(&r)) <= 1e-9);
            prop_assert!(orbit_membership(&cs.point.orbit_left, &s.params).unwrap().passed);
            let back = spectral_lambda(&cs.point.fiber).unwrap();
            for (a, b) in back.iter().zip(&s.coords.lambda) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn x_modulus_ignores_angles(seed in any::<u64>(), shift in -10.0f64..10.0) {
            let s = SamplerConfig::default().sample(seed, 1, 3, AngleFilter::None).unwrap();
            let moved = DualCoordinates::new(
                s.coords.lambda.clone(),
                s.coords.theta.iter().map(|t| t + shift).collect(),
            );
            let a = build_x(&s.coords, &s.params).unwrap();
            let b = build_x(&moved, &s.params).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                prop_assert!((u.norm() - v.norm()).abs() <= 1e-13);
            }
        }
    }
}
