//! The extended-phase-space symplectic form, Poisson brackets of the
//! invariant families, and the pull-back of the form along the slice.

use serde::{Deserialize, Serialize};

use crate::algebra::{c_matrix, OrbitTangentSolver};
use crate::crosssection::{CrossSection, DualCoordinates, ModelParams, PhasePoint};
use crate::error::{Error, Result};
use crate::fault::Faults;
use crate::linalg::{c, commutator, max_abs, re_trace_product, skew_part, CMat, PowerTable, RMat};
use crate::observables::{
    chi, d_chi, d_phi, hvf_chi_with_faults, hvf_phi, phi, z_matrix, TangentVector,
};

/// Residual of `y⁻¹Δy` away from `u(2n)` tolerated by the form.
pub const GROUP_TANGENT_TOL: f64 = 1e-8;

/// `{f₁, f₂} = BRACKET_SIGN · Ω(X_{f₂}, X_{f₁})`. Fixed by requiring the
/// closed-form `{χ_k, φ_m}` identity to hold; see [`calibrate_bracket_sign`].
pub const BRACKET_SIGN: f64 = 1.0;

/// Default central-difference step for slice tangents.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A tangent vector with its group part left-trivialised and its orbit
/// part resolved into a `𝔊₊` generator.
#[derive(Debug, Clone)]
pub struct PreparedTangent {
    pub xi: CMat,
    pub d_fiber: CMat,
    pub generator: CMat,
}

pub fn prepare(
    x: &PhasePoint,
    solver: &OrbitTangentSolver,
    v: &TangentVector,
) -> Result<PreparedTangent> {
    let xi = v.xi(x)?;
    let residual = max_abs(&(&xi - skew_part(&xi))) / max_abs(&xi).max(1.0);
    if residual > GROUP_TANGENT_TOL {
        return Err(Error::NotAntiHermitian { residual });
    }
    Ok(PreparedTangent {
        xi,
        d_fiber: v.d_fiber.clone(),
        generator: solver.solve(&v.d_orbit)?,
    })
}

/// The four summands of the form: `Ω = first − second + third + orbit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaTerms {
    /// `⟨ξ, Δ′Y⟩`
    pub first: f64,
    /// `⟨ξ′, ΔY⟩`
    pub second: f64,
    /// `⟨[ξ, ξ′], Y⟩`
    pub third: f64,
    /// `⟨[D, D′], υ^ℓ⟩`
    pub orbit: f64,
}

impl OmegaTerms {
    pub fn total(&self) -> f64 {
        self.first - self.second + self.third + self.orbit
    }

    pub fn cotangent(&self) -> f64 {
        self.first - self.second + self.third
    }
}

pub fn omega_terms(x: &PhasePoint, a: &PreparedTangent, b: &PreparedTangent) -> OmegaTerms {
    OmegaTerms {
        first: re_trace_product(&a.xi, &b.d_fiber),
        second: re_trace_product(&b.xi, &a.d_fiber),
        third: re_trace_product(&commutator(&a.xi, &b.xi), &x.fiber),
        orbit: re_trace_product(&commutator(&a.generator, &b.generator), &x.orbit_left),
    }
}

/// Cotangent-bundle part of the form.
pub fn omega_tstar(x: &PhasePoint, v: &TangentVector, w: &TangentVector) -> Result<f64> {
    let xi = v.xi(x)?;
    let xi_prime = w.xi(x)?;
    for m in [&xi, &xi_prime] {
        let residual = max_abs(&(m - skew_part(m))) / max_abs(m).max(1.0);
        if residual > GROUP_TANGENT_TOL {
            return Err(Error::NotAntiHermitian { residual });
        }
    }
    Ok(
        re_trace_product(&xi, &w.d_fiber) - re_trace_product(&xi_prime, &v.d_fiber)
            + re_trace_product(&commutator(&xi, &xi_prime), &x.fiber),
    )
}

/// Full form on the extended phase space.
pub fn omega_total(x: &PhasePoint, v: &TangentVector, w: &TangentVector) -> Result<f64> {
    let solver = OrbitTangentSolver::new(&x.orbit_left)?;
    omega_total_with(&solver, x, v, w)
}

pub fn omega_total_with(
    solver: &OrbitTangentSolver,
    x: &PhasePoint,
    v: &TangentVector,
    w: &TangentVector,
) -> Result<f64> {
    let a = prepare(x, solver, v)?;
    let b = prepare(x, solver, w)?;
    Ok(omega_terms(x, &a, &b).total())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observable {
    Phi(u32),
    Chi(u32),
}

impl Observable {
    pub fn value(&self, x: &PhasePoint, p: &ModelParams) -> Result<f64> {
        match *self {
            Observable::Phi(m) => phi(m, x),
            Observable::Chi(k) => chi(k, x, p),
        }
    }

    pub fn differential(&self, x: &PhasePoint, p: &ModelParams, v: &TangentVector) -> Result<f64> {
        match *self {
            Observable::Phi(m) => d_phi(m, x, v),
            Observable::Chi(k) => d_chi(k, x, p, v),
        }
    }

    pub fn field(&self, x: &PhasePoint, p: &ModelParams, faults: Faults) -> Result<TangentVector> {
        match *self {
            Observable::Phi(m) => hvf_phi(m, x),
            Observable::Chi(k) => hvf_chi_with_faults(k, x, p, faults),
        }
    }
}

/// Poisson bracket of two observables at `x`.
pub fn poisson(f: Observable, g: Observable, x: &PhasePoint, p: &ModelParams) -> Result<f64> {
    let solver = OrbitTangentSolver::new(&x.orbit_left)?;
    poisson_with(&solver, f, g, x, p, Faults::NONE)
}

pub fn poisson_with(
    solver: &OrbitTangentSolver,
    f: Observable,
    g: Observable,
    x: &PhasePoint,
    p: &ModelParams,
    faults: Faults,
) -> Result<f64> {
    let xf = f.field(x, p, faults)?;
    let xg = g.field(x, p, faults)?;
    Ok(BRACKET_SIGN * omega_total_with(solver, x, &xg, &xf)?)
}

/// Closed form of `{χ_k, φ_m}` for even `k`, `m`:
/// `χ_{k+m−1} + ½ Re tr((Y^k C Y^{m−1} − Y^{m−1} C Y^k) y⁻¹ Z y)`.
pub fn chi_phi_closed(k: u32, m: u32, x: &PhasePoint, p: &ModelParams) -> Result<f64> {
    if k % 2 == 1 || m % 2 == 1 || m == 0 {
        return Err(Error::InvalidParams(format!(
            "closed form needs even k and even m ≥ 2, got k = {k}, m = {m}"
        )));
    }
    let n = x.n();
    let cm = c_matrix(n);
    let powers = PowerTable::new(&x.fiber, k.max(m));
    let (yk, ym) = (powers.get(k), powers.get(m - 1));
    let y_inv = crate::constraints::inverse(&x.group)?;
    let z_tilde = &y_inv * z_matrix(&x.orbit_left, p)? * &x.group;
    let skew = yk * &cm * ym - ym * &cm * yk;
    Ok(chi(k + m - 1, x, p)? + 0.5 * re_trace_product(&skew, &z_tilde))
}

/// Sign `s` such that `s · Ω(X_{φ_2}, X_{χ_2})` reproduces the closed form
/// of `{χ_2, φ_2}`; returns `±1`, or an error if neither sign fits.
pub fn calibrate_bracket_sign(x: &PhasePoint, p: &ModelParams) -> Result<f64> {
    let solver = OrbitTangentSolver::new(&x.orbit_left)?;
    let raw = omega_total_with(
        &solver,
        x,
        &hvf_phi(2, x)?,
        &hvf_chi_with_faults(2, x, p, Faults::NONE)?,
    )?;
    let closed = chi_phi_closed(2, 2, x, p)?;
    let scale = closed.abs().max(1.0);
    if (raw - closed).abs() <= 1e-8 * scale {
        Ok(1.0)
    } else if (raw + closed).abs() <= 1e-8 * scale {
        Ok(-1.0)
    } else {
        Err(Error::Numerical(format!(
            "bracket calibration failed: Ω = {raw}, closed form = {closed}"
        )))
    }
}

/// Tolerance for the projection residuals of a finite-difference tangent.
pub fn fd_tolerance(step: f64) -> f64 {
    (10.0 * step * step).max(1e-8)
}

/// Central-difference tangent of the slice embedding along coordinate
/// `direction` (`0..n` for λ, `n..2n` for ϑ).
pub fn fd_tangent(
    coords: &DualCoordinates,
    p: &ModelParams,
    direction: usize,
    step: f64,
) -> Result<TangentVector> {
    let base = CrossSection::build(coords, p)?;
    let solver = OrbitTangentSolver::new(&base.point.orbit_left)?;
    fd_tangent_at(&base, &solver, direction, step, Faults::NONE)
}

/// As [`fd_tangent`] with the base point and its orbit solver supplied.
/// Under injected faults the projection residuals are not enforced.
pub fn fd_tangent_at(
    base: &CrossSection,
    solver: &OrbitTangentSolver,
    direction: usize,
    step: f64,
    faults: Faults,
) -> Result<TangentVector> {
    let n = base.params.n;
    if direction >= 2 * n {
        return Err(Error::InvalidParams(format!(
            "direction {direction} out of range for n = {n}"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidParams(format!(
            "step must be positive, got {step}"
        )));
    }
    let forward = base.coords.shifted(direction, step);
    let backward = base.coords.shifted(direction, -step);
    let plus = CrossSection::build_with_faults(&forward, &base.params, faults)?.point;
    let minus = CrossSection::build_with_faults(&backward, &base.params, faults)?.point;
    let inv_2h = c(0.5 / step);
    let raw_group = (&plus.group - &minus.group) * inv_2h;
    let d_fiber = (&plus.fiber - &minus.fiber) * inv_2h;
    let d_orbit = (&plus.orbit_left - &minus.orbit_left) * inv_2h;

    let x = &base.point;
    let xi = crate::constraints::inverse(&x.group)? * raw_group;
    let xi_skew = skew_part(&xi);
    let tol = fd_tolerance(step);
    if !faults.any() {
        let residual = max_abs(&(&xi - &xi_skew)) / max_abs(&xi).max(1.0);
        if residual > tol {
            return Err(Error::NotAntiHermitian { residual });
        }
        let (_, orbit_residual) = solver.solve_unchecked(&d_orbit)?;
        if orbit_residual > tol {
            return Err(Error::NotTangent {
                residual: orbit_residual,
            });
        }
    }
    Ok(TangentVector {
        d_group: &x.group * xi_skew,
        d_fiber,
        d_orbit,
    })
}

/// Ω on all pairs of coordinate tangents, ordered `(λ_1..λ_n, ϑ_1..ϑ_n)`.
pub fn pullback_matrix(coords: &DualCoordinates, p: &ModelParams, step: f64) -> Result<RMat> {
    pullback_matrix_with_faults(coords, p, step, Faults::NONE)
}

pub fn pullback_matrix_with_faults(
    coords: &DualCoordinates,
    p: &ModelParams,
    step: f64,
    faults: Faults,
) -> Result<RMat> {
    let base = CrossSection::build_with_faults(coords, p, faults)?;
    let x = &base.point;
    let solver = if faults.any() {
        OrbitTangentSolver::with_tolerance(&x.orbit_left, f64::INFINITY)?
    } else {
        OrbitTangentSolver::with_tolerance(&x.orbit_left, fd_tolerance(step))?
    };
    let dim = 2 * p.n;
    let prepared = (0..dim)
        .map(|i| {
            let t = fd_tangent_at(&base, &solver, i, step, faults)?;
            if faults.any() {
                Ok(PreparedTangent {
                    xi: t.xi(x)?,
                    d_fiber: t.d_fiber,
                    generator: solver.solve_unchecked(&t.d_orbit)?.0,
                })
            } else {
                prepare(x, &solver, &t)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = RMat::zeros(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = omega_terms(x, &prepared[i], &prepared[j]).total();
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
    }
    Ok(m)
}

/// `[[0, 1], [−1, 0]]` in `n × n` blocks.
pub fn canonical_form(n: usize) -> RMat {
    RMat::from_fn(2 * n, 2 * n, |i, j| {
        if j == i + n {
            1.0
        } else if i == j + n {
            -1.0
        } else {
            0.0
        }
    })
}
