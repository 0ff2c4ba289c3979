//! The invariant families `φ_m`, `χ_k`, their slice closed forms,
//! differentials and Hamiltonian vector fields.

use crate::algebra::{c_matrix, half_dim, same_shape, OrbitTangentSolver};
use crate::constraints::inverse;
use crate::crosssection::{x_moduli, DualCoordinates, ModelParams, PhasePoint};
use crate::error::{Error, Result};
use crate::fault::Faults;
use crate::linalg::{
    c, commutator, hermitian_residual, identity, parity_bracket, re_trace_product, skew_part, CMat,
    PowerTable, IMAG,
};

/// `(Δy, ΔY, Δυ^ℓ)` at a phase point; the `υ^r` component is always zero
/// because that orbit is a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub d_group: CMat,
    pub d_fiber: CMat,
    pub d_orbit: CMat,
}

impl TangentVector {
    pub fn zeros(n: usize) -> Self {
        let z = CMat::zeros(2 * n, 2 * n);
        TangentVector {
            d_group: z.clone(),
            d_fiber: z.clone(),
            d_orbit: z,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        TangentVector {
            d_group: &self.d_group * c(s),
            d_fiber: &self.d_fiber * c(s),
            d_orbit: &self.d_orbit * c(s),
        }
    }

    pub fn plus(&self, other: &TangentVector) -> Self {
        TangentVector {
            d_group: &self.d_group + &other.d_group,
            d_fiber: &self.d_fiber + &other.d_fiber,
            d_orbit: &self.d_orbit + &other.d_orbit,
        }
    }

    /// Left-trivialised group component `y⁻¹Δy`.
    pub fn xi(&self, x: &PhasePoint) -> Result<CMat> {
        same_shape(&self.d_group, &x.group)?;
        Ok(inverse(&x.group)? * &self.d_group)
    }
}

/// `(iμ)⁻¹υ^ℓ + 1 − (1 − ν/μ)C`, equal to `VV†` on the orbit.
pub fn z_matrix(orbit_left: &CMat, p: &ModelParams) -> Result<CMat> {
    if p.mu == 0.0 {
        return Err(Error::Unsupported("μ = 0".into()));
    }
    let n = half_dim(orbit_left)?;
    Ok(orbit_left * (IMAG * p.mu).inv() + identity(2 * n) - c_matrix(n) * c(1.0 - p.nu / p.mu))
}

/// Hermitian check for a reconstructed `Z`.
pub fn z_hermitian_residual(z: &CMat) -> f64 {
    hermitian_residual(z)
}

fn require_positive(m: u32) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParams("φ_m needs m ≥ 1".into()));
    }
    Ok(())
}

/// `Re tr(Y^m) / m`.
pub fn phi(m: u32, x: &PhasePoint) -> Result<f64> {
    require_positive(m)?;
    let powers = PowerTable::new(&x.fiber, m);
    Ok(powers.get(m).trace().re / m as f64)
}

/// Cached per-point data shared by the `χ` formulas.
struct ChiContext {
    powers: PowerTable,
    y_inv: CMat,
    /// `y⁻¹ Z y`
    z_tilde: CMat,
    c: CMat,
}

impl ChiContext {
    fn new(x: &PhasePoint, p: &ModelParams, max_power: u32) -> Result<Self> {
        let n = half_dim(&x.group)?;
        let y_inv = inverse(&x.group)?;
        let z = z_matrix(&x.orbit_left, p)?;
        let z_tilde = &y_inv * z * &x.group;
        Ok(ChiContext {
            powers: PowerTable::new(&x.fiber, max_power),
            y_inv,
            z_tilde,
            c: c_matrix(n),
        })
    }

    fn value(&self, k: u32) -> f64 {
        re_trace_product(self.powers.get(k), &(&self.z_tilde * &self.c))
    }

    /// `½ Σ_j Y^{k−1−j} [Z̃, C]_± Y^j`, the gradient of `χ_k` in `Y`.
    fn fiber_gradient(&self, k: u32) -> CMat {
        let dim = self.c.nrows();
        let inner = parity_bracket(&self.z_tilde, &self.c, k);
        let mut acc = CMat::zeros(dim, dim);
        for j in 0..k {
            acc += self.powers.get(k - 1 - j) * &inner * self.powers.get(j);
        }
        acc * c(0.5)
    }

    /// `(y[C, Y^k]_± y⁻¹ + C(…)C) / 4iμ`, the `𝔊₊` element generating the
    /// orbit component.
    fn orbit_generator(&self, x: &PhasePoint, p: &ModelParams, k: u32, parity: u32) -> CMat {
        let inner = &x.group * parity_bracket(&self.c, self.powers.get(k), parity) * &self.y_inv;
        (&inner + &self.c * &inner * &self.c) * (IMAG * 4.0 * p.mu).inv()
    }
}

/// `Re tr(Y^k y⁻¹ Z(υ^ℓ) y C)`.
pub fn chi(k: u32, x: &PhasePoint, p: &ModelParams) -> Result<f64> {
    Ok(ChiContext::new(x, p, k)?.value(k))
}

/// Slice value of `φ_m`: zero for odd `m`, `(−1)^{m/2}(2/m)Σλ^m` for even.
pub fn phi_red(m: u32, lambda: &[f64]) -> Result<f64> {
    require_positive(m)?;
    if m % 2 == 1 {
        return Ok(0.0);
    }
    let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * 2.0 / m as f64 * lambda.iter().map(|l| l.powi(m as i32)).sum::<f64>())
}

fn sign_pow(e: u32) -> f64 {
    if e % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `√(1 − κ²/λ_a²) |X_a|`, the amplitude multiplying the angle dependence
/// of `χ_k` on the slice.
pub fn chi_amplitudes(lambda: &[f64], p: &ModelParams) -> Result<Vec<f64>> {
    let moduli = x_moduli(lambda, p)?;
    Ok(lambda
        .iter()
        .zip(moduli)
        .map(|(&l, x)| (1.0 - p.kappa * p.kappa / (l * l)).sqrt() * x)
        .collect())
}

/// `|F_a|² − |F_{n+a}|²`, computed from the closed forms.
pub fn f_imbalance(lambda: &[f64], p: &ModelParams) -> Vec<f64> {
    let n = lambda.len();
    let two_mu = 2.0 * p.mu;
    (0..n)
        .map(|a| {
            let mut lower = 1.0 - p.nu / lambda[a];
            let mut upper = 1.0 + p.nu / lambda[a];
            for b in (0..n).filter(|&b| b != a) {
                let (d, s) = (lambda[a] - lambda[b], lambda[a] + lambda[b]);
                lower *= (1.0 - two_mu / d) * (1.0 - two_mu / s);
                upper *= (1.0 + two_mu / d) * (1.0 + two_mu / s);
            }
            lower - upper
        })
        .collect()
}

/// Slice value of `χ_k`:
/// odd `k`: `(−1)^{(k−1)/2} 2 Σ λ^k s|X| sin ϑ`;
/// even `k`: `(−1)^{k/2} Σ [2λ^k s|X| cos ϑ − κλ^{k−1}(|F_a|² − |F_{n+a}|²)]`.
pub fn chi_red(k: u32, coords: &DualCoordinates, p: &ModelParams) -> Result<f64> {
    coords.validate(p)?;
    let lam = &coords.lambda;
    let amp = chi_amplitudes(lam, p)?;
    if k % 2 == 1 {
        let sum: f64 = (0..p.n)
            .map(|a| lam[a].powi(k as i32) * amp[a] * coords.theta[a].sin())
            .sum();
        return Ok(sign_pow((k - 1) / 2) * 2.0 * sum);
    }
    let imbalance = f_imbalance(lam, p);
    let sum: f64 = (0..p.n)
        .map(|a| {
            2.0 * lam[a].powi(k as i32) * amp[a] * coords.theta[a].cos()
                - p.kappa * lam[a].powi(k as i32 - 1) * imbalance[a]
        })
        .sum();
    Ok(sign_pow(k / 2) * sum)
}

/// `dφ_m(δx) = Re tr(Y^{m−1} ΔY)`; identically zero for odd `m`.
pub fn d_phi(m: u32, x: &PhasePoint, dx: &TangentVector) -> Result<f64> {
    require_positive(m)?;
    if m % 2 == 1 {
        return Ok(0.0);
    }
    let powers = PowerTable::new(&x.fiber, m - 1);
    Ok(re_trace_product(powers.get(m - 1), &dx.d_fiber))
}

/// `dχ_k(δx)` as the sum of its group, fibre and orbit pairings.
pub fn d_chi(k: u32, x: &PhasePoint, p: &ModelParams, dx: &TangentVector) -> Result<f64> {
    let ctx = ChiContext::new(x, p, k)?;
    let xi = dx.xi(x)?;
    let group_grad =
        commutator(&parity_bracket(&ctx.c, ctx.powers.get(k), k), &ctx.z_tilde) * c(0.5);
    let orbit_grad = ctx.orbit_generator(x, p, k, k);
    Ok(re_trace_product(&group_grad, &xi)
        + re_trace_product(&ctx.fiber_gradient(k), &dx.d_fiber)
        + re_trace_product(&orbit_grad, &dx.d_orbit))
}

/// `X_{φ_m} = (yY^{m−1}, 0, 0)` for even `m`; the zero field for odd `m`,
/// where `φ_m` vanishes identically.
pub fn hvf_phi(m: u32, x: &PhasePoint) -> Result<TangentVector> {
    require_positive(m)?;
    let n = half_dim(&x.group)?;
    if m % 2 == 1 {
        return Ok(TangentVector::zeros(n));
    }
    let powers = PowerTable::new(&x.fiber, m - 1);
    let mut v = TangentVector::zeros(n);
    v.d_group = &x.group * powers.get(m - 1);
    Ok(v)
}

pub fn hvf_chi(k: u32, x: &PhasePoint, p: &ModelParams) -> Result<TangentVector> {
    hvf_chi_with_faults(k, x, p, Faults::NONE)
}

pub fn hvf_chi_with_faults(
    k: u32,
    x: &PhasePoint,
    p: &ModelParams,
    faults: Faults,
) -> Result<TangentVector> {
    let ctx = ChiContext::new(x, p, k)?;
    let d_group = &x.group * ctx.fiber_gradient(k);
    let d_fiber = commutator(&parity_bracket(ctx.powers.get(k), &ctx.z_tilde, k), &ctx.c) * c(0.5);
    let parity = if faults.flip_orbit_bracket { k + 1 } else { k };
    let generator = ctx.orbit_generator(x, p, k, parity);
    let d_orbit = commutator(&generator, &x.orbit_left);
    Ok(TangentVector {
        d_group,
        d_fiber,
        d_orbit,
    })
}

/// Checks a tangent vector against its invariants: `y⁻¹Δy` and `ΔY`
/// anti-Hermitian and `Δυ^ℓ` orbit-tangent. Returns the worst residual.
pub fn tangent_residual(
    x: &PhasePoint,
    dx: &TangentVector,
    solver: &OrbitTangentSolver,
) -> Result<f64> {
    let xi = dx.xi(x)?;
    let xi_res =
        crate::linalg::max_abs(&(&xi - skew_part(&xi))) / crate::linalg::max_abs(&xi).max(1.0);
    let fib_res = crate::linalg::anti_hermitian_residual(&dx.d_fiber);
    let (_, orbit_res) = solver.solve_unchecked(&dx.d_orbit)?;
    Ok(xi_res.max(fib_res).max(orbit_res))
}
