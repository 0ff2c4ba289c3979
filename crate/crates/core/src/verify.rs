//! The acceptance criteria as sample sweeps.
//!
//! Every check evaluates its samples independently (in parallel) and
//! merges the per-sample results in index order, so a report depends only
//! on its configuration, never on thread count or scheduling.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{c_matrix, gamma, plus_part};
use crate::constraints::{inverse, momentum_map};
use crate::crosssection::{CrossSection, DualCoordinates, ModelParams, PhasePoint};
use crate::error::{Error, Result};
use crate::fault::Faults;
use crate::lemmas::{BracketContext, Window};
use crate::linalg::{
    c, commutator, exp_anti_hermitian, max_abs, max_abs_diff, random_anti_hermitian, rel_diff,
    rel_err, unitarity_residual, CMat, RMat,
};
use crate::observables::{chi, chi_red, d_chi, d_phi, phi, phi_red, TangentVector};
use crate::sampling::{AngleFilter, Couplings, Sample, SamplerConfig};
use crate::symplectic::{
    canonical_form, chi_phi_closed, pullback_matrix_with_faults, Observable, DEFAULT_FD_STEP,
};

/// Version tag of the report layout.
pub const SCHEMA: &str = "darboux-verify/1";

/// κ used on the near side of the `κ → 0` comparison.
pub const CONTINUITY_KAPPA: f64 = 1e-6;

/// Pass thresholds. Lemma tolerances are multiplied by the condition
/// number of the solve that produced the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub constraint: f64,
    pub structure: f64,
    pub reduction: f64,
    pub derivative: f64,
    pub bracket: f64,
    pub lambda_lambda: f64,
    pub lambda_angle: f64,
    pub angle_angle: f64,
    pub term: f64,
    pub third_term: f64,
    pub pullback: f64,
    pub continuity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            constraint: 1e-9,
            structure: 1e-10,
            reduction: 1e-10,
            derivative: 1e-6,
            bracket: 1e-9,
            lambda_lambda: 1e-8,
            lambda_angle: 1e-8,
            angle_angle: 1e-7,
            term: 1e-9,
            third_term: 1e-10,
            pullback: 1e-6,
            continuity: 1e-4,
        }
    }
}

impl Tolerances {
    /// Every threshold set to `tol`.
    pub fn uniform(tol: f64) -> Self {
        Tolerances {
            constraint: tol,
            structure: tol,
            reduction: tol,
            derivative: tol,
            bracket: tol,
            lambda_lambda: tol,
            lambda_angle: tol,
            angle_angle: tol,
            term: tol,
            third_term: tol,
            pullback: tol,
            continuity: tol,
        }
    }

    /// Set one threshold by its field name.
    pub fn set(&mut self, name: &str, tol: f64) -> Result<()> {
        let slot = match name.replace('-', "_").as_str() {
            "constraint" => &mut self.constraint,
            "structure" => &mut self.structure,
            "reduction" => &mut self.reduction,
            "derivative" => &mut self.derivative,
            "bracket" => &mut self.bracket,
            "lambda_lambda" => &mut self.lambda_lambda,
            "lambda_angle" => &mut self.lambda_angle,
            "angle_angle" => &mut self.angle_angle,
            "term" => &mut self.term,
            "third_term" => &mut self.third_term,
            "pullback" => &mut self.pullback,
            "continuity" => &mut self.continuity,
            other => return Err(Error::InvalidParams(format!("unknown tolerance '{other}'"))),
        };
        *slot = tol;
        Ok(())
    }
}

/// Which points a check runs on: a seeded sweep over `dims`, or one
/// explicit point (which then needs all three couplings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sweep {
    pub dims: Vec<usize>,
    /// Per dimension.
    pub samples: usize,
    pub seed: u64,
    pub couplings: Couplings,
    pub point: Option<DualCoordinates>,
    pub sampler: SamplerConfig,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            dims: vec![2],
            samples: 50,
            seed: 0,
            couplings: Couplings::default(),
            point: None,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleId {
    pub n: usize,
    pub index: usize,
}

impl Sweep {
    pub fn new(dims: Vec<usize>, samples: usize, seed: u64) -> Self {
        Sweep {
            dims,
            samples,
            seed,
            ..Sweep::default()
        }
    }

    pub fn with_couplings(mut self, couplings: Couplings) -> Self {
        self.couplings = couplings;
        self
    }

    pub fn pinned_kappa(&self, kappa: f64) -> Self {
        let mut s = self.clone();
        s.couplings.kappa = Some(kappa);
        s
    }

    /// Parameters of an explicit point.
    pub fn explicit_params(&self) -> Result<Option<(DualCoordinates, ModelParams)>> {
        let Some(coords) = &self.point else {
            return Ok(None);
        };
        let Couplings {
            mu: Some(mu),
            nu: Some(nu),
            kappa: Some(kappa),
        } = self.couplings
        else {
            return Err(Error::InvalidParams(
                "an explicit point needs μ, ν and κ".into(),
            ));
        };
        if coords.theta.len() != coords.lambda.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values of λ but {} of ϑ",
                coords.lambda.len(),
                coords.theta.len()
            )));
        }
        let p = ModelParams::new(coords.n(), mu, nu, kappa)?;
        coords.validate(&p)?;
        Ok(Some((coords.clone(), p)))
    }

    /// Sample ids in report order.
    pub fn ids(&self) -> Vec<SampleId> {
        match &self.point {
            Some(c) => vec![SampleId { n: c.n(), index: 0 }],
            None => self
                .dims
                .iter()
                .flat_map(|&n| (0..self.samples).map(move |index| SampleId { n, index }))
                .collect(),
        }
    }

    /// The point for `id`. Each `(n, index)` owns a random stream, so a
    /// sample does not change when other dimensions or counts change.
    pub fn draw(&self, id: SampleId, filter: AngleFilter) -> Result<Sample> {
        if let Some((coords, params)) = self.explicit_params()? {
            if !filter.accepts(&coords.theta) {
                return Err(Error::Domain(
                    "explicit ϑ too close to an axis for this check".into(),
                ));
            }
            return Ok(Sample {
                index: 0,
                params,
                coords,
                rejections: 0,
            });
        }
        let stream = ((id.n as u64) << 32) | id.index as u64;
        let mut s = self.sampler.sample_pinned(
            self.seed,
            stream as usize,
            id.n,
            &self.couplings,
            filter,
        )?;
        s.index = id.index;
        if s.rejections > 0 {
            log::debug!(
                "n = {} sample {}: {} rejected draws",
                id.n,
                id.index,
                s.rejections
            );
        }
        Ok(s)
    }
}

/// Everything a verification run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sweep: Sweep,
    /// Step of the derivative check.
    pub fd_step: f64,
    /// Step of the finite-difference slice tangents in the pullback check.
    pub pullback_step: f64,
    pub tolerances: Tolerances,
    /// Corruptions applied to every check (mutation testing of the
    /// harness itself).
    pub faults: Faults,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sweep: Sweep::default(),
            fd_step: 1e-6,
            pullback_step: DEFAULT_FD_STEP,
            tolerances: Tolerances::default(),
            faults: Faults::NONE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub criterion: u8,
    pub passed: bool,
    /// Largest error over the samples; divided by the condition number
    /// when `cond_scaled`.
    pub max_error: f64,
    pub tolerance: f64,
    pub cond_scaled: bool,
    /// Largest unscaled error.
    pub max_raw_error: f64,
    pub max_cond: f64,
    pub samples: usize,
    pub failures: usize,
    pub worst: Option<SampleId>,
    pub first_error: Option<String>,
    pub note: Option<String>,
    #[serde(skip)]
    pub per_sample: Vec<(SampleId, f64)>,
}

/// One measured quantity of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Measure {
    error: f64,
    cond: f64,
}

impl Measure {
    fn plain(error: f64) -> Self {
        Measure { error, cond: 1.0 }
    }

    fn scaled(error: f64, cond: f64) -> Self {
        Measure { error, cond }
    }
}

struct Metric {
    name: &'static str,
    criterion: u8,
    tolerance: f64,
    cond_scaled: bool,
}

impl Metric {
    fn new(name: &'static str, criterion: u8, tolerance: f64) -> Self {
        Metric {
            name,
            criterion,
            tolerance,
            cond_scaled: false,
        }
    }

    fn scaled(name: &'static str, criterion: u8, tolerance: f64) -> Self {
        Metric {
            cond_scaled: true,
            ..Metric::new(name, criterion, tolerance)
        }
    }
}

/// Evaluate `eval` on every sample of the sweep and fold the measures
/// into one report per metric. A sample that errors fails every metric.
fn run_checks<F>(sweep: &Sweep, filter: AngleFilter, metrics: Vec<Metric>, eval: F) -> Vec<CheckReport>
where
    F: Fn(&Sample) -> Result<Vec<Measure>> + Sync,
{
    let ids = sweep.ids();
    let results: Vec<(SampleId, Result<Vec<Measure>>)> = ids
        .par_iter()
        .map(|&id| {
            let r = sweep.draw(id, filter).and_then(|s| eval(&s));
            (id, r)
        })
        .collect();
    metrics
        .iter()
        .enumerate()
        .map(|(i, metric)| fold(metric, &results, i))
        .collect()
}

fn fold(metric: &Metric, results: &[(SampleId, Result<Vec<Measure>>)], slot: usize) -> CheckReport {
    let mut report = CheckReport {
        name: metric.name.to_string(),
        criterion: metric.criterion,
        passed: true,
        max_error: 0.0,
        tolerance: metric.tolerance,
        cond_scaled: metric.cond_scaled,
        max_raw_error: 0.0,
        max_cond: 0.0,
        samples: results.len(),
        failures: 0,
        worst: None,
        first_error: None,
        note: None,
        per_sample: Vec::with_capacity(results.len()),
    };
    for (id, r) in results {
        let m = match r {
            Ok(ms) => ms[slot],
            Err(e) => {
                report.failures += 1;
                report
                    .first_error
                    .get_or_insert_with(|| format!("n = {} sample {}: {e}", id.n, id.index));
                continue;
            }
        };
        let scaled = if metric.cond_scaled {
            m.error / m.cond
        } else {
            m.error
        };
        if !scaled.is_finite() {
            report.failures += 1;
            report.first_error.get_or_insert_with(|| {
                format!("n = {} sample {}: non-finite error", id.n, id.index)
            });
            continue;
        }
        report.per_sample.push((*id, scaled));
        if scaled > metric.tolerance {
            report.failures += 1;
        }
        if report.worst.is_none() || scaled > report.max_error {
            report.max_error = scaled;
            report.worst = Some(*id);
        }
        report.max_raw_error = report.max_raw_error.max(m.error);
        report.max_cond = report.max_cond.max(m.cond);
    }
    report.passed = report.failures == 0 && !results.is_empty();
    report
}

fn dims_of(sweep: &Sweep) -> String {
    match &sweep.point {
        Some(c) => format!("explicit point, n = {}", c.n()),
        None => format!("{} samples × n ∈ {:?}", sweep.samples, sweep.dims),
    }
}

/// Criterion 1: the slice point lies on the zero level of the momentum map.
pub fn check_constraint(sweep: &Sweep, tol: &Tolerances, faults: Faults) -> Vec<CheckReport> {
    run_checks(
        sweep,
        AngleFilter::None,
        vec![Metric::new("constraint", 1, tol.constraint)],
        |s| {
            let x = CrossSection::build_with_faults(&s.coords, &s.params, faults)?.point;
            let (left, right) = momentum_map(&x)?;
            Ok(vec![Measure::plain(max_abs(&left).max(max_abs(&right)))])
        },
    )
}

/// Criterion 2: unitarity, reflection, square-root and vector relations of
/// the slice chain.
pub fn check_structure(sweep: &Sweep, tol: &Tolerances, faults: Faults) -> Vec<CheckReport> {
    run_checks(
        sweep,
        AngleFilter::None,
        vec![
            Metric::new("structure-unitarity", 2, tol.structure),
            Metric::new("structure-reflection", 2, tol.structure),
            Metric::new("structure-square-root", 2, tol.structure),
            Metric::new("structure-vector", 2, tol.structure),
        ],
        |s| {
            let cs = CrossSection::build_with_faults(&s.coords, &s.params, faults)?;
            let unitary = [&cs.spectral.h, &cs.a, &cs.b, &cs.y]
                .iter()
                .map(|m| unitarity_residual(m))
                .fold(0.0, f64::max);
            let reflection = max_abs_diff(&gamma(&cs.a)?, &inverse(&cs.a)?)
                .max(max_abs_diff(&gamma(&cs.b)?, &inverse(&cs.b)?));
            let root = max_abs_diff(&(&cs.y * &cs.y), &cs.b);
            let n = s.params.n;
            let vector = (cs.v.norm_squared() - 2.0 * n as f64)
                .abs()
                .max((c_matrix(n) * &cs.v + &cs.v).camax());
            Ok(vec![
                Measure::plain(unitary),
                Measure::plain(reflection),
                Measure::plain(root),
                Measure::plain(vector),
            ])
        },
    )
}

/// Criterion 3: `φ_m`, `χ_k` on the slice against their closed forms in
/// `(λ, ϑ)`, for `m, k ≤ 2n + 2`.
pub fn check_reduction(sweep: &Sweep, tol: &Tolerances, faults: Faults) -> Vec<CheckReport> {
    run_checks(
        sweep,
        AngleFilter::None,
        vec![
            Metric::new("reduction-phi", 3, tol.reduction),
            Metric::new("reduction-chi", 3, tol.reduction),
        ],
        |s| {
            let (c, p) = (&s.coords, &s.params);
            let x = CrossSection::build_with_faults(c, p, faults)?.point;
            let top = 2 * p.n as u32 + 2;
            let mut e_phi: f64 = 0.0;
            for m in 1..=top {
                e_phi = e_phi.max(rel_err(phi(m, &x)?, phi_red(m, &c.lambda)?));
            }
            let mut e_chi: f64 = 0.0;
            for k in 0..=top {
                e_chi = e_chi.max(rel_err(chi(k, &x, p)?, chi_red(k, c, p)?));
            }
            Ok(vec![Measure::plain(e_phi), Measure::plain(e_chi)])
        },
    )
}

/// `(y e^{tξ}, Y + tΔY, e^{tD} υ e^{−tD})` with `D ∈ 𝔊₊`.
fn along(x: &PhasePoint, xi: &CMat, dy: &CMat, d: &CMat, t: f64) -> PhasePoint {
    let g = exp_anti_hermitian(&(d * c(t)));
    PhasePoint {
        group: &x.group * exp_anti_hermitian(&(xi * c(t))),
        fiber: &x.fiber + dy * c(t),
        orbit_left: &g * &x.orbit_left * g.adjoint(),
        orbit_right: x.orbit_right.clone(),
    }
}

/// Criterion 4: analytic differentials of `φ_m`, `χ_k` against central
/// differences along one random curve through each sample.
pub fn check_derivatives(sweep: &Sweep, tol: &Tolerances, step: f64) -> Vec<CheckReport> {
    let seed = sweep.seed;
    run_checks(
        sweep,
        AngleFilter::None,
        vec![
            Metric::new("derivative-phi", 4, tol.derivative),
            Metric::new("derivative-chi", 4, tol.derivative),
        ],
        |s| {
            let p = &s.params;
            let x = CrossSection::build(&s.coords, p)?.point;
            let dim = 2 * p.n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1ff);
            rng.set_stream(((p.n as u64) << 32) | s.index as u64);
            let xi = random_anti_hermitian(&mut rng, dim);
            let dy = random_anti_hermitian(&mut rng, dim);
            let d = plus_part(&random_anti_hermitian(&mut rng, dim))?;
            let v = TangentVector {
                d_group: &x.group * &xi,
                d_fiber: dy.clone(),
                d_orbit: commutator(&d, &x.orbit_left),
            };
            let (fw, bw) = (
                along(&x, &xi, &dy, &d, step),
                along(&x, &xi, &dy, &d, -step),
            );
            let top = 2 * p.n as u32 + 2;
            let mut e_phi: f64 = 0.0;
            for m in 1..=top {
                let fd = (phi(m, &fw)? - phi(m, &bw)?) / (2.0 * step);
                e_phi = e_phi.max(rel_err(fd, d_phi(m, &x, &v)?));
            }
            let mut e_chi: f64 = 0.0;
            for k in 0..=top {
                let fd = (chi(k, &fw, p)? - chi(k, &bw, p)?) / (2.0 * step);
                e_chi = e_chi.max(rel_err(fd, d_chi(k, &x, p, &v)?));
            }
            Ok(vec![Measure::plain(e_phi), Measure::plain(e_chi)])
        },
    )
}

/// Criterion 5: `{χ_k, φ_m}` from the form against its closed form and
/// against `2χ_{k+m−1}` in `(λ, ϑ)`, for even `k, m ≤ 2n`.
pub fn check_brackets(sweep: &Sweep, tol: &Tolerances, faults: Faults) -> Vec<CheckReport> {
    run_checks(
        sweep,
        AngleFilter::None,
        vec![
            Metric::new("bracket-closed-form", 5, tol.bracket),
            Metric::new("bracket-reduced", 5, tol.bracket),
        ],
        |s| {
            let ctx = BracketContext::with_faults(&s.coords, &s.params, faults)?;
            let x = &ctx.section.point;
            let evens = Window::Default.even(s.params.n);
            let (mut e_closed, mut e_red): (f64, f64) = (0.0, 0.0);
            for &k in &evens {
                for &m in &evens {
                    let b = ctx.bracket(Observable::Chi(k), Observable::Phi(m))?;
                    e_closed = e_closed.max(rel_err(b, chi_phi_closed(k, m, x, &s.params)?));
                    let reduced = 2.0 * chi_red(k + m - 1, &s.coords, &s.params)?;
                    e_red = e_red.max(rel_err(b, reduced));
                }
            }
            Ok(vec![Measure::plain(e_closed), Measure::plain(e_red)])
        },
    )
}

/// Criterion 6: the coordinate bracket matrices extracted from the
/// invariant families, plus the window-overdetermination consistency.
pub fn check_lemmas(sweep: &Sweep, tol: &Tolerances, faults: Faults) -> Vec<CheckReport> {
    let mut reports = run_checks(
        sweep,
        AngleFilter::AwayFromAxes,
        vec![
            Metric::scaled("lemma-lambda-lambda", 6, tol.lambda_lambda),
            Metric::scaled("lemma-lambda-angle", 6, tol.lambda_angle),
            Metric::scaled("lemma-angle-angle", 6, tol.angle_angle),
            Metric::scaled("lemma-window", 6, tol.lambda_lambda),
            Metric::scaled("lemma-lambda-angle-negated", 6, tol.lambda_angle),
        ],
        |s| {
            let ctx = BracketContext::with_faults(&s.coords, &s.params, faults)?;
            let a = ctx.extract_all(Window::Default)?;
            let b = ctx.extract_all(Window::Shifted)?;
            let id = RMat::identity(s.params.n, s.params.n);
            let mut window = Measure::scaled(0.0, 1.0);
            for (x, y) in [(&a.p, &b.p), (&a.q, &b.q), (&a.r, &b.r)] {
                let cond = x.cond().max(y.cond());
                let e = (&x.matrix - &y.matrix).amax();
                if e / cond >= window.error / window.cond {
                    window = Measure::scaled(e, cond);
                }
            }
            let p_err = a.p.matrix.amax().max(a.p.antisymmetry);
            let r_err = a.r.matrix.amax().max(a.r.antisymmetry);
            Ok(vec![
                Measure::scaled(p_err, a.p.cond()),
                Measure::scaled((&a.q.matrix - &id).amax(), a.q.cond()),
                Measure::scaled(r_err, a.r.cond()),
                window,
                Measure::scaled((&a.q.matrix + &id).amax(), a.q.cond()),
            ])
        },
    );
    let negated = reports.pop().expect("five metrics");
    if let Some(q) = reports.iter_mut().find(|r| r.name == "lemma-lambda-angle") {
        q.note = Some(format!(
            "against −𝟙 instead: max error/cond {:.3e} ({} of {} samples over tolerance)",
            negated.max_error, negated.failures, negated.samples
        ));
    }
    reports
}

/// Odd index pairs `k < l` from `{1, 3, …, 2n + 1}`.
fn odd_pairs(n: usize) -> Vec<(u32, u32)> {
    let odd: Vec<u32> = (0..=n as u32).map(|j| 2 * j + 1).collect();
    let mut out = Vec::new();
    for (i, &k) in odd.iter().enumerate() {
        for &l in &odd[i + 1..] {
            out.push((k, l));
        }
    }
    out
}

/// Criterion 7: the summands of `{χ_k, χ_l}` against their closed forms.
/// The orbit summand is compared both with the displayed formula and with
/// the version carrying the `(λ_a ± λ_b)` numerator factor.
pub fn check_terms(sweep: &Sweep, tol: &Tolerances, faults: Faults) -> Vec<CheckReport> {
    let mut reports = run_checks(
        sweep,
        AngleFilter::None,
        vec![
            Metric::new("term-first", 7, tol.term),
            Metric::new("term-second", 7, tol.term),
            Metric::new("term-first-minus-second", 7, tol.term),
            Metric::new("term-third", 7, tol.third_term),
            Metric::new("term-orbit-printed", 7, tol.term),
            Metric::new("term-orbit-recovered", 7, tol.term),
            Metric::new("term-total", 7, tol.term),
            Metric::new("term-third-relative", 7, tol.third_term),
        ],
        |s| {
            let ctx = BracketContext::with_faults(&s.coords, &s.params, faults)?;
            let mut worst = [0.0f64; 8];
            for (k, l) in odd_pairs(s.params.n) {
                let r = ctx.check_term_identities(k, l)?;
                let errs = [
                    r.first.error,
                    r.second.error,
                    r.difference.error,
                    r.third.abs(),
                    r.orbit_as_printed.error,
                    r.orbit.error,
                    r.total.error,
                    r.third.abs() / r.first.numeric.abs().max(r.second.numeric.abs()).max(1.0),
                ];
                for (w, e) in worst.iter_mut().zip(errs) {
                    *w = w.max(e);
                }
            }
            Ok(worst.iter().map(|&e| Measure::plain(e)).collect())
        },
    );
    let relative = reports.pop().expect("eight metrics");
    if let Some(t) = reports.iter_mut().find(|r| r.name == "term-third") {
        t.note = Some(format!(
            "relative to the first and second summands: max {:.3e}",
            relative.max_error
        ));
    }
    reports
}

/// Criterion 8: the form pulled back along finite-difference slice
/// tangents is `Σ dλ_a ∧ dϑ_a`.
pub fn check_pullback(
    sweep: &Sweep,
    tol: &Tolerances,
    step: f64,
    faults: Faults,
) -> Vec<CheckReport> {
    run_checks(
        sweep,
        AngleFilter::None,
        vec![Metric::new("pullback", 8, tol.pullback)],
        |s| {
            let m = pullback_matrix_with_faults(&s.coords, &s.params, step, faults)?;
            Ok(vec![Measure::plain(
                (&m - canonical_form(s.params.n)).amax(),
            )])
        },
    )
}

/// Everything compared across the `κ → 0` limit at one point.
fn limit_snapshot(
    coords: &DualCoordinates,
    p: &ModelParams,
    step: f64,
) -> Result<(PhasePoint, Vec<f64>, RMat, Vec<RMat>)> {
    let ctx = BracketContext::new(coords, p)?;
    let x = ctx.section.point.clone();
    let top = 2 * p.n as u32 + 2;
    let values = (0..=top)
        .map(|k| chi(k, &x, p))
        .chain((1..=top).map(|m| phi(m, &x)))
        .collect::<Result<Vec<_>>>()?;
    let pullback = pullback_matrix_with_faults(coords, p, step, Faults::NONE)?;
    let b = ctx.extract_all(Window::Default)?;
    Ok((
        x,
        values,
        pullback,
        vec![b.p.matrix, b.q.matrix, b.r.matrix],
    ))
}

/// Criterion 9, second half: the outputs of the checks (slice point,
/// extracted bracket matrices, pullback matrix) at `κ = 10⁻⁶` against
/// `κ = 0` at the same `(λ, ϑ)`. The first half reruns criteria 1–8 with
/// `κ` pinned to 0 (see [`run`]).
///
/// The invariants themselves depend on κ linearly (the even `χ_k` carry a
/// `κ λ^{k−1}` term), so their drift is reported in the note rather than
/// held to the continuity tolerance.
pub fn check_continuity(sweep: &Sweep, tol: &Tolerances, step: f64) -> Vec<CheckReport> {
    let zero = sweep.pinned_kappa(0.0);
    let mut reports = run_checks(
        &zero,
        AngleFilter::AwayFromAxes,
        vec![
            Metric::new("kappa-continuity", 9, tol.continuity),
            Metric::new("kappa-observable-drift", 9, tol.continuity),
        ],
        |s| {
            let near = ModelParams {
                kappa: CONTINUITY_KAPPA,
                ..s.params
            };
            let (x0, v0, m0, e0) = limit_snapshot(&s.coords, &s.params, step)?;
            let (x1, v1, m1, e1) = limit_snapshot(&s.coords, &near, step)?;
            let mut err = [
                rel_diff(&x0.group, &x1.group),
                rel_diff(&x0.fiber, &x1.fiber),
                rel_diff(&x0.orbit_left, &x1.orbit_left),
                rel_diff(&x0.orbit_right, &x1.orbit_right),
                (&m0 - &m1).amax(),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            for (a, b) in e0.iter().zip(&e1) {
                err = err.max((a - b).amax());
            }
            let drift = v0
                .iter()
                .zip(&v1)
                .map(|(a, b)| rel_err(*a, *b))
                .fold(0.0, f64::max);
            Ok(vec![Measure::plain(err), Measure::plain(drift)])
        },
    );
    let drift = reports.pop().expect("two metrics");
    if let Some(r) = reports.first_mut() {
        r.note = Some(format!(
            "largest relative change of a φ_m or χ_k value: {:.3e}",
            drift.max_error
        ));
    }
    reports
}

/// Criterion 10: each injected fault must push a check that passes on the
/// clean construction (`λ`–`λ` and `ϑ`–`ϑ` extraction, pullback) over its
/// tolerance on at least one sample. Reported as the largest
/// error-to-tolerance ratio seen under the fault, which passes above 1.
/// A sample the faulted construction cannot even evaluate counts as
/// detected.
pub fn check_mutations(sweep: &Sweep, tol: &Tolerances, step: f64) -> Vec<CheckReport> {
    let faults = [
        (
            "mutation-drop-coupling",
            Faults::from_name("drop-coupling").expect("known fault"),
        ),
        (
            "mutation-flip-orbit-sign",
            Faults::from_name("flip-orbit-sign").expect("known fault"),
        ),
    ];
    faults
        .iter()
        .map(|&(name, fault)| {
            let mut watched: Vec<CheckReport> = check_lemmas(sweep, tol, fault)
                .into_iter()
                .filter(|r| r.name == "lemma-lambda-lambda" || r.name == "lemma-angle-angle")
                .collect();
            watched.extend(check_pullback(sweep, tol, step, fault));
            let mut ratio: f64 = 0.0;
            let mut unevaluated = 0;
            let mut detected_by = Vec::new();
            for r in &watched {
                ratio = ratio.max(r.max_error / r.tolerance);
                if r.first_error.is_some() {
                    unevaluated = unevaluated.max(r.failures);
                }
                if !r.passed {
                    detected_by.push(r.name.clone());
                }
            }
            let detected = !detected_by.is_empty();
            let mut note = if detected {
                format!("detected by {}", detected_by.join(", "))
            } else {
                "fault not detected".to_string()
            };
            if unevaluated > 0 {
                note.push_str(&format!("; up to {unevaluated} samples rejected outright"));
            }
            CheckReport {
                name: name.to_string(),
                criterion: 10,
                passed: detected,
                max_error: ratio,
                tolerance: 1.0,
                cond_scaled: false,
                max_raw_error: ratio,
                max_cond: 0.0,
                samples: watched.first().map_or(0, |r| r.samples),
                failures: usize::from(!detected),
                worst: None,
                first_error: None,
                note: Some(note),
                per_sample: Vec::new(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionStatus {
    pub criterion: u8,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: String,
    pub config: RunConfig,
    pub sweep: String,
    pub checks: Vec<CheckReport>,
    pub criteria: Vec<CriterionStatus>,
    pub passed: bool,
    /// Wall-clock seconds; the only field that differs between repeated
    /// runs of one configuration.
    pub elapsed_seconds: f64,
}

impl VerificationReport {
    pub fn new(config: RunConfig, checks: Vec<CheckReport>, elapsed_seconds: f64) -> Self {
        let mut criteria: Vec<CriterionStatus> = Vec::new();
        for r in &checks {
            match criteria.iter_mut().find(|c| c.criterion == r.criterion) {
                Some(c) => c.passed &= r.passed,
                None => criteria.push(CriterionStatus {
                    criterion: r.criterion,
                    passed: r.passed,
                }),
            }
        }
        criteria.sort_by_key(|c| c.criterion);
        let passed = checks.iter().all(|r| r.passed);
        VerificationReport {
            schema: SCHEMA.to_string(),
            sweep: dims_of(&config.sweep),
            config,
            checks,
            criteria,
            passed,
            elapsed_seconds,
        }
    }
}

/// Criteria 1–8 on one sweep.
pub fn core_checks(config: &RunConfig, sweep: &Sweep) -> Vec<CheckReport> {
    let (tol, faults) = (&config.tolerances, config.faults);
    let mut out = Vec::new();
    out.extend(check_constraint(sweep, tol, faults));
    out.extend(check_structure(sweep, tol, faults));
    out.extend(check_reduction(sweep, tol, faults));
    out.extend(check_derivatives(sweep, tol, config.fd_step));
    out.extend(check_brackets(sweep, tol, faults));
    out.extend(check_lemmas(sweep, tol, faults));
    out.extend(check_terms(sweep, tol, faults));
    out.extend(check_pullback(sweep, tol, config.pullback_step, faults));
    out
}

/// All ten criteria on the configured sweep. The `κ = 0` rerun keeps the
/// sweep's seed and counts.
pub fn run(config: &RunConfig) -> Result<VerificationReport> {
    config.sweep.explicit_params()?;
    if !(config.fd_step > 0.0) || !(config.pullback_step > 0.0) {
        return Err(Error::InvalidParams(
            "finite-difference steps must be positive".into(),
        ));
    }
    if config.sweep.point.is_none() && (config.sweep.dims.is_empty() || config.sweep.samples == 0) {
        return Err(Error::InvalidParams("empty sweep".into()));
    }
    let start = Instant::now();
    let mut checks = core_checks(config, &config.sweep);
    let zero = config.sweep.pinned_kappa(0.0);
    for mut r in core_checks(config, &zero) {
        r.name = format!("kappa-zero/{}", r.name);
        r.criterion = 9;
        checks.push(r);
    }
    checks.extend(check_continuity(
        &config.sweep,
        &config.tolerances,
        config.pullback_step,
    ));
    checks.extend(check_mutations(
        &config.sweep,
        &config.tolerances,
        config.pullback_step,
    ));
    Ok(VerificationReport::new(
        config.clone(),
        checks,
        start.elapsed().as_secs_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Sweep {
        Sweep::new(vec![1, 2], 3, 11)
    }

    #[test]
    fn default_tolerances_are_pinned() {
        let t = Tolerances::default();
        assert_eq!(
            [
                t.constraint,
                t.structure,
                t.reduction,
                t.derivative,
                t.bracket
            ],
            [1e-9, 1e-10, 1e-10, 1e-6, 1e-9]
        );
        assert_eq!(
            [t.lambda_lambda, t.lambda_angle, t.angle_angle],
            [1e-8, 1e-8, 1e-7]
        );
        assert_eq!(
            [t.term, t.third_term, t.pullback, t.continuity],
            [1e-9, 1e-10, 1e-6, 1e-4]
        );
        let mut u = Tolerances::uniform(1.0);
        u.set("third-term", 2.0).unwrap();
        assert_eq!(u.third_term, 2.0);
        assert!(u.set("nonsense", 1.0).is_err());
    }

    #[test]
    fn passing_checks_on_a_small_sweep() {
        let tol = Tolerances::default();
        for r in check_constraint(&small(), &tol, Faults::NONE)
            .into_iter()
            .chain(check_structure(&small(), &tol, Faults::NONE))
            .chain(check_reduction(&small(), &tol, Faults::NONE))
            .chain(check_pullback(
                &small(),
                &tol,
                DEFAULT_FD_STEP,
                Faults::NONE,
            ))
        {
            assert!(r.passed, "{r:?}");
            assert_eq!(r.samples, 6);
            assert_eq!(r.per_sample.len(), 6);
        }
    }

    #[test]
    fn unreachable_tolerance_fails_with_measured_errors() {
        let tol = Tolerances::uniform(1e-20);
        let r = &check_constraint(&small(), &tol, Faults::NONE)[0];
        assert!(!r.passed);
        assert!(r.max_error > 1e-20 && r.max_error.is_finite());
        assert!(r.worst.is_some());
    }

    #[test]
    fn reports_are_deterministic() {
        let tol = Tolerances::default();
        let a = check_lemmas(&small(), &tol, Faults::NONE);
        let b = check_lemmas(&small(), &tol, Faults::NONE);
        assert_eq!(a, b);
    }

    #[test]
    fn explicit_point_needs_all_couplings() {
        let mut s = Sweep {
            point: Some(DualCoordinates::new(vec![3.0], vec![0.7])),
            ..Sweep::default()
        };
        assert!(s.explicit_params().is_err());
        s.couplings = Couplings {
            mu: Some(0.1),
            nu: Some(1.0),
            kappa: Some(0.5),
        };
        let (_, p) = s.explicit_params().unwrap().unwrap();
        assert_eq!(p.n, 1);
        assert_eq!(s.ids().len(), 1);
        let r = &check_constraint(&s, &Tolerances::default(), Faults::NONE)[0];
        assert!(r.passed && r.samples == 1);
    }

    #[test]
    fn overall_status_is_a_conjunction() {
        let mut checks = check_constraint(&small(), &Tolerances::default(), Faults::NONE);
        let report = VerificationReport::new(RunConfig::default(), checks.clone(), 0.0);
        assert!(report.passed);
        checks[0].passed = false;
        let report = VerificationReport::new(RunConfig::default(), checks, 0.0);
        assert!(!report.passed);
        assert_eq!(
            report.criteria,
            vec![CriterionStatus {
                criterion: 1,
                passed: false
            }]
        );
    }

    #[test]
    fn odd_pair_windows() {
        assert_eq!(odd_pairs(1), vec![(1, 3)]);
        assert_eq!(odd_pairs(2), vec![(1, 3), (1, 5), (3, 5)]);
    }
}
