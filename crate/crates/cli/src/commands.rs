use anyhow::{bail, Result};

use darboux_core::algebra::{c_matrix, gamma};
use darboux_core::constraints::{momentum_map, orbit_membership};
use darboux_core::lemmas::{BracketContext, Window};
use darboux_core::linalg::{max_abs, max_abs_diff, unitarity_residual, CMat, RMat};
use darboux_core::sampling::{AngleFilter, Sample};
use darboux_core::symplectic::{canonical_form, pullback_matrix_with_faults};
use darboux_core::verify::{self, RunConfig, SampleId};
use darboux_core::CrossSection;

use crate::report::{
    BracketSample, PointReport, PullbackSample, Residual, SampleHeader, SweepReport,
    BRACKETS_SCHEMA, POINT_SCHEMA, PULLBACK_SCHEMA,
};

fn reflection_residual(m: &CMat) -> Result<f64> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| anyhow::anyhow!("singular matrix in reflection check"))?;
    Ok(max_abs_diff(&gamma(m)?, &inv))
}

pub fn point(run: &RunConfig) -> Result<PointReport> {
    let Some((coords, p)) = run.sweep.explicit_params()? else {
        bail!("point needs --lambda, --theta, --mu, --nu and --kappa");
    };
    let tol = &run.tolerances;
    let cs = CrossSection::build_with_faults(&coords, &p, run.faults)?;
    let n = p.n;
    let (left, right) = momentum_map(&cs.point)?;
    let unitarity = [&cs.spectral.h, &cs.a, &cs.b, &cs.y]
        .iter()
        .map(|m| unitarity_residual(m))
        .fold(0.0, f64::max);
    let reflection = reflection_residual(&cs.a)?.max(reflection_residual(&cs.b)?);
    let membership = orbit_membership(&cs.point.orbit_left, &p)?;
    let orbit = membership
        .hermitian_residual
        .max(membership.trace_error)
        .max(membership.reflection_residual)
        .max(membership.rank_ratio)
        .max(membership.negativity);
    let residuals = vec![
        Residual::new(
            "constraint",
            max_abs(&left).max(max_abs(&right)),
            tol.constraint,
        ),
        Residual::new("unitarity", unitarity, tol.structure),
        Residual::new("reflection", reflection, tol.structure),
        Residual::new(
            "square-root",
            max_abs_diff(&(&cs.y * &cs.y), &cs.b),
            tol.structure,
        ),
        Residual::new(
            "vector-norm",
            (cs.v.norm_squared() - 2.0 * n as f64).abs(),
            tol.structure,
        ),
        Residual::new(
            "vector-reflection",
            (c_matrix(n) * &cs.v + &cs.v).camax(),
            tol.structure,
        ),
        Residual::new("orbit-membership", orbit, tol.constraint),
    ];
    Ok(PointReport {
        schema: POINT_SCHEMA,
        n,
        mu: p.mu,
        nu: p.nu,
        kappa: p.kappa,
        lambda: coords.lambda.clone(),
        theta: coords.theta.clone(),
        passed: residuals.iter().all(|r| r.passed),
        residuals,
        q: cs.q.clone(),
        h: (&cs.spectral.h).into(),
        y: (&cs.y).into(),
        fiber: (&cs.point.fiber).into(),
        orbit_left: (&cs.point.orbit_left).into(),
        orbit_right: (&cs.point.orbit_right).into(),
        v: (&cs.v).into(),
    })
}

pub fn verify(run: &RunConfig) -> Result<verify::VerificationReport> {
    // Surface configuration problems before the sweep starts.
    run.sweep.explicit_params()?;
    Ok(verify::run(run)?)
}

fn header(id: SampleId, s: &Sample) -> SampleHeader {
    SampleHeader {
        n: id.n,
        index: id.index,
        mu: s.params.mu,
        nu: s.params.nu,
        kappa: s.params.kappa,
        lambda: s.coords.lambda.clone(),
        theta: s.coords.theta.clone(),
    }
}

/// Evaluate `f` on every sample of the sweep. An explicit point that cannot
/// be evaluated is a usage error; a random sample that cannot is recorded.
fn sweep<T>(
    run: &RunConfig,
    filter: AngleFilter,
    schema: &'static str,
    mut f: impl FnMut(SampleHeader, &Sample) -> Result<T>,
    passed: impl Fn(&T) -> bool,
) -> Result<SweepReport<T>> {
    let explicit = run.sweep.point.is_some();
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for id in run.sweep.ids() {
        let outcome = run
            .sweep
            .draw(id, filter)
            .map_err(anyhow::Error::from)
            .and_then(|s| f(header(id, &s), &s));
        match outcome {
            Ok(t) => samples.push(t),
            Err(e) if explicit => return Err(e),
            Err(e) => {
                log::warn!("n = {} sample {}: {e}", id.n, id.index);
                errors.push(format!("n = {} sample {}: {e}", id.n, id.index));
            }
        }
    }
    Ok(SweepReport {
        schema,
        seed: run.sweep.seed,
        passed: errors.is_empty() && samples.iter().all(passed),
        samples,
        errors,
    })
}

pub fn brackets(run: &RunConfig) -> Result<SweepReport<BracketSample>> {
    let tol = run.tolerances;
    sweep(
        run,
        AngleFilter::AwayFromAxes,
        BRACKETS_SCHEMA,
        |header, s| {
            let ctx = BracketContext::with_faults(&s.coords, &s.params, run.faults)?;
            let b = ctx.extract_all(Window::Default)?;
            let id = RMat::identity(s.params.n, s.params.n);
            let p_err = b.p.matrix.amax().max(b.p.antisymmetry);
            let r_err = b.r.matrix.amax().max(b.r.antisymmetry);
            let residuals = vec![
                Residual::new("lambda-lambda/cond", p_err / b.p.cond(), tol.lambda_lambda),
                Residual::new(
                    "lambda-angle/cond",
                    (&b.q.matrix - &id).amax() / b.q.cond(),
                    tol.lambda_angle,
                ),
                Residual::new("angle-angle/cond", r_err / b.r.cond(), tol.angle_angle),
            ];
            Ok(BracketSample {
                sample: header,
                passed: residuals.iter().all(|r| r.passed),
                residuals,
                cond_u: b.cond_u,
                cond_w: b.cond_w,
                p: (&b.p.matrix).into(),
                q: (&b.q.matrix).into(),
                r: (&b.r.matrix).into(),
            })
        },
        |s| s.passed,
    )
}

pub fn pullback(run: &RunConfig) -> Result<SweepReport<PullbackSample>> {
    let tol = run.tolerances.pullback;
    sweep(
        run,
        AngleFilter::None,
        PULLBACK_SCHEMA,
        |header, s| {
            let m =
                pullback_matrix_with_faults(&s.coords, &s.params, run.pullback_step, run.faults)?;
            let err = (&m - canonical_form(s.params.n)).amax();
            let residuals = vec![Residual::new("pullback", err, tol)];
            Ok(PullbackSample {
                sample: header,
                passed: residuals[0].passed,
                residuals,
                matrix: (&m).into(),
            })
        },
        |s| s.passed,
    )
}
