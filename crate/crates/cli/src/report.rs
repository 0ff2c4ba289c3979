//! Report documents and their text/JSON/CSV renderings. Matrices are
//! written row-major as `[re, im]` pairs, real matrices included.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use darboux_core::linalg::{CMat, CVec, RMat};
use darboux_core::verify::{SampleId, VerificationReport};

use crate::config::Format;

pub const POINT_SCHEMA: &str = "darboux-point/1";
pub const BRACKETS_SCHEMA: &str = "darboux-brackets/1";
pub const PULLBACK_SCHEMA: &str = "darboux-pullback/1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMat> for MatrixJson {
    fn from(m: &CMat) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| [m[(i, j)].re, m[(i, j)].im])
            .collect();
        MatrixJson { rows, cols, data }
    }
}

impl From<&CVec> for MatrixJson {
    fn from(v: &CVec) -> Self {
        MatrixJson {
            rows: v.len(),
            cols: 1,
            data: v.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl From<&RMat> for MatrixJson {
    fn from(m: &RMat) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| [m[(i, j)], 0.0]))
            .collect();
        MatrixJson { rows, cols, data }
    }
}

/// A named quantity held to a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residual {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Residual {
    pub fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Residual {
            name: name.to_string(),
            value,
            tolerance,
            passed: value.is_finite() && value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub schema: &'static str,
    pub n: usize,
    pub mu: f64,
    pub nu: f64,
    pub kappa: f64,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    pub passed: bool,
    pub residuals: Vec<Residual>,
    /// Half-phases of `B`.
    pub q: Vec<f64>,
    pub h: MatrixJson,
    pub y: MatrixJson,
    pub fiber: MatrixJson,
    pub orbit_left: MatrixJson,
    pub orbit_right: MatrixJson,
    pub v: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleHeader {
    pub n: usize,
    pub index: usize,
    pub mu: f64,
    pub nu: f64,
    pub kappa: f64,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketSample {
    pub sample: SampleHeader,
    pub passed: bool,
    pub residuals: Vec<Residual>,
    pub cond_u: f64,
    pub cond_w: f64,
    /// `{λ_a, λ_b}`
    pub p: MatrixJson,
    /// `Q_{b,a} = {λ_a, ϑ_b}`
    pub q: MatrixJson,
    /// `{ϑ_a, ϑ_b}`
    pub r: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackSample {
    pub sample: SampleHeader,
    pub passed: bool,
    pub residuals: Vec<Residual>,
    /// Ordered `(λ_1..λ_n, ϑ_1..ϑ_n)`.
    pub matrix: MatrixJson,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport<T> {
    pub schema: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub samples: Vec<T>,
    /// Samples that could not be evaluated.
    pub errors: Vec<String>,
}

/// Anything renderable by the CLI.
pub trait Document: Serialize {
    fn passed(&self) -> bool;
    fn text(&self) -> String;
    /// `(check, n, index, error)` rows for the CSV side output.
    fn csv_rows(&self) -> Vec<(String, SampleId, f64)>;
}

fn residual_lines(out: &mut String, residuals: &[Residual]) {
    for r in residuals {
        out.push_str(&format!(
            "  {:<28} {:>11.3e}  (tol {:.0e}) {}\n",
            r.name,
            r.value,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        ));
    }
}

fn status(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn matrix_text(name: &str, m: &MatrixJson) -> String {
    let mut s = format!("{name} ({}×{}):\n", m.rows, m.cols);
    let real = m.data.iter().all(|z| z[1] == 0.0);
    for i in 0..m.rows {
        s.push_str("  ");
        for j in 0..m.cols {
            let [re, im] = m.data[i * m.cols + j];
            if real {
                s.push_str(&format!("{re:>11.4e} "));
            } else {
                s.push_str(&format!("{re:>10.4e}{im:+.4e}i "));
            }
        }
        s.push('\n');
    }
    s
}

impl Document for PointReport {
    fn passed(&self) -> bool {
        self.passed
    }

    fn text(&self) -> String {
        let mut s = format!(
            "slice point n = {}, μ = {}, ν = {}, κ = {}\nλ = {:?}\nϑ = {:?}\nq = {:?}\n{}\n",
            self.n,
            self.mu,
            self.nu,
            self.kappa,
            self.lambda,
            self.theta,
            self.q,
            status(self.passed)
        );
        residual_lines(&mut s, &self.residuals);
        for (name, m) in [
            ("h", &self.h),
            ("y", &self.y),
            ("Y", &self.fiber),
            ("υ^ℓ", &self.orbit_left),
            ("υ^r", &self.orbit_right),
            ("V", &self.v),
        ] {
            s.push_str(&matrix_text(name, m));
        }
        s
    }

    fn csv_rows(&self) -> Vec<(String, SampleId, f64)> {
        let id = SampleId {
            n: self.n,
            index: 0,
        };
        self.residuals
            .iter()
            .map(|r| (r.name.clone(), id, r.value))
            .collect()
    }
}

fn sample_line(h: &SampleHeader) -> String {
    format!(
        "sample n = {} #{}: μ = {:.4}, ν = {:.4}, κ = {:.4}, λ = {:.4?}, ϑ = {:.4?}",
        h.n, h.index, h.mu, h.nu, h.kappa, h.lambda, h.theta
    )
}

impl<T: Serialize + SweepItem> Document for SweepReport<T> {
    fn passed(&self) -> bool {
        self.passed
    }

    fn text(&self) -> String {
        let mut s = format!(
            "{} — {} samples, seed {}: {}\n",
            self.schema,
            self.samples.len(),
            self.seed,
            status(self.passed)
        );
        for item in &self.samples {
            s.push_str(&item.text());
        }
        for e in &self.errors {
            s.push_str(&format!("error: {e}\n"));
        }
        s
    }

    fn csv_rows(&self) -> Vec<(String, SampleId, f64)> {
        self.samples.iter().flat_map(|s| s.rows()).collect()
    }
}

pub trait SweepItem {
    fn header(&self) -> &SampleHeader;
    fn residuals(&self) -> &[Residual];
    fn text(&self) -> String;

    fn rows(&self) -> Vec<(String, SampleId, f64)> {
        let h = self.header();
        let id = SampleId {
            n: h.n,
            index: h.index,
        };
        self.residuals()
            .iter()
            .map(|r| (r.name.clone(), id, r.value))
            .collect()
    }
}

impl SweepItem for BracketSample {
    fn header(&self) -> &SampleHeader {
        &self.sample
    }

    fn residuals(&self) -> &[Residual] {
        &self.residuals
    }

    fn text(&self) -> String {
        let mut s = format!("{} {}\n", sample_line(&self.sample), status(self.passed));
        residual_lines(&mut s, &self.residuals);
        s.push_str(&format!(
            "  cond U {:.3e}, cond W {:.3e}\n",
            self.cond_u, self.cond_w
        ));
        for (name, m) in [("P", &self.p), ("Q", &self.q), ("R", &self.r)] {
            s.push_str(&matrix_text(name, m));
        }
        s
    }
}

impl SweepItem for PullbackSample {
    fn header(&self) -> &SampleHeader {
        &self.sample
    }

    fn residuals(&self) -> &[Residual] {
        &self.residuals
    }

    fn text(&self) -> String {
        let mut s = format!("{} {}\n", sample_line(&self.sample), status(self.passed));
        residual_lines(&mut s, &self.residuals);
        s.push_str(&matrix_text("pullback", &self.matrix));
        s
    }
}

impl Document for VerificationReport {
    fn passed(&self) -> bool {
        self.passed
    }

    fn text(&self) -> String {
        let mut s = format!(
            "{} — {}, seed {}: {} ({:.1}s)\n",
            self.schema,
            self.sweep,
            self.config.sweep.seed,
            status(self.passed),
            self.elapsed_seconds
        );
        for c in &self.criteria {
            s.push_str(&format!(
                "criterion {:>2}: {}\n",
                c.criterion,
                status(c.passed)
            ));
        }
        for r in &self.checks {
            if r.criterion == 10 {
                s.push_str(&format!(
                    "  [10] {:<40} {} (worst error {:.3e}× tolerance)\n",
                    r.name,
                    if r.passed { "detected" } else { "NOT detected" },
                    r.max_error
                ));
                if let Some(n) = &r.note {
                    s.push_str(&format!("       note: {n}\n"));
                }
                continue;
            }
            s.push_str(&format!(
                "  [{:>2}] {:<40} {:>11.3e} {} {:.0e}{} {}",
                r.criterion,
                r.name,
                r.max_error,
                if r.passed { "≤" } else { ">" },
                r.tolerance,
                if r.cond_scaled { "·cond" } else { "" },
                status(r.passed)
            ));
            if r.failures > 0 {
                s.push_str(&format!(" ({}/{} samples)", r.failures, r.samples));
            }
            s.push('\n');
            if let Some(e) = &r.first_error {
                s.push_str(&format!("       first error: {e}\n"));
            }
            if let Some(n) = &r.note {
                s.push_str(&format!("       note: {n}\n"));
            }
        }
        s
    }

    fn csv_rows(&self) -> Vec<(String, SampleId, f64)> {
        self.checks
            .iter()
            .flat_map(|c| {
                c.per_sample
                    .iter()
                    .map(move |(id, e)| (c.name.clone(), *id, *e))
            })
            .collect()
    }
}

pub fn render<D: Document>(doc: &D, format: Format) -> Result<String> {
    Ok(match format {
        Format::Text => doc.text(),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(doc)?;
            s.push('\n');
            s
        }
    })
}

pub fn emit<D: Document>(
    doc: &D,
    format: Format,
    out: Option<&Path>,
    csv_path: Option<&Path>,
) -> Result<()> {
    let body = render(doc, format)?;
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(body.as_bytes())?,
    }
    if let Some(p) = csv_path {
        let mut w =
            csv::Writer::from_path(p).with_context(|| format!("writing {}", p.display()))?;
        w.write_record(["check", "n", "index", "error"])?;
        for (check, id, e) in doc.csv_rows() {
            w.write_record([
                check,
                id.n.to_string(),
                id.index.to_string(),
                format!("{e:e}"),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
