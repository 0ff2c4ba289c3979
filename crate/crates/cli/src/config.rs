//! Command-line flags, the optional TOML config file, and their merge into
//! a [`RunConfig`]. Flags override file values; both override defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use darboux_core::sampling::{Couplings, SamplerConfig};
use darboux_core::verify::{RunConfig, Sweep, Tolerances};
use darboux_core::{DualCoordinates, Faults};

#[derive(Debug, Parser)]
#[command(
    name = "darboux",
    version,
    about = "Builds gauge-slice points of the BC(n) Sutherland dual and verifies that (λ, ϑ) are Darboux coordinates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the slice point for explicit (λ, ϑ) and dump it with its
    /// constraint residuals.
    Point,
    /// Run every acceptance check over the sample sweep.
    Verify,
    /// Extract the coordinate bracket matrices P, Q, R.
    Brackets,
    /// Pull the symplectic form back to (λ, ϑ).
    Pullback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// TOML file with the same keys as the long flags (snake_case).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Sweep several particle numbers at once, e.g. `--dims 1,2,3`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub nu: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    /// Samples per particle number.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Step of the derivative check.
    #[arg(long, global = true)]
    pub fd_step: Option<f64>,
    /// Step of the finite-difference slice tangents.
    #[arg(long, global = true)]
    pub pullback_step: Option<f64>,
    /// Set every tolerance at once (per-check flags still win).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub tol_constraint: Option<f64>,
    #[arg(long, global = true)]
    pub tol_structure: Option<f64>,
    #[arg(long, global = true)]
    pub tol_reduction: Option<f64>,
    #[arg(long, global = true)]
    pub tol_derivative: Option<f64>,
    #[arg(long, global = true)]
    pub tol_bracket: Option<f64>,
    #[arg(long, global = true)]
    pub tol_lambda_lambda: Option<f64>,
    #[arg(long, global = true)]
    pub tol_lambda_angle: Option<f64>,
    #[arg(long, global = true)]
    pub tol_angle_angle: Option<f64>,
    #[arg(long, global = true)]
    pub tol_term: Option<f64>,
    #[arg(long, global = true)]
    pub tol_third_term: Option<f64>,
    #[arg(long, global = true)]
    pub tol_pullback: Option<f64>,
    #[arg(long, global = true)]
    pub tol_continuity: Option<f64>,
    /// Report destination (default: stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Also write per-sample errors as CSV.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    #[arg(long, global = true, hide = true)]
    pub inject_fault: Option<String>,
}

impl Options {
    fn tolerance_flags(&self) -> [(&'static str, Option<f64>); 12] {
        [
            ("constraint", self.tol_constraint),
            ("structure", self.tol_structure),
            ("reduction", self.tol_reduction),
            ("derivative", self.tol_derivative),
            ("bracket", self.tol_bracket),
            ("lambda_lambda", self.tol_lambda_lambda),
            ("lambda_angle", self.tol_lambda_angle),
            ("angle_angle", self.tol_angle_angle),
            ("term", self.tol_term),
            ("third_term", self.tol_third_term),
            ("pullback", self.tol_pullback),
            ("continuity", self.tol_continuity),
        ]
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub dims: Option<Vec<usize>>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub kappa: Option<f64>,
    pub lambda: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub fd_step: Option<f64>,
    pub pullback_step: Option<f64>,
    pub tol: Option<f64>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub csv: Option<PathBuf>,
    pub sampler: Option<SamplerConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Everything a subcommand needs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        bail!("{name} must be a positive number, got {v}");
    }
    Ok(v)
}

pub fn resolve(opts: &Options) -> Result<Resolved> {
    let file = match &opts.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut run = RunConfig::default();

    let mut tol = match file.tol {
        Some(t) => Tolerances::uniform(positive("tol", t)?),
        None => Tolerances::default(),
    };
    for (name, t) in &file.tolerances {
        tol.set(name, positive(name, *t)?)?;
    }
    if let Some(t) = opts.tol {
        tol = Tolerances::uniform(positive("tol", t)?);
    }
    for (name, t) in opts.tolerance_flags() {
        if let Some(t) = t {
            tol.set(name, positive(name, t)?)?;
        }
    }
    run.tolerances = tol;

    if let Some(h) = opts.fd_step.or(file.fd_step) {
        run.fd_step = positive("fd-step", h)?;
    }
    if let Some(h) = opts.pullback_step.or(file.pullback_step) {
        run.pullback_step = positive("pullback-step", h)?;
    }
    if let Some(name) = &opts.inject_fault {
        run.faults = Faults::from_name(name).with_context(|| format!("unknown fault '{name}'"))?;
    }

    let couplings = Couplings {
        mu: opts.mu.or(file.mu),
        nu: opts.nu.or(file.nu),
        kappa: opts.kappa.or(file.kappa),
    };
    let lambda = opts.lambda.clone().or(file.lambda);
    let theta = opts.theta.clone().or(file.theta);
    let n = opts.n.or(file.n);
    let point = match (lambda, theta) {
        (None, None) => None,
        (Some(l), Some(t)) => {
            if l.len() != t.len() {
                bail!(
                    "--lambda has {} values but --theta has {}",
                    l.len(),
                    t.len()
                );
            }
            if let Some(n) = n {
                if n != l.len() {
                    bail!("--n {n} does not match {} values of λ", l.len());
                }
            }
            Some(DualCoordinates::new(l, t))
        }
        _ => bail!("--lambda and --theta must be given together"),
    };
    let dims = match (opts.dims.clone().or(file.dims), n) {
        (Some(d), _) => d,
        (None, Some(n)) => vec![n],
        (None, None) => point.as_ref().map_or(vec![2], |p| vec![p.n()]),
    };
    if dims.is_empty() || dims.contains(&0) {
        bail!("particle numbers must be positive");
    }
    let samples = opts.samples.or(file.samples).unwrap_or(50);
    if samples == 0 {
        bail!("--samples must be positive");
    }
    run.sweep = Sweep {
        dims,
        samples,
        seed: opts.seed.or(file.seed).unwrap_or(0),
        couplings,
        point,
        sampler: file.sampler.unwrap_or_default(),
    };
    // surfaces domain violations of an explicit point before any work
    run.sweep.explicit_params()?;

    Ok(Resolved {
        run,
        format: opts.format.or(file.format).unwrap_or_default(),
        out: opts.out.clone().or(file.out),
        csv: opts.csv.clone().or(file.csv),
    })
}
