//! Seeded random points of the admissible domain.
//!
//! Each sample draws from its own ChaCha stream keyed by `(seed, index)`,
//! so results do not depend on evaluation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crosssection::{DualCoordinates, ModelParams};
use crate::error::{Error, Result};
use crate::lemmas::ANGLE_CUTOFF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub mu: (f64, f64),
    pub kappa_abs: (f64, f64),
    /// `ν − |κ|`
    pub nu_excess: (f64, f64),
    /// `λ_n − max(ν, |κ|)`
    pub lambda_floor: (f64, f64),
    /// `λ_a − λ_{a+1} − 2μ`
    pub gap_excess: (f64, f64),
    /// Minimum distance between any `λ_a` and `μ`.
    pub mu_clearance: f64,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mu: (0.05, 0.4),
            kappa_abs: (0.0, 0.8),
            nu_excess: (0.05, 0.8),
            lambda_floor: (0.1, 1.0),
            gap_excess: (0.1, 1.0),
            mu_clearance: 0.05,
            max_attempts: 1000,
        }
    }
}

/// Which angles to avoid; the bracket extractions divide by `sin ϑ` and
/// `cos ϑ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AngleFilter {
    #[default]
    None,
    AwayFromAxes,
}

impl AngleFilter {
    pub fn accepts(self, theta: &[f64]) -> bool {
        match self {
            AngleFilter::None => true,
            AngleFilter::AwayFromAxes => theta
                .iter()
                .all(|t| t.sin().abs() >= ANGLE_CUTOFF && t.cos().abs() >= ANGLE_CUTOFF),
        }
    }
}

/// Couplings held fixed across a sweep; `None` entries are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub params: ModelParams,
    pub coords: DualCoordinates,
    /// Draws discarded before this one was accepted.
    pub rejections: usize,
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

pub fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl SamplerConfig {
    pub fn draw_params(&self, rng: &mut ChaCha8Rng, n: usize) -> Result<ModelParams> {
        self.draw_params_with(rng, n, &Couplings::default())
    }

    /// Random couplings with any of `μ`, `ν`, `κ` pinned. An unpinned `ν`
    /// is drawn above the (possibly pinned) `|κ|`.
    pub fn draw_params_with(
        &self,
        rng: &mut ChaCha8Rng,
        n: usize,
        pinned: &Couplings,
    ) -> Result<ModelParams> {
        let mu = uniform(rng, self.mu);
        let kappa_abs = uniform(rng, self.kappa_abs);
        let kappa = if rng.random_bool(0.5) {
            kappa_abs
        } else {
            -kappa_abs
        };
        let excess = uniform(rng, self.nu_excess);
        let kappa = pinned.kappa.unwrap_or(kappa);
        let nu = pinned.nu.unwrap_or(kappa.abs() + excess);
        ModelParams::new(n, pinned.mu.unwrap_or(mu), nu, kappa)
    }

    /// Coordinates for fixed couplings, resampled until they clear the
    /// margins and the angle filter.
    pub fn draw_coords(
        &self,
        rng: &mut ChaCha8Rng,
        p: &ModelParams,
        filter: AngleFilter,
    ) -> Result<(DualCoordinates, usize)> {
        for attempt in 0..self.max_attempts {
            let mut lambda = vec![0.0; p.n];
            lambda[p.n - 1] = p.nu.max(p.kappa.abs()) + uniform(rng, self.lambda_floor);
            for a in (0..p.n - 1).rev() {
                lambda[a] = lambda[a + 1] + 2.0 * p.mu + uniform(rng, self.gap_excess);
            }
            let theta: Vec<f64> = (0..p.n)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let coords = DualCoordinates::new(lambda, theta);
            let clear = coords
                .lambda
                .iter()
                .all(|l| (l - p.mu).abs() >= self.mu_clearance);
            if clear && filter.accepts(&coords.theta) && coords.validate(p).is_ok() {
                return Ok((coords, attempt));
            }
        }
        Err(Error::Domain(format!(
            "no admissible sample after {} attempts",
            self.max_attempts
        )))
    }

    /// Sample `index` of the sweep with random couplings.
    pub fn sample(&self, seed: u64, index: usize, n: usize, filter: AngleFilter) -> Result<Sample> {
        self.sample_pinned(seed, index, n, &Couplings::default(), filter)
    }

    /// Sample `index` with some couplings pinned. Pinning does not change
    /// the random stream, so a pinned sweep draws the same angles.
    pub fn sample_pinned(
        &self,
        seed: u64,
        index: usize,
        n: usize,
        pinned: &Couplings,
        filter: AngleFilter,
    ) -> Result<Sample> {
        let mut rng = stream(seed, index);
        let params = self.draw_params_with(&mut rng, n, pinned)?;
        let (coords, rejections) = self.draw_coords(&mut rng, &params, filter)?;
        Ok(Sample {
            index,
            params,
            coords,
            rejections,
        })
    }

    /// Sample `index` with the couplings held fixed.
    pub fn sample_with_params(
        &self,
        seed: u64,
        index: usize,
        params: &ModelParams,
        filter: AngleFilter,
    ) -> Result<Sample> {
        let mut rng = stream(seed, index);
        let (coords, rejections) = self.draw_coords(&mut rng, params, filter)?;
        Ok(Sample {
            index,
            params: *params,
            coords,
            rejections,
        })
    }
}
