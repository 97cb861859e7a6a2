//! Seeded synthetic batches and the noise-append bound harness.
//!
//! [`gen_planted`] draws class means along a few informative coordinates and
//! can add a block of high-variance, class-independent nuisance coordinates.
//! The nuisance block inflates the pooled covariance spectrum without adding
//! anything that separates classes.
//!
//! [`prop1_bound`] evaluates the closed-form ceiling on the smooth rank of an
//! embedding extended by `r` coordinates of independent noise, and
//! [`prop1_check`] measures it against the empirical score of noise-extended
//! batches.

use std::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, MetricConfig};
use crate::scatter::EmbeddingBatch;
use crate::spectra::{self, Spectrum};

/// Slack allowed on `LiDAR(ẽ) <= bound` for round-off.
pub const BOUND_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub q: usize,
    pub p: usize,
    /// Informative coordinates, the first `k_signal` of `p`.
    pub k_signal: usize,
    /// Standard deviation of class means along informative coordinates.
    pub signal_strength: f64,
    /// Isotropic within-class standard deviation.
    pub within_noise: f64,
    /// Nuisance coordinates, the last `r_nuisance` of `p`.
    #[serde(default)]
    pub r_nuisance: usize,
    #[serde(default)]
    pub nuisance_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.q < 2 || self.p < 1 {
            return Err(Error::BadSpec(format!(
                "shape n={} q={} p={} needs n >= 2, q >= 2, p >= 1",
                self.n, self.q, self.p
            )));
        }
        if self.k_signal + self.r_nuisance > self.p {
            return Err(Error::BadSpec(format!(
                "k_signal + r_nuisance = {} exceeds p = {}",
                self.k_signal + self.r_nuisance,
                self.p
            )));
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("within_noise", self.within_noise),
            ("nuisance_scale", self.nuisance_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::BadSpec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.within_noise == 0.0 {
            return Err(Error::BadSpec("within_noise must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-trial seeds via splitmix64.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gen_planted(spec: &PlantedSpec) -> Result<EmbeddingBatch> {
    spec.validate()?;
    let PlantedSpec { n, q, p, k_signal, .. } = *spec;
    let nuisance_start = p - spec.r_nuisance;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let means: Vec<f64> = (0..n * k_signal)
        .map(|_| spec.signal_strength * normal(&mut rng))
        .collect();
    let mut data = Vec::with_capacity(n * q * p);
    for i in 0..n {
        for _ in 0..q {
            for d in 0..p {
                let mut v = spec.within_noise * normal(&mut rng);
                if d < k_signal {
                    v += means[i * k_signal + d];
                }
                if d >= nuisance_start {
                    v += spec.nuisance_scale * normal(&mut rng);
                }
                data.push(v);
            }
        }
    }
    EmbeddingBatch::new(n, q, p, data, None)
}

/// Appends `r` coordinates of zero-mean noise with covariance
/// `noise_scale² I`, drawn independently for every sample.
pub fn append_noise(batch: &EmbeddingBatch, r: usize, noise_scale: f64, seed: u64) -> Result<EmbeddingBatch> {
    if r == 0 {
        return Ok(batch.clone());
    }
    if !noise_scale.is_finite() || noise_scale < 0.0 {
        return Err(Error::InvalidArgument(format!("noise_scale must be finite and >= 0, got {noise_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch.map_samples(|x| {
        let mut out = Vec::with_capacity(x.len() + r);
        out.extend_from_slice(x);
        out.extend((0..r).map(|_| noise_scale * normal(&mut rng)));
        out
    })
}

/// Named preconditions of the noise-append bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Precondition {
    /// `‖λ‖₁ > 0`.
    NonzeroSpectrum,
    /// `‖λ‖_∞ / ‖λ‖₁ < 1 - e⁻¹`.
    NoDominantEigenvalue,
    /// `eps < 1 - ‖λ‖_∞ / ‖λ‖₁`.
    EpsBelowResidualMass,
    /// `delta < (e⁻¹ - eps) ‖λ‖₁`.
    DeltaBelowMassFraction,
}

impl Precondition {
    pub fn as_str(self) -> &'static str {
        match self {
            Precondition::NonzeroSpectrum => "nonzero-spectrum",
            Precondition::NoDominantEigenvalue => "no-dominant-eigenvalue",
            Precondition::EpsBelowResidualMass => "eps-below-residual-mass",
            Precondition::DeltaBelowMassFraction => "delta-below-mass-fraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Inputs {
    /// Whitened between-class spectrum of the original embedding.
    pub lambda: Spectrum,
    /// Ambient dimension of the original embedding.
    pub p: usize,
    /// Appended noise dimensions.
    pub r: usize,
    pub delta: f64,
    pub eps: f64,
}

impl Prop1Inputs {
    /// Every precondition that does not hold.
    pub fn unmet(&self) -> Vec<Precondition> {
        let total = self.lambda.l1();
        if !(total > 0.0) {
            return vec![Precondition::NonzeroSpectrum];
        }
        let ratio = self.lambda.max() / total;
        let inv_e = 1.0 / E;
        let mut out = Vec::new();
        if !(ratio < 1.0 - inv_e) {
            out.push(Precondition::NoDominantEigenvalue);
        }
        if !(self.eps < 1.0 - ratio) {
            out.push(Precondition::EpsBelowResidualMass);
        }
        if !(self.delta < (inv_e - self.eps) * total) {
            out.push(Precondition::DeltaBelowMassFraction);
        }
        out
    }

    /// `exp[-2p log(‖λ‖₁ / (‖λ‖₁ + rδ)) - (rδ / ‖λ‖₁) log(δ / ‖λ‖₁)]`.
    pub fn factor(&self) -> f64 {
        let total = self.lambda.l1();
        let rd = self.r as f64 * self.delta;
        let growth = -2.0 * self.p as f64 * (total / (total + rd)).ln();
        let ridge = -(rd / total) * (self.delta / total).ln();
        (growth + ridge).exp()
    }
}

/// Upper bound on the smooth rank after appending `r` noise coordinates.
pub fn prop1_bound(inp: &Prop1Inputs) -> Result<f64> {
    let unmet = inp.unmet();
    if !unmet.is_empty() {
        return Err(Error::PreconditionViolated(unmet));
    }
    let base = spectra::smooth_rank(&inp.lambda, inp.eps)?.value;
    Ok(base * inp.factor())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Report {
    pub trials: usize,
    pub checked: usize,
    pub precondition_skips: usize,
    pub unmet: Vec<Precondition>,
    pub violations: usize,
    pub base_lidar: f64,
    /// `None` when the preconditions do not hold.
    pub bound: Option<f64>,
    /// `bound - LiDAR(ẽ)` per checked trial.
    pub margins: Vec<f64>,
}

impl Prop1Report {
    pub fn min_margin(&self) -> Option<f64> {
        self.margins.iter().copied().reduce(f64::min)
    }

    pub fn max_margin(&self) -> Option<f64> {
        self.margins.iter().copied().reduce(f64::max)
    }

    pub fn mean_margin(&self) -> Option<f64> {
        if self.margins.is_empty() {
            None
        } else {
            Some(spectra::compensated_sum(self.margins.iter().copied()) / self.margins.len() as f64)
        }
    }
}

/// Checks `LiDAR(ẽ) <= bound + BOUND_SLACK` over `trials` fresh noise draws.
///
/// The preconditions depend only on `batch` and `cfg`; when they fail, every
/// trial is counted as skipped rather than as a violation.
pub fn prop1_check(
    batch: &EmbeddingBatch,
    r: usize,
    noise_scale: f64,
    cfg: &MetricConfig,
    trials: usize,
    seed: u64,
) -> Result<Prop1Report> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let lambda = metrics::lidar_spectrum(batch, cfg)?;
    let inputs = Prop1Inputs {
        p: lambda.source_dim(),
        lambda,
        r,
        delta: cfg.delta,
        eps: cfg.eps,
    };
    let base_lidar = spectra::smooth_rank(&inputs.lambda, cfg.eps)?.value;
    let unmet = inputs.unmet();
    if !unmet.is_empty() {
        return Ok(Prop1Report {
            trials,
            checked: 0,
            precondition_skips: trials,
            unmet,
            violations: 0,
            base_lidar,
            bound: None,
            margins: Vec::new(),
        });
    }
    let bound = prop1_bound(&inputs)?;
    let scores: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let extended = append_noise(batch, r, noise_scale, derive_seed(seed, t as u64))?;
            Ok(metrics::lidar_score(&extended, cfg)?.value)
        })
        .collect::<Result<_>>()?;
    let margins: Vec<f64> = scores.iter().map(|s| bound - s).collect();
    let violations = margins.iter().filter(|m| **m < -BOUND_SLACK).count();
    Ok(Prop1Report {
        trials,
        checked: trials,
        precondition_skips: 0,
        unmet,
        violations,
        base_lidar,
        bound: Some(bound),
        margins,
    })
}
