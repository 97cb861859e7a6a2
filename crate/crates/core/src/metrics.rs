//! LiDAR, RankMe and augmented RankMe scores.
//!
//! Suggested sampling sizes: `n = 1000, q = 50` for ViT-scale embeddings,
//! `n = 5000, q = 10` or `n = 10000, q = 10` for wide projector outputs.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scatter::{self, EmbeddingBatch, ScatterPair, DEFAULT_DELTA};
use crate::spectra::{self, Spectrum, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneratePolicy {
    /// Report `1.0` and set [`MetricScore::degenerate`].
    #[default]
    ReturnOneAndFlag,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Ridge added to the within-class scatter.
    pub delta: f64,
    /// Additive constant in the normalized spectrum.
    pub eps: f64,
    /// Project onto this many principal directions before whitening.
    pub reduce_before_invert: Option<usize>,
    pub degenerate_policy: DegeneratePolicy,
    /// Subtract the column mean before the vanilla RankMe SVD.
    pub center_rankme: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            eps: DEFAULT_EPS,
            reduce_before_invert: None,
            degenerate_policy: DegeneratePolicy::default(),
            center_rankme: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::NonPositiveDelta(self.delta));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        if self.reduce_before_invert == Some(0) {
            return Err(Error::BadTargetDim { k: 0, p: 0 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Lidar,
    Rankme,
    RankmeAug,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Lidar, MetricKind::Rankme, MetricKind::RankmeAug];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Lidar => "lidar",
            MetricKind::Rankme => "rankme",
            MetricKind::RankmeAug => "rankme_aug",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lidar" => Ok(MetricKind::Lidar),
            "rankme" => Ok(MetricKind::Rankme),
            "rankme_aug" | "rankme-aug" => Ok(MetricKind::RankmeAug),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricScore {
    pub value: f64,
    pub degenerate: bool,
    pub kind: MetricKind,
    pub branch_label: Option<String>,
    pub config: MetricConfig,
    pub spectrum: Spectrum,
}

impl MetricScore {
    /// Registry key: the metric name, suffixed with `:<branch>` when the
    /// batch carried a branch label.
    pub fn key(&self) -> String {
        match &self.branch_label {
            Some(b) => format!("{}:{}", self.kind, b),
            None => self.kind.to_string(),
        }
    }
}

fn finish(
    spectrum: Spectrum,
    kind: MetricKind,
    cfg: &MetricConfig,
    branch_label: Option<String>,
) -> Result<MetricScore> {
    let rank = spectra::smooth_rank(&spectrum, cfg.eps)?;
    if rank.degenerate && cfg.degenerate_policy == DegeneratePolicy::Error {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(MetricScore {
        value: rank.value,
        degenerate: rank.degenerate,
        kind,
        branch_label,
        config: cfg.clone(),
        spectrum,
    })
}

/// Eigenvalues of the whitened between-class scatter for `batch`, after the
/// optional dimensionality reduction.
pub fn lidar_spectrum(batch: &EmbeddingBatch, cfg: &MetricConfig) -> Result<Spectrum> {
    cfg.validate()?;
    let sp = match cfg.reduce_before_invert {
        Some(k) => ScatterPair::estimate_reduced(batch, cfg.delta, k)?,
        None => ScatterPair::estimate(batch, cfg.delta)?,
    };
    scatter::lidar_spectrum(&sp)
}

/// Smooth rank of the whitened between-class scatter.
pub fn lidar_score(batch: &EmbeddingBatch, cfg: &MetricConfig) -> Result<MetricScore> {
    let spectrum = lidar_spectrum(batch, cfg)?;
    finish(spectrum, MetricKind::Lidar, cfg, batch.branch_label().map(str::to_owned))
}

fn center_columns(z: &mut DMatrix<f64>) {
    let rows = z.nrows() as f64;
    for mut col in z.column_iter_mut() {
        let mean = spectra::compensated_sum(col.iter().copied()) / rows;
        col.add_scalar_mut(-mean);
    }
}

/// Smooth rank of the singular values of an `N x d` embedding matrix.
///
/// The matrix is used as given unless `cfg.center_rankme` is set.
pub fn rankme_score(z: &DMatrix<f64>, cfg: &MetricConfig) -> Result<MetricScore> {
    cfg.validate()?;
    let spectrum = if cfg.center_rankme {
        let mut centered = z.clone();
        center_columns(&mut centered);
        spectra::singular_values(&centered)?
    } else {
        spectra::singular_values(z)?
    };
    finish(spectrum, MetricKind::Rankme, cfg, None)
}

/// RankMe over every view in the batch, flattened to `(n*q) x p` and
/// centered by the grand mean.
pub fn rankme_aug_score(batch: &EmbeddingBatch, cfg: &MetricConfig) -> Result<MetricScore> {
    cfg.validate()?;
    let mut z = batch.to_matrix();
    let (_, grand) = scatter::class_means(batch);
    for mut row in z.row_iter_mut() {
        row -= grand.transpose();
    }
    let spectrum = spectra::singular_values(&z)?;
    finish(spectrum, MetricKind::RankmeAug, cfg, batch.branch_label().map(str::to_owned))
}

pub fn score(batch: &EmbeddingBatch, kind: MetricKind, cfg: &MetricConfig) -> Result<MetricScore> {
    match kind {
        MetricKind::Lidar => lidar_score(batch, cfg),
        MetricKind::Rankme => {
            let mut s = rankme_score(&batch.to_matrix(), cfg)?;
            s.branch_label = batch.branch_label().map(str::to_owned);
            Ok(s)
        }
        MetricKind::RankmeAug => rankme_aug_score(batch, cfg),
    }
}

/// Scores every `(model id, batch)` pair for each requested kind.
///
/// Models are evaluated in parallel; the output is ordered by model id, then
/// kind.
pub fn score_sweep(
    batches: &[(String, EmbeddingBatch)],
    cfg: &MetricConfig,
    kinds: &BTreeSet<MetricKind>,
) -> Result<Vec<(String, MetricScore)>> {
    let first = batches
        .first()
        .ok_or_else(|| Error::InvalidArgument("score_sweep needs at least one batch".into()))?;
    let p = first.1.p();
    for (_, b) in batches {
        if b.p() != p {
            return Err(Error::DimensionMismatch { expected: p, got: b.p() });
        }
    }
    let mut order: Vec<usize> = (0..batches.len()).collect();
    order.sort_by(|&a, &b| batches[a].0.cmp(&batches[b].0));
    let jobs: Vec<(usize, MetricKind)> = order
        .iter()
        .flat_map(|&i| kinds.iter().map(move |&k| (i, k)))
        .collect();
    jobs.par_iter()
        .map(|&(i, kind)| {
            let (id, batch) = &batches[i];
            score(batch, kind, cfg).map(|s| (id.clone(), s))
        })
        .collect()
}
