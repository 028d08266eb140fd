//! Query-to-support matching.
//!
//! For every query slice the winner is the pool entry with the smallest
//! matching cost over the whole augmented set, ties resolved to the lowest
//! index. Features of every distinct image are extracted once per run.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentedSupportSet, Provenance};
use crate::image::{GrayImage, SliceVolume};
use crate::similarity::{
    self, FeatureCache, FeatureExtractor, LayerWeights, LpipsOptions, MetricError, MetricId,
};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("support set is empty")]
    EmptySupportSet,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Metric selection plus whatever the metric needs to run.
#[derive(Debug, Clone)]
pub enum MetricConfig {
    Lpips {
        extractor: Arc<dyn FeatureExtractor>,
        weights: LayerWeights,
        options: LpipsOptions,
    },
    Ssim,
    Psnr,
}

impl MetricConfig {
    /// Perceptual distance with the extractor's default weights.
    pub fn lpips(extractor: Arc<dyn FeatureExtractor>) -> Result<Self, MetricError> {
        let weights = LayerWeights::default_for(extractor.as_ref())?;
        Ok(MetricConfig::Lpips {
            extractor,
            weights,
            options: LpipsOptions::default(),
        })
    }

    pub fn id(&self) -> MetricId {
        match self {
            MetricConfig::Lpips { .. } => MetricId::Lpips,
            MetricConfig::Ssim => MetricId::Ssim,
            MetricConfig::Psnr => MetricId::Psnr,
        }
    }

    /// Cost of one pair without any caching.
    pub fn cost(&self, a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
        let d = match self {
            MetricConfig::Lpips {
                extractor,
                weights,
                options,
            } => similarity::lpips_with(a, b, extractor.as_ref(), weights, *options)?,
            MetricConfig::Ssim => similarity::ssim(a, b)?,
            MetricConfig::Psnr => similarity::psnr(a, b)?,
        };
        Ok(d.cost())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMatch {
    pub slice_index: usize,
    pub winner_index: usize,
    /// Matching cost of the winner (see [`similarity::Dissimilarity::cost`]).
    #[serde(with = "float_repr")]
    pub winner_distance: f64,
    pub metric: MetricId,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub metric: MetricId,
    pub slices: Vec<SliceMatch>,
    /// Full cost rows, kept only on request.
    pub rows: Option<Vec<Vec<f64>>>,
}

impl MatchAssignment {
    pub fn winners(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.winner_index).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.winner_distance).collect()
    }
}

/// Serialized form of a match assignment (`matches.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesFile {
    pub metric: MetricId,
    pub pool_size: usize,
    pub slices: Vec<SliceMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "float_rows")]
    pub distances: Option<Vec<Vec<f64>>>,
}

impl MatchesFile {
    pub fn new(assignment: &MatchAssignment, pool_size: usize) -> Self {
        Self {
            metric: assignment.metric,
            pool_size,
            slices: assignment.slices.clone(),
            distances: assignment.rows.clone(),
        }
    }

    pub fn into_assignment(self) -> MatchAssignment {
        MatchAssignment {
            metric: self.metric,
            slices: self.slices,
            rows: self.distances,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("matches serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// JSON has no infinities; non-finite costs are written as strings.
pub mod float_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("invalid number {other:?}"))),
            },
        }
    }

    #[derive(serde::Serialize, Deserialize)]
    #[serde(transparent)]
    pub struct Wrapped(#[serde(with = "self")] pub f64);
}

/// [`float_repr`] for an optional vector.
pub mod float_vec {
    use super::float_repr::Wrapped;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|v| v.iter().map(|&x| Wrapped(x)).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let v: Option<Vec<Wrapped>> = Option::deserialize(d)?;
        Ok(v.map(|v| v.into_iter().map(|w| w.0).collect()))
    }
}

mod float_rows {
    use super::float_repr::Wrapped;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(rows: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
        rows.as_ref()
            .map(|rows| {
                rows.iter()
                    .map(|r| r.iter().map(|&v| Wrapped(v)).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        let rows: Option<Vec<Vec<Wrapped>>> = Option::deserialize(d)?;
        Ok(rows.map(|rows| rows.into_iter().map(|r| r.into_iter().map(|w| w.0).collect()).collect()))
    }
}

fn check_dims(queries: &[GrayImage], pool: &[GrayImage]) -> Result<(), MatchError> {
    let first = pool.first().ok_or(MatchError::EmptySupportSet)?;
    let dims = first.dims();
    for (i, p) in pool.iter().enumerate() {
        if p.dims() != dims {
            return Err(MatchError::DimensionMismatch(format!(
                "support entry {i} is {}x{}, entry 0 is {}x{}",
                p.width(),
                p.height(),
                dims.0,
                dims.1
            )));
        }
    }
    for (j, q) in queries.iter().enumerate() {
        if q.dims() != dims {
            return Err(MatchError::DimensionMismatch(format!(
                "query slice {j} is {}x{}, support entries are {}x{}",
                q.width(),
                q.height(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(())
}

/// `queries.len() x pool.len()` matrix of matching costs.
pub fn cost_matrix(
    queries: &[GrayImage],
    pool: &[GrayImage],
    metric: &MetricConfig,
    cache: &FeatureCache,
) -> Result<Vec<Vec<f64>>, MatchError> {
    check_dims(queries, pool)?;
    match metric {
        MetricConfig::Lpips {
            extractor,
            weights,
            options,
        } => {
            if weights.len() != extractor.layer_count() {
                return Err(MetricError::WeightArityMismatch {
                    expected: extractor.layer_count(),
                    found: weights.len(),
                }
                .into());
            }
            let fx = extractor.as_ref();
            // Pool features first, once, before the per-slice fan-out.
            let pool_features = pool
                .par_iter()
                .map(|img| cache.get_or_extract(img, fx))
                .collect::<Result<Vec<_>, _>>()?;
            queries
                .par_iter()
                .map(|q| {
                    let qf = cache.get_or_extract(q, fx)?;
                    pool_features
                        .iter()
                        .map(|sf| similarity::lpips_from_features(&qf, sf, weights, *options))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(MatchError::from)
                })
                .collect()
        }
        MetricConfig::Ssim | MetricConfig::Psnr => queries
            .par_iter()
            .map(|q| {
                pool.iter()
                    .map(|s| metric.cost(q, s).map_err(MatchError::from))
                    .collect()
            })
            .collect(),
    }
}

/// Index of the first minimum.
pub fn argmin(row: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in row.iter().enumerate() {
        match best {
            Some((_, b)) if v >= b || v.is_nan() => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

fn pool_images(s: &AugmentedSupportSet) -> Vec<GrayImage> {
    s.entries().iter().map(|e| e.image.clone()).collect()
}

pub fn distance_matrix(
    q: &SliceVolume,
    s: &AugmentedSupportSet,
    metric: &MetricConfig,
) -> Result<Vec<Vec<f64>>, MatchError> {
    if s.is_empty() {
        return Err(MatchError::EmptySupportSet);
    }
    cost_matrix(q.slices(), &pool_images(s), metric, &FeatureCache::new())
}

pub fn match_volume(
    q: &SliceVolume,
    s: &AugmentedSupportSet,
    metric: &MetricConfig,
) -> Result<MatchAssignment, MatchError> {
    match_volume_with(q, s, metric, false, &FeatureCache::new())
}

/// Like [`match_volume`], optionally keeping full cost rows, with a caller-owned cache.
pub fn match_volume_with(
    q: &SliceVolume,
    s: &AugmentedSupportSet,
    metric: &MetricConfig,
    keep_rows: bool,
    cache: &FeatureCache,
) -> Result<MatchAssignment, MatchError> {
    if s.is_empty() {
        return Err(MatchError::EmptySupportSet);
    }
    let rows = cost_matrix(q.slices(), &pool_images(s), metric, cache)?;
    let slices = rows
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let (winner_index, winner_distance) = argmin(row).expect("pool is nonempty");
            SliceMatch {
                slice_index: j,
                winner_index,
                winner_distance,
                metric: metric.id(),
                provenance: Some(s.entries()[winner_index].provenance.clone()),
            }
        })
        .collect();
    Ok(MatchAssignment {
        metric: metric.id(),
        slices,
        rows: keep_rows.then_some(rows),
    })
}
