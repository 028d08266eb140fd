//! Image dissimilarity metrics.
//!
//! * perceptual distance: `Σ_l w_l · MSE(Φ_l(a), Φ_l(b))` over the layers of a
//!   [`FeatureExtractor`], plain MSE of raw activations unless channel unit
//!   normalization is requested;
//! * SSIM: mean local SSIM, 11x11 Gaussian window (σ = 1.5), valid positions
//!   only, `K1 = 0.01`, `K2 = 0.03`, `L = 2^bits - 1`;
//! * PSNR: `10 log10(MAX² / MSE)` dB, `+∞` for identical images.
//!
//! Extractors see intensities scaled to `[0, 1]`; SSIM and PSNR work on raw
//! integer intensities.

mod features;
pub mod onnx;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;

pub use features::{
    extract_features, FeatureCache, FeatureExtractor, FeatureMap, FeatureStack, IdentityExtractor,
    TinyFixedExtractor, MIN_EXTRACTOR_SIDE, TINY_FIXED_CHANNELS, TINY_FIXED_SEED,
};
pub use onnx::InterchangeModelExtractor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("extractor has {expected} layers but {found} weights were given")]
    WeightArityMismatch { expected: usize, found: usize },
    #[error("image {width}x{height} is smaller than the {min}-pixel minimum")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("feature extraction failed: {0}")]
    ExtractorFailure(String),
    #[error("invalid layer weights: {0}")]
    InvalidWeights(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricId {
    Lpips,
    Ssim,
    Psnr,
}

impl MetricId {
    pub const ALL: [MetricId; 3] = [MetricId::Lpips, MetricId::Ssim, MetricId::Psnr];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Lpips => "lpips",
            MetricId::Ssim => "ssim",
            MetricId::Psnr => "psnr",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lpips" => Ok(MetricId::Lpips),
            "ssim" => Ok(MetricId::Ssim),
            "psnr" => Ok(MetricId::Psnr),
            other => Err(MetricError::UnknownMetric(other.to_owned())),
        }
    }
}

/// A metric value tagged with the metric that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dissimilarity {
    pub metric: MetricId,
    /// Perceptual distance (≥ 0), SSIM similarity in `[-1, 1]`, or PSNR in dB.
    pub value: f64,
}

impl Dissimilarity {
    /// Value oriented so that smaller means more similar:
    /// the distance itself, `1 - ssim`, or `-psnr`.
    pub fn cost(&self) -> f64 {
        match self.metric {
            MetricId::Lpips => self.value,
            MetricId::Ssim => 1.0 - self.value,
            MetricId::Psnr => -self.value,
        }
    }
}

/// Per-layer weights `w_l`, all finite and nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LayerWeights(Vec<f64>);

impl LayerWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, MetricError> {
        if weights.is_empty() {
            return Err(MetricError::InvalidWeights("no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(MetricError::InvalidWeights(format!("weight {w} is not a finite nonnegative number")));
        }
        Ok(Self(weights))
    }

    /// `1 / L` for every layer.
    pub fn uniform(layers: usize) -> Self {
        Self(vec![1.0 / layers as f64; layers.max(1)])
    }

    /// Weights bundled with the extractor, else uniform.
    pub fn default_for(fx: &dyn FeatureExtractor) -> Result<Self, MetricError> {
        match fx.bundled_weights() {
            Some(w) => Self::new(w),
            None => Ok(Self::uniform(fx.layer_count())),
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, MetricError> {
        Self::new(self.0.iter().map(|w| w * factor).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for LayerWeights {
    type Error = MetricError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LayerWeights> for Vec<f64> {
    fn from(w: LayerWeights) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpipsOptions {
    /// Unit-normalize each spatial channel vector before differencing.
    #[serde(default)]
    pub unit_normalize: bool,
}

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<(), MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Weighted sum of per-layer feature MSEs between two precomputed stacks.
pub fn lpips_from_features(
    a: &FeatureStack,
    b: &FeatureStack,
    weights: &LayerWeights,
    options: LpipsOptions,
) -> Result<f64, MetricError> {
    if a.layers.len() != b.layers.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} vs {} feature layers",
            a.layers.len(),
            b.layers.len()
        )));
    }
    if weights.len() != a.layers.len() {
        return Err(MetricError::WeightArityMismatch {
            expected: a.layers.len(),
            found: weights.len(),
        });
    }
    let mut total = 0.0;
    for ((la, lb), &w) in a.layers.iter().zip(&b.layers).zip(weights.as_slice()) {
        if la.shape() != lb.shape() {
            return Err(MetricError::DimensionMismatch(format!(
                "layer shapes {:?} vs {:?}",
                la.shape(),
                lb.shape()
            )));
        }
        let mse = if options.unit_normalize {
            layer_mse(&la.unit_normalized(), &lb.unit_normalized())
        } else {
            layer_mse(la, lb)
        };
        total += w * mse;
    }
    Ok(total)
}

fn layer_mse(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.data.len() as f64
}

pub fn lpips(
    a: &GrayImage,
    b: &GrayImage,
    fx: &dyn FeatureExtractor,
    weights: &LayerWeights,
) -> Result<Dissimilarity, MetricError> {
    lpips_with(a, b, fx, weights, LpipsOptions::default())
}

pub fn lpips_with(
    a: &GrayImage,
    b: &GrayImage,
    fx: &dyn FeatureExtractor,
    weights: &LayerWeights,
    options: LpipsOptions,
) -> Result<Dissimilarity, MetricError> {
    same_dims(a, b)?;
    if weights.len() != fx.layer_count() {
        return Err(MetricError::WeightArityMismatch {
            expected: fx.layer_count(),
            found: weights.len(),
        });
    }
    let fa = fx.extract(a)?;
    let fb = fx.extract(b)?;
    Ok(Dissimilarity {
        metric: MetricId::Lpips,
        value: lpips_from_features(&fa, &fb, weights, options)?,
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filter of a row-major plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<Dissimilarity, MetricError> {
    same_dims(a, b)?;
    if a.depth() != b.depth() {
        return Err(MetricError::DimensionMismatch(format!(
            "bit depth {} vs {}",
            a.depth().bits(),
            b.depth().bits()
        )));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w.min(h) < SSIM_WINDOW {
        return Err(MetricError::ImageTooSmall {
            width: a.width(),
            height: a.height(),
            min: SSIM_WINDOW as u32,
        });
    }
    let range = f64::from(a.depth().max_value());
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let x: Vec<f64> = a.pixels().iter().map(|&p| f64::from(p)).collect();
    let y: Vec<f64> = b.pixels().iter().map(|&p| f64::from(p)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let [mx, my, exx, eyy, exy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &taps));
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cov = exy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(Dissimilarity {
        metric: MetricId::Ssim,
        value: total / n as f64,
    })
}

pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<Dissimilarity, MetricError> {
    same_dims(a, b)?;
    if a.depth() != b.depth() {
        return Err(MetricError::DimensionMismatch(format!(
            "bit depth {} vs {}",
            a.depth().bits(),
            b.depth().bits()
        )));
    }
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| {
            let d = f64::from(p) - f64::from(q);
            d * d
        })
        .sum();
    let mse = sum / a.pixels().len() as f64;
    let value = if mse == 0.0 {
        f64::INFINITY
    } else {
        let max = f64::from(a.depth().max_value());
        10.0 * (max * max / mse).log10()
    };
    Ok(Dissimilarity {
        metric: MetricId::Psnr,
        value,
    })
}
