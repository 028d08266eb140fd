//! Feature extractors for the perceptual distance and a content-keyed cache.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use crate::image::GrayImage;
use crate::rng::{derive_seed, SampleStream};

use super::MetricError;

/// Smallest side length every extractor must accept.
pub const MIN_EXTRACTOR_SIDE: u32 = 16;

/// One layer's activations, channel-major (`C x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn relu(mut self) -> Self {
        for v in &mut self.data {
            *v = v.max(0.0);
        }
        self
    }

    /// Rescales the channel vector at every spatial position to unit length.
    pub fn unit_normalized(&self) -> Self {
        let n = self.height * self.width;
        let mut out = self.clone();
        for p in 0..n {
            let norm = (0..self.channels)
                .map(|c| self.data[c * n + p].powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = 1.0 / (norm + 1e-10);
            for c in 0..self.channels {
                out.data[c * n + p] *= scale;
            }
        }
        out
    }
}

/// `Φ_l(I)` for every layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub layers: Vec<FeatureMap>,
}

impl FeatureStack {
    pub fn new(layers: Vec<FeatureMap>) -> Result<Self, MetricError> {
        if layers.is_empty() {
            return Err(MetricError::ExtractorFailure("feature stack has no layers".into()));
        }
        if layers.iter().flat_map(|l| &l.data).any(|v| !v.is_finite()) {
            return Err(MetricError::ExtractorFailure("non-finite activation".into()));
        }
        Ok(Self { layers })
    }
}

/// Deterministic image → feature stack mapping.
pub trait FeatureExtractor: Send + Sync + fmt::Debug {
    /// Stable identifier; part of the cache key.
    fn id(&self) -> &str;

    fn layer_count(&self) -> usize;

    fn extract(&self, img: &GrayImage) -> Result<FeatureStack, MetricError>;

    /// Layer weights shipped with the extractor, if any.
    fn bundled_weights(&self) -> Option<Vec<f64>> {
        None
    }
}

pub fn extract_features(img: &GrayImage, fx: &dyn FeatureExtractor) -> Result<FeatureStack, MetricError> {
    fx.extract(img)
}

/// Single layer holding the normalized pixels; reduces the perceptual
/// distance to plain MSE on `[0, 1]` intensities.
#[derive(Debug, Clone, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn id(&self) -> &str {
        "identity"
    }

    fn layer_count(&self) -> usize {
        1
    }

    fn extract(&self, img: &GrayImage) -> Result<FeatureStack, MetricError> {
        FeatureStack::new(vec![FeatureMap {
            channels: 1,
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.normalized(),
        }])
    }
}

/// `weights` is `[out][in][kh][kw]` flattened; `pads` is `(top, left, bottom, right)`.
pub(crate) struct ConvSpec<'a> {
    pub weights: &'a [f64],
    pub bias: Option<&'a [f64]>,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pads: (usize, usize, usize, usize),
}

pub(crate) fn conv2d(input: &FeatureMap, spec: &ConvSpec<'_>) -> FeatureMap {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (pt, pl, pb, pr) = spec.pads;
    let out_h = (input.height + pt + pb).saturating_sub(kh) / sh + 1;
    let out_w = (input.width + pl + pr).saturating_sub(kw) / sw + 1;
    let mut out = FeatureMap::zeros(spec.out_channels, out_h, out_w);
    let in_c = input.channels;
    for o in 0..spec.out_channels {
        let bias = spec.bias.map_or(0.0, |b| b[o]);
        let dst = &mut out.data[o * out_h * out_w..(o + 1) * out_h * out_w];
        dst.iter_mut().for_each(|v| *v = bias);
        for i in 0..in_c {
            let plane = input.plane(i);
            for ky in 0..kh {
                for kx in 0..kw {
                    let w = spec.weights[((o * in_c + i) * kh + ky) * kw + kx];
                    if w == 0.0 {
                        continue;
                    }
                    for oy in 0..out_h {
                        let iy = (oy * sh + ky) as isize - pt as isize;
                        if iy < 0 || iy >= input.height as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * input.width..(iy as usize + 1) * input.width];
                        let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pl as isize;
                            if ix >= 0 && ix < input.width as isize {
                                *d += w * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PoolKind {
    Max,
    /// Average over in-bounds taps only.
    Average,
}

pub(crate) fn pool2d(
    input: &FeatureMap,
    kind: PoolKind,
    kernel: (usize, usize),
    stride: (usize, usize),
    pads: (usize, usize, usize, usize),
) -> FeatureMap {
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (pt, pl, pb, pr) = pads;
    let out_h = (input.height + pt + pb).saturating_sub(kh) / sh + 1;
    let out_w = (input.width + pl + pr).saturating_sub(kw) / sw + 1;
    let mut out = FeatureMap::zeros(input.channels, out_h, out_w);
    for c in 0..input.channels {
        let plane = input.plane(c);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = match kind {
                    PoolKind::Max => f64::NEG_INFINITY,
                    PoolKind::Average => 0.0,
                };
                let mut taps = 0usize;
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - pt as isize;
                    if iy < 0 || iy >= input.height as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pl as isize;
                        if ix < 0 || ix >= input.width as isize {
                            continue;
                        }
                        let v = plane[iy as usize * input.width + ix as usize];
                        match kind {
                            PoolKind::Max => acc = acc.max(v),
                            PoolKind::Average => acc += v,
                        }
                        taps += 1;
                    }
                }
                out.data[(c * out_h + oy) * out_w + ox] = match (kind, taps) {
                    (_, 0) => 0.0,
                    (PoolKind::Max, _) => acc,
                    (PoolKind::Average, n) => acc / n as f64,
                };
            }
        }
    }
    out
}

/// Seed of the fixed weights of [`TinyFixedExtractor`].
pub const TINY_FIXED_SEED: u64 = 0x7469_6e79_6669_7864;
pub const TINY_FIXED_CHANNELS: [usize; 3] = [8, 16, 32];

/// Three stages of 3x3 convolution, ReLU and 2x2 average pooling with
/// 8, 16 and 32 channels. Weights are He-uniform draws from a fixed seed, so
/// the extractor needs no external assets.
#[derive(Debug, Clone)]
pub struct TinyFixedExtractor {
    stages: Vec<(usize, Vec<f64>)>,
}

impl Default for TinyFixedExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl TinyFixedExtractor {
    pub fn new() -> Self {
        let mut in_c = 1;
        let stages = TINY_FIXED_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &out_c)| {
                let fan_in = (in_c * 9) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let mut stream = SampleStream::new(derive_seed(TINY_FIXED_SEED, &format!("tiny-fixed/stage{i}")));
                let weights = (0..out_c * in_c * 9).map(|_| stream.uniform(-bound, bound)).collect();
                in_c = out_c;
                (out_c, weights)
            })
            .collect();
        Self { stages }
    }
}

impl FeatureExtractor for TinyFixedExtractor {
    fn id(&self) -> &str {
        "tiny-fixed"
    }

    fn layer_count(&self) -> usize {
        self.stages.len()
    }

    fn extract(&self, img: &GrayImage) -> Result<FeatureStack, MetricError> {
        let (w, h) = img.dims();
        if w.min(h) < MIN_EXTRACTOR_SIDE {
            return Err(MetricError::ImageTooSmall {
                width: w,
                height: h,
                min: MIN_EXTRACTOR_SIDE,
            });
        }
        let mut x = FeatureMap {
            channels: 1,
            height: h as usize,
            width: w as usize,
            data: img.normalized(),
        };
        let mut layers = Vec::with_capacity(self.stages.len());
        for (out_c, weights) in &self.stages {
            let conv = conv2d(
                &x,
                &ConvSpec {
                    weights,
                    bias: None,
                    out_channels: *out_c,
                    kernel: (3, 3),
                    stride: (1, 1),
                    pads: (1, 1, 1, 1),
                },
            )
            .relu();
            x = pool2d(&conv, PoolKind::Average, (2, 2), (2, 2), (0, 0, 0, 0));
            layers.push(x.clone());
        }
        FeatureStack::new(layers)
    }
}

type CacheKey = ([u8; 32], String);

/// Feature stacks keyed by (image content hash, extractor id).
#[derive(Debug, Default)]
pub struct FeatureCache {
    map: RwLock<HashMap<CacheKey, Arc<FeatureStack>>>,
}

impl FeatureCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_extract(&self, img: &GrayImage, fx: &dyn FeatureExtractor) -> Result<Arc<FeatureStack>, MetricError> {
        let key = (img.content_hash(), fx.id().to_owned());
        if let Some(hit) = self.map.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let stack = Arc::new(fx.extract(img)?);
        // Concurrent misses on the same key insert identical stacks.
        self.map
            .write()
            .expect("cache lock")
            .insert(key, Arc::clone(&stack));
        Ok(stack)
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
