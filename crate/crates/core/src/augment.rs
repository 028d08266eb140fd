//! Augmented support set construction.
//!
//! Each support pair is expanded into the untransformed original followed by
//! `n_t * n_q` sampled augmentations. An augmentation warps image and mask
//! with the same affine transform (bilinear for the image, nearest neighbour
//! for the mask) and then applies brightness/contrast jitter to the image
//! only.
//!
//! Sampling is prefix-stable: augmentation `i` of support `s` depends only on
//! the policy, the seed and `(s, i)`, so a set built with a smaller `n_t`
//! is always a prefix (per support block) of one built with a larger `n_t`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, GrayImage, ImageError, LabeledSlice, SliceVolume};
use crate::rng::{derive_seed, SampleStream};
use crate::volume_io::{self, VolumeIoError, VolumeManifest};

/// Minimum `|det|` of the linear part for a transform to count as invertible.
pub const MIN_DETERMINANT: f64 = 1e-9;

/// Sample coordinates this close to an integer are snapped onto it.
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("affine transform is singular (det = {0:e})")]
    SingularTransform(f64),
    #[error("affine matrix bottom row must be exactly (0, 0, 1)")]
    NotAffine,
    #[error("invalid augment policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid colour jitter: {0}")]
    InvalidJitter(String),
    #[error("invalid support set request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] VolumeIoError),
}

type Result<T> = std::result::Result<T, AugmentError>;

/// Homogeneous 3x3 affine matrix acting on `(x, y, 1)` with `x` the column
/// and `y` the row, pixel centres at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    m: [[f64; 3]; 3],
}

impl AffineTransform {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m[2] != [0.0, 0.0, 1.0] {
            return Err(AugmentError::NotAffine);
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AugmentError::SingularTransform(f64::NAN));
        }
        let t = Self { m };
        let det = t.determinant();
        if det.abs() <= MIN_DETERMINANT {
            return Err(AugmentError::SingularTransform(det));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation by `degrees` about the centre of a `width x height` image.
    pub fn rotation_about_center(width: u32, height: u32, degrees: f64) -> Self {
        Self::about_center(
            width,
            height,
            &AffineParams {
                rotation_deg: degrees,
                scale: 1.0,
                shear_deg: 0.0,
                translate_x: 0.0,
                translate_y: 0.0,
            },
        )
    }

    /// `translate · centre · rotate · shear · scale · centre⁻¹`.
    pub fn about_center(width: u32, height: u32, p: &AffineParams) -> Self {
        let cx = (f64::from(width) - 1.0) / 2.0;
        let cy = (f64::from(height) - 1.0) / 2.0;
        let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
        let shear = p.shear_deg.to_radians().tan();
        let rotate = [[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]];
        let shear_m = [[1.0, shear, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let scale = [[p.scale, 0.0, 0.0], [0.0, p.scale, 0.0], [0.0, 0.0, 1.0]];
        let linear = mul(&mul(&rotate, &shear_m), &scale);
        let centred = mul(
            &mul(&Self::translation(cx, cy).m, &linear),
            &Self::translation(-cx, -cy).m,
        );
        let tx = p.translate_x * f64::from(width);
        let ty = p.translate_y * f64::from(height);
        Self {
            m: mul(&Self::translation(tx, ty).m, &centred),
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then_after(&self, other: &AffineTransform) -> AffineTransform {
        AffineTransform {
            m: mul(&self.m, &other.m),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if det.abs() <= MIN_DETERMINANT || !det.is_finite() {
            return Err(AugmentError::SingularTransform(det));
        }
        let [[a, b, tx], [c, d, ty], _] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Ok(Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
                [0.0, 0.0, 1.0],
            ],
        })
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }
}

fn mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v
    }
}

/// Source coordinates (after snapping) for every output pixel, row-major.
fn source_grid(width: u32, height: u32, t: &AffineTransform) -> Result<Vec<(f64, f64)>> {
    let inv = t.inverse()?;
    Ok((0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (sx, sy) = inv.apply(f64::from(x), f64::from(y));
            (snap(sx), snap(sy))
        })
        .collect())
}

fn nearest_index(sx: f64, sy: f64, width: u32, height: u32) -> Option<usize> {
    let (xr, yr) = (sx.round(), sy.round());
    if xr < 0.0 || yr < 0.0 || xr > f64::from(width - 1) || yr > f64::from(height - 1) {
        return None;
    }
    Some(yr as usize * width as usize + xr as usize)
}

/// Inverse-mapped bilinear warp; samples falling outside the source are 0.
pub fn apply_affine_to_image(img: &GrayImage, t: &AffineTransform) -> Result<GrayImage> {
    let (w, h) = img.dims();
    let src = img.pixels();
    let max = f64::from(img.depth().max_value());
    let (wf, hf) = (f64::from(w - 1), f64::from(h - 1));
    let pixels = source_grid(w, h, t)?
        .into_iter()
        .map(|(sx, sy)| {
            if !(0.0..=wf).contains(&sx) || !(0.0..=hf).contains(&sy) {
                return 0;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as usize, y0 as usize);
            let x1 = (x0 + 1).min(w as usize - 1);
            let y1 = (y0 + 1).min(h as usize - 1);
            let at = |x: usize, y: usize| f64::from(src[y * w as usize + x]);
            let v = (1.0 - fx) * (1.0 - fy) * at(x0, y0)
                + fx * (1.0 - fy) * at(x1, y0)
                + (1.0 - fx) * fy * at(x0, y1)
                + fx * fy * at(x1, y1);
            v.round().clamp(0.0, max) as u16
        })
        .collect();
    Ok(GrayImage::new(w, h, img.depth(), pixels)?)
}

/// Inverse-mapped nearest-neighbour warp of an arbitrary image.
pub fn warp_image_nearest(img: &GrayImage, t: &AffineTransform) -> Result<GrayImage> {
    let (w, h) = img.dims();
    let src = img.pixels();
    let pixels = source_grid(w, h, t)?
        .into_iter()
        .map(|(sx, sy)| nearest_index(sx, sy, w, h).map_or(0, |i| src[i]))
        .collect();
    Ok(GrayImage::new(w, h, img.depth(), pixels)?)
}

/// Maps every mask coordinate through `t` with nearest-neighbour lookup, so
/// the result stays strictly binary.
pub fn apply_affine_to_mask(mask: &BinaryMask, t: &AffineTransform) -> Result<BinaryMask> {
    let (w, h) = mask.dims();
    let src = mask.values();
    let values = source_grid(w, h, t)?
        .into_iter()
        .map(|(sx, sy)| nearest_index(sx, sy, w, h).map_or(0, |i| src[i]))
        .collect();
    Ok(BinaryMask::new(w, h, values)?)
}

/// Brightness/contrast jitter. Saturation and hue are carried for
/// completeness but have no effect on single-channel images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    #[serde(default = "one")]
    pub saturation: f64,
    #[serde(default)]
    pub hue: f64,
}

fn one() -> f64 {
    1.0
}

impl ColorJitter {
    pub fn new(brightness: f64, contrast: f64) -> Result<Self> {
        let c = Self {
            brightness,
            contrast,
            saturation: 1.0,
            hue: 0.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn identity() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.brightness.is_finite() && self.brightness > 0.0) {
            return Err(AugmentError::InvalidJitter(format!("brightness {}", self.brightness)));
        }
        if !(self.contrast.is_finite() && self.contrast > 0.0) {
            return Err(AugmentError::InvalidJitter(format!("contrast {}", self.contrast)));
        }
        Ok(())
    }
}

/// `p' = clamp(round(contrast * (brightness * p - mean) + mean))`, where
/// `mean` is the image mean after brightness scaling.
pub fn apply_color_jitter(img: &GrayImage, c: &ColorJitter) -> GrayImage {
    let n = img.pixels().len() as f64;
    let sum: u64 = img.pixels().iter().map(|&p| u64::from(p)).sum();
    let mean = c.brightness * (sum as f64 / n);
    let max = f64::from(img.depth().max_value());
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            let v = c.contrast * (c.brightness * f64::from(p) - mean) + mean;
            v.round().clamp(0.0, max) as u16
        })
        .collect();
    GrayImage::new(img.width(), img.height(), img.depth(), pixels).expect("clamped to bit depth")
}

/// Sampled parameters of one augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub shear_deg: f64,
    /// Fraction of the image width.
    pub translate_x: f64,
    /// Fraction of the image height.
    pub translate_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    #[serde(flatten)]
    pub affine: AffineParams,
    pub brightness: f64,
    pub contrast: f64,
}

/// Sampling ranges, each `[lo, hi]`, plus the seed of the sampling stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub rotation_deg: [f64; 2],
    pub scale: [f64; 2],
    pub shear_deg: [f64; 2],
    pub translate: [f64; 2],
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotation_deg: [-15.0, 15.0],
            scale: [0.9, 1.1],
            shear_deg: [-5.0, 5.0],
            translate: [-0.1, 0.1],
            brightness: [0.8, 1.2],
            contrast: [0.8, 1.2],
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    /// Geometric ranges of the default policy with photometric jitter disabled.
    pub fn geometric_only() -> Self {
        Self {
            brightness: [1.0, 1.0],
            contrast: [1.0, 1.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, [f64; 2], f64, f64, bool); 6] = [
            ("rotation_deg", self.rotation_deg, -180.0, 180.0, true),
            ("scale", self.scale, 0.0, 4.0, false),
            ("shear_deg", self.shear_deg, -60.0, 60.0, true),
            ("translate", self.translate, -1.0, 1.0, true),
            ("brightness", self.brightness, 0.0, 16.0, false),
            ("contrast", self.contrast, 0.0, 16.0, false),
        ];
        for (name, [lo, hi], min, max, min_inclusive) in checks {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(AugmentError::InvalidPolicy(format!("{name} range is not finite")));
            }
            if lo > hi {
                return Err(AugmentError::InvalidPolicy(format!("{name} range [{lo}, {hi}] is inverted")));
            }
            let lo_ok = if min_inclusive { lo >= min } else { lo > min };
            if !lo_ok || hi > max {
                return Err(AugmentError::InvalidPolicy(format!(
                    "{name} range [{lo}, {hi}] exceeds bounds [{min}, {max}]"
                )));
            }
        }
        Ok(())
    }

    /// Draws one parameter set; consumes exactly seven unit samples in the
    /// order rotation, scale, shear, translate x, translate y, brightness,
    /// contrast.
    pub fn sample(&self, stream: &mut SampleStream) -> AugmentParams {
        let mut draw = |[lo, hi]: [f64; 2]| stream.uniform(lo, hi);
        let rotation_deg = draw(self.rotation_deg);
        let scale = draw(self.scale);
        let shear_deg = draw(self.shear_deg);
        let translate_x = draw(self.translate);
        let translate_y = draw(self.translate);
        let brightness = draw(self.brightness);
        let contrast = draw(self.contrast);
        AugmentParams {
            affine: AffineParams {
                rotation_deg,
                scale,
                shear_deg,
                translate_x,
                translate_y,
            },
            brightness,
            contrast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original {
        support: usize,
    },
    Augmented {
        support: usize,
        draw: usize,
        #[serde(flatten)]
        params: AugmentParams,
    },
}

impl Provenance {
    pub fn support(&self) -> usize {
        match self {
            Provenance::Original { support } | Provenance::Augmented { support, .. } => *support,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportEntry {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub provenance: Provenance,
}

/// The pool searched by the matcher. Entries are grouped per support pair:
/// the original first, then its augmentations in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSupportSet {
    entries: Vec<SupportEntry>,
    supports: usize,
    n_t: usize,
    n_q: usize,
}

impl AugmentedSupportSet {
    /// Assembles a pool from explicit entries (e.g. fixtures or planted copies).
    pub fn from_entries(entries: Vec<SupportEntry>, supports: usize, n_t: usize, n_q: usize) -> Self {
        Self {
            entries,
            supports,
            n_t,
            n_q,
        }
    }

    pub fn entries(&self) -> &[SupportEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn supports(&self) -> usize {
        self.supports
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    /// Entries per support block, `n_t * n_q + 1`.
    pub fn block_len(&self) -> usize {
        self.n_t * self.n_q + 1
    }
}

/// Builds the augmented pool: for each support pair, the original plus
/// `n_t * n_q` sampled augmentations.
pub fn build_support_set(
    support: &[LabeledSlice],
    n_t: usize,
    n_q: usize,
    policy: &AugmentPolicy,
) -> Result<AugmentedSupportSet> {
    policy.validate()?;
    if support.is_empty() {
        return Err(AugmentError::InvalidRequest("no support pairs".into()));
    }
    if n_q == 0 {
        return Err(AugmentError::InvalidRequest("n_q must be at least 1".into()));
    }
    let per_support = n_t
        .checked_mul(n_q)
        .ok_or_else(|| AugmentError::InvalidRequest("n_t * n_q overflows".into()))?;

    // Parameters are drawn sequentially per support before any parallel work.
    let mut jobs: Vec<(usize, Option<(usize, AugmentParams)>)> = Vec::new();
    for s in 0..support.len() {
        let mut stream = SampleStream::new(derive_seed(policy.seed, &format!("augment/support/{s}")));
        jobs.push((s, None));
        for draw in 0..per_support {
            jobs.push((s, Some((draw, policy.sample(&mut stream)))));
        }
    }

    let entries = jobs
        .into_par_iter()
        .map(|(s, job)| {
            let pair = &support[s];
            match job {
                None => Ok(SupportEntry {
                    image: pair.image.clone(),
                    mask: pair.mask.clone(),
                    provenance: Provenance::Original { support: s },
                }),
                Some((draw, params)) => {
                    let (w, h) = pair.image.dims();
                    let t = AffineTransform::about_center(w, h, &params.affine);
                    let warped = apply_affine_to_image(&pair.image, &t)?;
                    let jitter = ColorJitter::new(params.brightness, params.contrast)?;
                    Ok(SupportEntry {
                        image: apply_color_jitter(&warped, &jitter),
                        mask: apply_affine_to_mask(&pair.mask, &t)?,
                        provenance: Provenance::Augmented {
                            support: s,
                            draw,
                            params,
                        },
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AugmentedSupportSet {
        entries,
        supports: support.len(),
        n_t,
        n_q,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SupportSetIndex {
    supports: usize,
    n_t: usize,
    n_q: usize,
    provenance: Vec<Provenance>,
}

pub const SUPPORT_SET_INDEX: &str = "support_set.json";

/// Writes `images/` and `masks/` slice stacks plus `support_set.json`.
pub fn save_support_set(set: &AugmentedSupportSet, dir: &Path) -> Result<()> {
    let images = SliceVolume::new(set.entries.iter().map(|e| e.image.clone()).collect())?;
    let masks: Vec<BinaryMask> = set.entries.iter().map(|e| e.mask.clone()).collect();
    volume_io::save_volume(&images, &dir.join("images"))?;
    volume_io::save_mask_volume_with_manifest(&masks, &dir.join("masks"), &VolumeManifest::for_masks(&masks))?;
    let index = SupportSetIndex {
        supports: set.supports,
        n_t: set.n_t,
        n_q: set.n_q,
        provenance: set.entries.iter().map(|e| e.provenance.clone()).collect(),
    };
    let mut text = serde_json::to_string_pretty(&index).map_err(VolumeIoError::from)?;
    text.push('\n');
    let path = dir.join(SUPPORT_SET_INDEX);
    fs::write(&path, text).map_err(|source| VolumeIoError::Fs { path, source })?;
    Ok(())
}

pub fn load_support_set(dir: &Path) -> Result<AugmentedSupportSet> {
    let path = dir.join(SUPPORT_SET_INDEX);
    let text = fs::read_to_string(&path).map_err(|source| VolumeIoError::Fs { path, source })?;
    let index: SupportSetIndex = serde_json::from_str(&text).map_err(VolumeIoError::from)?;
    let images = volume_io::load_volume(&dir.join("images"))?;
    let masks = volume_io::load_mask_volume(&dir.join("masks"))?;
    if images.len() != masks.len() || images.len() != index.provenance.len() {
        return Err(AugmentError::InvalidRequest(format!(
            "support set holds {} images, {} masks and {} provenance records",
            images.len(),
            masks.len(),
            index.provenance.len()
        )));
    }
    if images.dims() != masks[0].dims() {
        return Err(AugmentError::Image(ImageError::InconsistentSlice {
            index: 0,
            expected: format!("{}x{}", images.width(), images.height()),
            found: format!("{}x{}", masks[0].width(), masks[0].height()),
        }));
    }
    let entries = images
        .slices()
        .iter()
        .cloned()
        .zip(masks)
        .zip(index.provenance)
        .map(|((image, mask), provenance)| SupportEntry {
            image,
            mask,
            provenance,
        })
        .collect();
    Ok(AugmentedSupportSet {
        entries,
        supports: index.supports,
        n_t: index.n_t,
        n_q: index.n_q,
    })
}
