//! Synthetic ellipsoid phantoms with analytic ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, BitDepth, GrayImage, ImageError, SliceVolume};
use crate::rng::{derive_seed, SampleStream};
use crate::volume_io::{self, VolumeIoError, VolumeManifest};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("phantom spec out of bounds: {0}")]
    SpecOutOfBounds(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] VolumeIoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Organ {
    pub label: u32,
    #[serde(default)]
    pub name: String,
    /// `(x, y, z)` in voxels.
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub intensity: f64,
    /// Intensity added per slice index.
    #[serde(default)]
    pub ramp: f64,
}

impl Organ {
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let [cx, cy, cz] = self.center;
        let [ax, ay, az] = self.semi_axes;
        let (dx, dy, dz) = ((x - cx) / ax, (y - cy) / ay, (z - cz) / az);
        dx * dx + dy * dy + dz * dz <= 1.0
    }

    fn intensity_at(&self, z: f64) -> f64 {
        self.intensity + self.ramp * z
    }

    pub fn display_name(&self) -> String {
        if self.name.is_empty() {
            format!("label{}", self.label)
        } else {
            self.name.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: u32,
    pub height: u32,
    pub slices: usize,
    pub bit_depth: BitDepth,
    /// Later organs overwrite earlier ones where they overlap.
    pub organs: Vec<Organ>,
    pub background: f64,
    /// Noise is a uniform integer in `[-amplitude, amplitude]` per voxel.
    #[serde(default)]
    pub noise_amplitude: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub separable: bool,
}

impl PhantomSpec {
    /// Two well separated organs: a large ellipsoid and a smaller one beside it.
    pub fn two_organ(width: u32, height: u32, slices: usize, seed: u64) -> Self {
        let (w, h, n) = (width as f64, height as f64, slices as f64);
        let zc = (n - 1.0) / 2.0;
        let az = (n - 1.0) / 2.0 + 0.25;
        Self {
            width,
            height,
            slices,
            bit_depth: BitDepth::Eight,
            organs: vec![
                Organ {
                    label: 1,
                    name: "large".into(),
                    center: [w * 0.34, h * 0.5, zc],
                    semi_axes: [w * 0.2, h * 0.28, az],
                    intensity: 170.0,
                    ramp: 0.0,
                },
                Organ {
                    label: 2,
                    name: "small".into(),
                    center: [w * 0.74, h * 0.44, zc],
                    semi_axes: [w * 0.13, h * 0.17, az * 0.8],
                    intensity: 110.0,
                    ramp: 0.0,
                },
            ],
            background: 40.0,
            noise_amplitude: 2,
            seed,
            separable: true,
        }
    }

    pub fn with_ramp(mut self, ramp: f64) -> Self {
        for o in &mut self.organs {
            o.ramp = ramp;
        }
        self
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let oob = |m: String| Err(PhantomError::SpecOutOfBounds(m));
        if self.width == 0 || self.height == 0 || self.slices == 0 {
            return oob(format!("empty geometry {}x{}x{}", self.width, self.height, self.slices));
        }
        if self.slices > volume_io::MAX_SLICES {
            return oob(format!("{} slices exceeds {}", self.slices, volume_io::MAX_SLICES));
        }
        let max = self.bit_depth.max_value() as f64;
        let amp = self.noise_amplitude as f64;
        if !(0.0..=max).contains(&self.background) {
            return oob(format!("background {} outside [0, {max}]", self.background));
        }
        let extent = [self.width as f64 - 1.0, self.height as f64 - 1.0, self.slices as f64 - 1.0];
        let mut labels = std::collections::BTreeSet::new();
        for o in &self.organs {
            if !labels.insert(o.label) {
                return oob(format!("duplicate label {}", o.label));
            }
            if o.label == 0 {
                return oob("label 0 is reserved for background".into());
            }
            for (axis, &e) in extent.iter().enumerate() {
                let (c, a) = (o.center[axis], o.semi_axes[axis]);
                if !(a.is_finite() && a > 0.0 && c.is_finite()) {
                    return oob(format!("organ {}: invalid axis {axis}", o.label));
                }
                if c - a < -0.5 || c + a > e + 0.5 {
                    return oob(format!(
                        "organ {}: extent [{}, {}] on axis {axis} leaves [0, {}]",
                        o.label,
                        c - a,
                        c + a,
                        extent[axis]
                    ));
                }
            }
            for z in [0.0, extent[2]] {
                let v = o.intensity_at(z);
                if !(amp..=max - amp).contains(&v) {
                    return oob(format!("organ {}: intensity {v} at z={z} clips under noise", o.label));
                }
            }
        }
        if self.separable {
            let gap = 2.0 * amp;
            for (i, o) in self.organs.iter().enumerate() {
                for z in [0.0, extent[2]] {
                    let v = o.intensity_at(z);
                    if (v - self.background).abs() <= gap {
                        return oob(format!("organ {}: not separable from background at z={z}", o.label));
                    }
                    for p in &self.organs[i + 1..] {
                        if (v - p.intensity_at(z)).abs() <= gap {
                            return oob(format!("organs {} and {} not separable at z={z}", o.label, p.label));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: SliceVolume,
    /// Per-label mask volumes.
    pub masks: BTreeMap<u32, Vec<BinaryMask>>,
    pub spec: PhantomSpec,
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let plane = w as usize * h as usize;
    let amp = spec.noise_amplitude as i64;
    let mut stream = SampleStream::new(derive_seed(spec.seed, "phantom/noise"));
    let noise: Vec<Vec<i64>> = (0..spec.slices)
        .map(|_| {
            (0..plane)
                .map(|_| if amp == 0 { 0 } else { stream.int_inclusive(-amp, amp) })
                .collect()
        })
        .collect();
    let max = spec.bit_depth.max_value() as f64;
    let slices = noise
        .par_iter()
        .enumerate()
        .map(|(z, noise)| {
            let zf = z as f64;
            GrayImage::from_fn(w, h, spec.bit_depth, |x, y| {
                let base = spec
                    .organs
                    .iter()
                    .rev()
                    .find(|o| o.contains(x as f64, y as f64, zf))
                    .map_or(spec.background, |o| o.intensity_at(zf));
                let v = base + noise[y as usize * w as usize + x as usize] as f64;
                v.round().clamp(0.0, max) as u16
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let masks = spec
        .organs
        .iter()
        .map(|o| {
            let stack = (0..spec.slices)
                .map(|z| BinaryMask::from_fn(w, h, |x, y| o.contains(x as f64, y as f64, z as f64)))
                .collect();
            (o.label, stack)
        })
        .collect();
    Ok(Phantom {
        volume: SliceVolume::new(slices)?,
        masks,
        spec: spec.clone(),
    })
}

pub const IMAGE_DIR: &str = "image";
pub const LABELS_DIR: &str = "labels";
pub const SPEC_FILE: &str = "phantom.json";

/// Writes `image/`, `labels/<label>/` and `phantom.json` under `dir`.
pub fn write_phantom(phantom: &Phantom, dir: &Path) -> Result<(), PhantomError> {
    let labels: BTreeMap<u32, String> = phantom
        .spec
        .organs
        .iter()
        .map(|o| (o.label, o.display_name()))
        .collect();
    let mut manifest = VolumeManifest::for_volume(&phantom.volume);
    manifest.labels = labels.clone();
    volume_io::save_volume_with_manifest(&phantom.volume, &dir.join(IMAGE_DIR), &manifest)?;
    for (label, stack) in &phantom.masks {
        let mut m = VolumeManifest::for_masks(stack);
        m.labels.insert(*label, labels[label].clone());
        volume_io::save_mask_volume_with_manifest(stack, &dir.join(LABELS_DIR).join(label.to_string()), &m)?;
    }
    let spec = serde_json::to_string_pretty(&phantom.spec).expect("spec serializes") + "\n";
    let path = dir.join(SPEC_FILE);
    std::fs::write(&path, spec).map_err(|source| VolumeIoError::Fs { path, source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(noise: u32) -> PhantomSpec {
        PhantomSpec {
            width: 41,
            height: 41,
            slices: 21,
            bit_depth: BitDepth::Eight,
            organs: vec![Organ {
                label: 1,
                name: String::new(),
                center: [20.0, 20.0, 10.0],
                semi_axes: [12.0, 12.0, 10.0],
                intensity: 200.0,
                ramp: 0.0,
            }],
            background: 20.0,
            noise_amplitude: noise,
            seed: 5,
            separable: true,
        }
    }

    #[test]
    fn cross_sections_follow_the_analytic_radius() {
        let p = generate(&sphere(0)).unwrap();
        let masks = &p.masks[&1];
        for (z, m) in masks.iter().enumerate() {
            let t = (z as f64 - 10.0) / 10.0;
            let r = 12.0 * (1.0 - t * t).max(0.0).sqrt();
            // Horizontal run through the center row equals the lattice points within r.
            let run = (0..41).filter(|&x| m.get(x, 20)).count();
            let expected = (0..41).filter(|&x| (x as f64 - 20.0).abs() <= r + 1e-12).count();
            assert_eq!(run, expected, "slice {z}");
        }
        let mid = masks[10].count();
        assert!(masks.iter().all(|m| m.count() <= mid));
        assert!(masks[10].get(32, 20) && !masks[10].get(33, 20));
    }

    #[test]
    fn images_match_masks_without_noise() {
        let p = generate(&sphere(0)).unwrap();
        for (img, m) in p.volume.slices().iter().zip(&p.masks[&1]) {
            for y in 0..41 {
                for x in 0..41 {
                    assert_eq!(img.get(x, y), if m.get(x, y) { 200 } else { 20 });
                }
            }
        }
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let spec = sphere(2);
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        let b = generate(&PhantomSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a.volume, b.volume);
        for (img, m) in a.volume.slices().iter().zip(&a.masks[&1]) {
            for y in 0..41 {
                for x in 0..41 {
                    let base = if m.get(x, y) { 200 } else { 20 };
                    assert!((img.get(x, y) as i32 - base).abs() <= 2);
                }
            }
        }
    }

    #[test]
    fn disjoint_organs_have_disjoint_masks() {
        let p = generate(&PhantomSpec {
            noise_amplitude: 0,
            ..PhantomSpec::two_organ(64, 48, 12, 1)
        })
        .unwrap();
        for (a, b) in p.masks[&1].iter().zip(&p.masks[&2]) {
            assert!(a.values().iter().zip(b.values()).all(|(&x, &y)| x == 0 || y == 0));
        }
        assert!(p.masks[&1].iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn out_of_bounds_specs_are_rejected() {
        let mut s = sphere(0);
        s.organs[0].center[0] = 35.0;
        assert!(matches!(generate(&s), Err(PhantomError::SpecOutOfBounds(_))));
        let mut s = sphere(30);
        s.background = 180.0;
        assert!(matches!(s.validate(), Err(PhantomError::SpecOutOfBounds(_))));
        s.separable = false;
        assert!(s.validate().is_ok());
        let mut s = sphere(0);
        s.organs[0].ramp = 10.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn written_layout_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = generate(&PhantomSpec::two_organ(32, 24, 6, 3)).unwrap();
        write_phantom(&p, dir.path()).unwrap();
        assert_eq!(volume_io::load_volume(&dir.path().join(IMAGE_DIR)).unwrap(), p.volume);
        for (label, stack) in &p.masks {
            let loaded = volume_io::load_mask_volume(&dir.path().join(LABELS_DIR).join(label.to_string())).unwrap();
            assert_eq!(&loaded, stack);
        }
        let spec: PhantomSpec =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(SPEC_FILE)).unwrap()).unwrap();
        assert_eq!(spec, p.spec);
    }
}
