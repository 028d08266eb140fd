//! Slice-stack directory format.
//!
//! A volume is a directory holding `manifest.json` and one grayscale PNG per
//! slice named `slice_0000.png`, `slice_0001.png`, ... (four-digit zero
//! padding, contiguous from zero). Image slices are 8- or 16-bit; mask
//! volumes use the same layout with 8-bit `{0, 255}` slices.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, BitDepth, GrayImage, ImageError, SliceVolume};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MAX_SLICES: usize = 10_000;

/// Decoded PNGs larger than this are rejected before allocation.
const PNG_DECODE_LIMIT: usize = 256 << 20;

#[derive(Debug, Error)]
pub enum VolumeIoError {
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),
    #[error("slice files are not contiguous: slice {missing:04} is missing")]
    SliceGap { missing: usize },
    #[error("manifest declares {manifest} slices but {found} slice files are present")]
    SliceCountMismatch { manifest: usize, found: usize },
    #[error("{what}: expected {expected}, found {found}")]
    GeometryMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("refusing to overwrite {0}: existing contents conflict")]
    OverwriteRefused(PathBuf),
    #[error("volume has {0} slices, the filename scheme allows at most {MAX_SLICES}")]
    TooManySlices(usize),
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("png decode: {0}")]
    PngDecode(String),
    #[error("png encode: {0}")]
    PngEncode(String),
    #[error("unsupported png layout: {0}")]
    UnsupportedPng(String),
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

type Result<T> = std::result::Result<T, VolumeIoError>;

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeIoError + '_ {
    move |source| VolumeIoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeManifest {
    pub width: u32,
    pub height: u32,
    pub bit_depth: BitDepth,
    pub slice_count: usize,
    #[serde(default)]
    pub labels: BTreeMap<u32, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl VolumeManifest {
    pub fn for_volume(volume: &SliceVolume) -> Self {
        Self {
            width: volume.width(),
            height: volume.height(),
            bit_depth: volume.depth(),
            slice_count: volume.len(),
            labels: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn for_masks(masks: &[BinaryMask]) -> Self {
        let (width, height) = masks.first().map(BinaryMask::dims).unwrap_or((0, 0));
        Self {
            width,
            height,
            bit_depth: BitDepth::Eight,
            slice_count: masks.len(),
            labels: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: Self = serde_json::from_str(text)?;
        if manifest.width == 0 || manifest.height == 0 {
            return Err(VolumeIoError::GeometryMismatch {
                what: "manifest".into(),
                expected: "nonzero width and height".into(),
                found: format!("{}x{}", manifest.width, manifest.height),
            });
        }
        if manifest.slice_count == 0 || manifest.slice_count > MAX_SLICES {
            return Err(VolumeIoError::SliceCountMismatch {
                manifest: manifest.slice_count,
                found: manifest.slice_count,
            });
        }
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }
}

pub fn slice_file_name(index: usize) -> String {
    format!("slice_{index:04}.png")
}

fn parse_slice_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("slice_")?.strip_suffix(".png")?;
    if digits.len() != 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Raw decoded grayscale samples plus their PNG bit depth.
struct DecodedGray {
    width: u32,
    height: u32,
    bits: u8,
    samples: Vec<u16>,
}

fn decode_gray(bytes: &[u8]) -> Result<DecodedGray> {
    let mut decoder = png::Decoder::new_with_limits(
        Cursor::new(bytes),
        png::Limits {
            bytes: PNG_DECODE_LIMIT,
        },
    );
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| VolumeIoError::PngDecode(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| VolumeIoError::PngDecode(e.to_string()))?;
    if frame.color_type != png::ColorType::Grayscale {
        return Err(VolumeIoError::UnsupportedPng(format!(
            "color type {:?}, expected grayscale",
            frame.color_type
        )));
    }
    let (width, height) = (frame.width, frame.height);
    let px = width as usize * height as usize;
    let line = frame.line_size;
    let samples = match frame.bit_depth {
        png::BitDepth::Eight => (0..height as usize)
            .flat_map(|y| buf[y * line..y * line + width as usize].iter().map(|&b| u16::from(b)))
            .collect::<Vec<_>>(),
        png::BitDepth::Sixteen => (0..height as usize)
            .flat_map(|y| {
                buf[y * line..y * line + 2 * width as usize]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
            })
            .collect::<Vec<_>>(),
        other => {
            return Err(VolumeIoError::UnsupportedPng(format!("bit depth {other:?}")));
        }
    };
    debug_assert_eq!(samples.len(), px);
    let bits = if frame.bit_depth == png::BitDepth::Sixteen { 16 } else { 8 };
    Ok(DecodedGray {
        width,
        height,
        bits,
        samples,
    })
}

/// Decodes an 8- or 16-bit grayscale PNG. Sub-byte depths are widened to 8 bits.
pub fn decode_gray_png(bytes: &[u8]) -> Result<GrayImage> {
    let d = decode_gray(bytes)?;
    let depth = if d.bits == 16 { BitDepth::Sixteen } else { BitDepth::Eight };
    Ok(GrayImage::new(d.width, d.height, depth, d.samples)?)
}

/// Decodes a grayscale PNG as a mask; every nonzero sample becomes 1.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    let d = decode_gray(bytes)?;
    Ok(BinaryMask::binarize(d.width, d.height, &d.samples)?)
}

/// Like [`decode_mask_png`], also returning how many samples were neither 0 nor 255.
pub fn decode_mask_png_counting(bytes: &[u8]) -> Result<(BinaryMask, usize)> {
    let d = decode_gray(bytes)?;
    let full = if d.bits == 16 { u16::MAX } else { 255 };
    let odd = d.samples.iter().filter(|&&v| v != 0 && v != full).count();
    Ok((BinaryMask::binarize(d.width, d.height, &d.samples)?, odd))
}

pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width(), img.height());
        encoder.set_color(png::ColorType::Grayscale);
        let data: Vec<u8> = match img.depth() {
            BitDepth::Eight => {
                encoder.set_depth(png::BitDepth::Eight);
                img.pixels().iter().map(|&p| p as u8).collect()
            }
            BitDepth::Sixteen => {
                encoder.set_depth(png::BitDepth::Sixteen);
                img.pixels().iter().flat_map(|p| p.to_be_bytes()).collect()
            }
        };
        let mut writer = encoder
            .write_header()
            .map_err(|e| VolumeIoError::PngEncode(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| VolumeIoError::PngEncode(e.to_string()))?;
    }
    Ok(out)
}

/// Encodes a mask as an 8-bit `{0, 255}` PNG.
pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    encode_gray_png(&mask.to_image())
}

pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    decode_gray_png(&fs::read(path).map_err(fs_err(path))?)
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    decode_mask_png(&fs::read(path).map_err(fs_err(path))?)
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_gray_png(img)?).map_err(fs_err(path))
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    fs::write(path, encode_mask_png(mask)?).map_err(fs_err(path))
}

pub fn read_manifest(dir: &Path) -> Result<VolumeManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(VolumeIoError::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
    VolumeManifest::from_json(&text)
}

/// Lists slice files, checking contiguity and the manifest count.
fn slice_paths(dir: &Path, manifest: &VolumeManifest) -> Result<Vec<PathBuf>> {
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(fs_err(dir))? {
        let entry = entry.map_err(fs_err(dir))?;
        if let Some(index) = entry.file_name().to_str().and_then(parse_slice_index) {
            indices.push(index);
        }
    }
    indices.sort_unstable();
    for (expected, &found) in indices.iter().enumerate() {
        if found != expected {
            return Err(VolumeIoError::SliceGap { missing: expected });
        }
    }
    if indices.len() != manifest.slice_count {
        if indices.len() < manifest.slice_count {
            return Err(VolumeIoError::SliceGap {
                missing: indices.len(),
            });
        }
        return Err(VolumeIoError::SliceCountMismatch {
            manifest: manifest.slice_count,
            found: indices.len(),
        });
    }
    Ok(indices.into_iter().map(|i| dir.join(slice_file_name(i))).collect())
}

fn check_geometry(path: &Path, manifest: &VolumeManifest, dims: (u32, u32)) -> Result<()> {
    if dims != (manifest.width, manifest.height) {
        return Err(VolumeIoError::GeometryMismatch {
            what: path.display().to_string(),
            expected: format!("{}x{}", manifest.width, manifest.height),
            found: format!("{}x{}", dims.0, dims.1),
        });
    }
    Ok(())
}

/// Loads a volume and its manifest.
pub fn load_volume_with_manifest(dir: &Path) -> Result<(SliceVolume, VolumeManifest)> {
    let manifest = read_manifest(dir)?;
    let paths = slice_paths(dir, &manifest)?;
    let slices = paths
        .par_iter()
        .map(|path| {
            let img = read_gray_png(path)?;
            check_geometry(path, &manifest, img.dims())?;
            if img.depth() != manifest.bit_depth {
                return Err(VolumeIoError::GeometryMismatch {
                    what: path.display().to_string(),
                    expected: format!("{}-bit", manifest.bit_depth.bits()),
                    found: format!("{}-bit", img.depth().bits()),
                });
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((SliceVolume::new(slices)?, manifest))
}

pub fn load_volume(dir: &Path) -> Result<SliceVolume> {
    load_volume_with_manifest(dir).map(|(v, _)| v)
}

/// Loads a mask stack, binarizing every slice (nonzero maps to 1).
pub fn load_mask_volume(dir: &Path) -> Result<Vec<BinaryMask>> {
    let manifest = read_manifest(dir)?;
    let paths = slice_paths(dir, &manifest)?;
    paths
        .par_iter()
        .map(|path| {
            let mask = read_mask_png(path)?;
            check_geometry(path, &manifest, mask.dims())?;
            Ok(mask)
        })
        .collect()
}

/// Refuses to write into `dir` when it already holds a different volume.
fn prepare_target(dir: &Path, manifest: &VolumeManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = fs::read_to_string(&manifest_path).map_err(fs_err(&manifest_path))?;
        match VolumeManifest::from_json(&existing) {
            Ok(m) if m == *manifest => return Ok(()),
            _ => return Err(VolumeIoError::OverwriteRefused(manifest_path)),
        }
    }
    for entry in fs::read_dir(dir).map_err(fs_err(dir))? {
        let entry = entry.map_err(fs_err(dir))?;
        if entry.file_name().to_str().and_then(parse_slice_index).is_some() {
            return Err(VolumeIoError::OverwriteRefused(entry.path()));
        }
    }
    Ok(())
}

fn write_stack(dir: &Path, manifest: &VolumeManifest, encoded: Vec<Vec<u8>>) -> Result<()> {
    if encoded.len() > MAX_SLICES {
        return Err(VolumeIoError::TooManySlices(encoded.len()));
    }
    prepare_target(dir, manifest)?;
    for (i, bytes) in encoded.into_iter().enumerate() {
        let path = dir.join(slice_file_name(i));
        fs::write(&path, bytes).map_err(fs_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(fs_err(&path))
}

pub fn save_volume_with_manifest(volume: &SliceVolume, dir: &Path, manifest: &VolumeManifest) -> Result<()> {
    let expected = VolumeManifest::for_volume(volume);
    if (manifest.width, manifest.height, manifest.bit_depth, manifest.slice_count)
        != (expected.width, expected.height, expected.bit_depth, expected.slice_count)
    {
        return Err(VolumeIoError::GeometryMismatch {
            what: "manifest".into(),
            expected: format!(
                "{}x{}@{} n={}",
                expected.width,
                expected.height,
                expected.bit_depth.bits(),
                expected.slice_count
            ),
            found: format!(
                "{}x{}@{} n={}",
                manifest.width,
                manifest.height,
                manifest.bit_depth.bits(),
                manifest.slice_count
            ),
        });
    }
    let encoded = volume
        .slices()
        .par_iter()
        .map(encode_gray_png)
        .collect::<Result<Vec<_>>>()?;
    write_stack(dir, manifest, encoded)
}

/// Writes `volume` into `dir`, creating it if needed.
pub fn save_volume(volume: &SliceVolume, dir: &Path) -> Result<()> {
    save_volume_with_manifest(volume, dir, &VolumeManifest::for_volume(volume))
}

pub fn save_mask_volume_with_manifest(masks: &[BinaryMask], dir: &Path, manifest: &VolumeManifest) -> Result<()> {
    let first = masks.first().ok_or(ImageError::EmptyVolume)?;
    for (i, m) in masks.iter().enumerate() {
        if m.dims() != first.dims() {
            return Err(VolumeIoError::GeometryMismatch {
                what: format!("mask {i}"),
                expected: format!("{}x{}", first.width(), first.height()),
                found: format!("{}x{}", m.width(), m.height()),
            });
        }
    }
    let encoded = masks
        .par_iter()
        .map(encode_mask_png)
        .collect::<Result<Vec<_>>>()?;
    write_stack(dir, manifest, encoded)
}

pub fn save_mask_volume(masks: &[BinaryMask], dir: &Path) -> Result<()> {
    save_mask_volume_with_manifest(masks, dir, &VolumeManifest::for_masks(masks))
}
