//! In-memory grayscale images, binary masks and slice volumes.
//!
//! All three types validate their invariants on construction and are
//! immutable afterwards, so they can be shared freely across threads.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("pixel buffer has {actual} values, expected {expected} for {width}x{height}")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("intensity {value} exceeds the {bits}-bit maximum")]
    IntensityOutOfRange { value: u16, bits: u8 },
    #[error("mask value {0} is not 0 or 1")]
    NonBinary(u8),
    #[error("image dimensions must be nonzero")]
    Empty,
    #[error("volume must contain at least one slice")]
    EmptyVolume,
    #[error("slice {index} is {found}, volume geometry is {expected}")]
    InconsistentSlice {
        index: usize,
        expected: String,
        found: String,
    },
}

/// Supported sample depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    /// Largest representable intensity, `2^bits - 1`.
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }
}

impl TryFrom<u8> for BitDepth {
    type Error = String;

    fn try_from(bits: u8) -> Result<Self, Self::Error> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(format!("unsupported bit depth {other}, expected 8 or 16")),
        }
    }
}

impl From<BitDepth> for u8 {
    fn from(depth: BitDepth) -> u8 {
        depth.bits()
    }
}

/// Row-major grayscale image, origin top-left.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    depth: BitDepth,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, depth: BitDepth, pixels: Vec<u16>) -> Result<Self, ImageError> {
        check_len(width, height, pixels.len())?;
        let max = depth.max_value();
        if let Some(&value) = pixels.iter().find(|&&p| p > max) {
            return Err(ImageError::IntensityOutOfRange {
                value,
                bits: depth.bits(),
            });
        }
        Ok(Self {
            width,
            height,
            depth,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, depth: BitDepth, value: u16) -> Result<Self, ImageError> {
        Self::new(width, height, depth, vec![value; width as usize * height as usize])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        depth: BitDepth,
        mut f: impl FnMut(u32, u32) -> u16,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, depth, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Intensities scaled into `[0, 1]` by the bit-depth maximum.
    pub fn normalized(&self) -> Vec<f64> {
        let max = f64::from(self.depth.max_value());
        self.pixels.iter().map(|&p| f64::from(p) / max).collect()
    }

    /// Content hash over geometry, depth and pixels.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update([self.depth.bits()]);
        for p in &self.pixels {
            hasher.update(p.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// Row-major binary mask holding only 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self, ImageError> {
        check_len(width, height, values.len())?;
        if let Some(&v) = values.iter().find(|&&v| v > 1) {
            return Err(ImageError::NonBinary(v));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Maps every nonzero input to 1.
    pub fn binarize(width: u32, height: u32, raw: &[u16]) -> Result<Self, ImageError> {
        check_len(width, height, raw.len())?;
        Ok(Self {
            width,
            height,
            values: raw.iter().map(|&v| u8::from(v != 0)).collect(),
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(u8::from(f(x, y)));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.values[y as usize * self.width as usize + x as usize] != 0
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Mask as an 8-bit image with foreground at 255.
    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            depth: BitDepth::Eight,
            pixels: self.values.iter().map(|&v| u16::from(v) * 255).collect(),
        }
    }
}

fn check_len(width: u32, height: u32, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Empty);
    }
    let expected = width as usize * height as usize;
    if len != expected {
        return Err(ImageError::BufferSize {
            width,
            height,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Support image paired with its pixel-correspondent mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSlice {
    pub image: GrayImage,
    pub mask: BinaryMask,
}

impl LabeledSlice {
    pub fn new(image: GrayImage, mask: BinaryMask) -> Result<Self, ImageError> {
        if image.dims() != mask.dims() {
            return Err(ImageError::InconsistentSlice {
                index: 0,
                expected: format!("{}x{}", image.width(), image.height()),
                found: format!("{}x{}", mask.width(), mask.height()),
            });
        }
        Ok(Self { image, mask })
    }
}

/// Ordered stack of slices sharing width, height and bit depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceVolume {
    slices: Vec<GrayImage>,
}

impl SliceVolume {
    pub fn new(slices: Vec<GrayImage>) -> Result<Self, ImageError> {
        let first = slices.first().ok_or(ImageError::EmptyVolume)?;
        let key = (first.width, first.height, first.depth);
        for (index, s) in slices.iter().enumerate() {
            if (s.width, s.height, s.depth) != key {
                return Err(ImageError::InconsistentSlice {
                    index,
                    expected: format!("{}x{}@{}", key.0, key.1, key.2.bits()),
                    found: format!("{}x{}@{}", s.width, s.height, s.depth.bits()),
                });
            }
        }
        Ok(Self { slices })
    }

    pub fn slices(&self) -> &[GrayImage] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.slices[0].width
    }

    pub fn height(&self) -> u32 {
        self.slices[0].height
    }

    pub fn depth(&self) -> BitDepth {
        self.slices[0].depth
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width(), self.height())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_intensity() {
        let err = GrayImage::new(2, 1, BitDepth::Eight, vec![0, 256]).unwrap_err();
        assert_eq!(err, ImageError::IntensityOutOfRange { value: 256, bits: 8 });
        assert!(GrayImage::new(2, 1, BitDepth::Sixteen, vec![0, 256]).is_ok());
    }

    #[test]
    fn rejects_wrong_buffer_len() {
        assert!(matches!(
            GrayImage::new(2, 2, BitDepth::Eight, vec![0; 3]),
            Err(ImageError::BufferSize { expected: 4, actual: 3, .. })
        ));
        assert_eq!(BinaryMask::new(0, 2, vec![]), Err(ImageError::Empty));
    }

    #[test]
    fn mask_rejects_nonbinary_and_binarize_accepts_anything() {
        assert_eq!(BinaryMask::new(2, 1, vec![0, 2]), Err(ImageError::NonBinary(2)));
        let m = BinaryMask::binarize(3, 1, &[0, 7, 255]).unwrap();
        assert_eq!(m.values(), &[0, 1, 1]);
        let again = BinaryMask::binarize(3, 1, &m.values().iter().map(|&v| v as u16).collect::<Vec<_>>()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn volume_requires_uniform_geometry() {
        let a = GrayImage::filled(4, 4, BitDepth::Eight, 1).unwrap();
        let b = GrayImage::filled(4, 3, BitDepth::Eight, 1).unwrap();
        assert_eq!(SliceVolume::new(vec![]), Err(ImageError::EmptyVolume));
        assert!(matches!(
            SliceVolume::new(vec![a.clone(), b]),
            Err(ImageError::InconsistentSlice { index: 1, .. })
        ));
        let c = GrayImage::filled(4, 4, BitDepth::Sixteen, 1).unwrap();
        assert!(SliceVolume::new(vec![a, c]).is_err());
    }

    #[test]
    fn content_hash_tracks_depth() {
        let a = GrayImage::filled(2, 2, BitDepth::Eight, 3).unwrap();
        let b = GrayImage::filled(2, 2, BitDepth::Sixteen, 3).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
