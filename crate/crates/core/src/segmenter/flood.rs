use std::collections::VecDeque;

use crate::image::{BinaryMask, GrayImage};

use super::{BackendError, PromptedSequence, SegmenterBackend};

/// Intensity-similarity region growing from the prompt footprint.
///
/// The reference intensity is the mean of the prompted frame over the
/// prompt's 4-eroded interior (the whole prompt when erosion leaves nothing),
/// so interpolated rim pixels of warped supports do not bias it. A frame
/// bit-identical to the prompted frame returns the prompt unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloodBackend {
    tolerance: f64,
}

impl FloodBackend {
    pub fn new(intensity_tolerance: f64) -> Self {
        Self {
            tolerance: if intensity_tolerance.is_finite() {
                intensity_tolerance.max(0.0)
            } else {
                0.0
            },
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

fn eroded(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && x > 0
            && y > 0
            && x + 1 < w
            && y + 1 < h
            && mask.get(x - 1, y)
            && mask.get(x + 1, y)
            && mask.get(x, y - 1)
            && mask.get(x, y + 1)
    })
}

fn region_mean(img: &GrayImage, mask: &BinaryMask) -> Option<f64> {
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let sum: u64 = img
        .pixels()
        .iter()
        .zip(mask.values())
        .filter(|(_, &m)| m != 0)
        .map(|(&p, _)| p as u64)
        .sum();
    Some(sum as f64 / n as f64)
}

fn flood(frame: &GrayImage, footprint: &BinaryMask, mean: f64, tol: f64) -> BinaryMask {
    let (w, h) = frame.dims();
    let (wu, hu) = (w as usize, h as usize);
    let px = frame.pixels();
    let within = |i: usize| (px[i] as f64 - mean).abs() <= tol;
    let mut out = vec![0u8; wu * hu];
    let mut queue: VecDeque<usize> = footprint
        .values()
        .iter()
        .enumerate()
        .filter(|&(i, &m)| m != 0 && within(i))
        .map(|(i, _)| i)
        .collect();
    for &i in &queue {
        out[i] = 1;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % wu, i / wu);
        let mut visit = |j: usize| {
            if out[j] == 0 && within(j) {
                out[j] = 1;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < wu {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - wu);
        }
        if y + 1 < hu {
            visit(i + wu);
        }
    }
    BinaryMask::new(w, h, out).expect("flood output has frame geometry")
}

impl SegmenterBackend for FloodBackend {
    fn id(&self) -> String {
        format!("flood:{}", self.tolerance)
    }

    fn segment(&self, seq: &PromptedSequence) -> Result<Vec<BinaryMask>, BackendError> {
        let k = seq.prompt_frame();
        let prompted = &seq.frames()[k];
        let prompt = seq.prompt_mask();
        let interior = eroded(prompt);
        let mean = region_mean(prompted, &interior).or_else(|| region_mean(prompted, prompt));
        Ok(seq
            .frames()
            .iter()
            .enumerate()
            .map(|(i, frame)| match mean {
                _ if i == k || frame == prompted => prompt.clone(),
                None => BinaryMask::empty(frame.width(), frame.height()),
                Some(m) => flood(frame, prompt, m, self.tolerance),
            })
            .collect())
    }
}
