//! Prompt-driven segmentation of a query volume.
//!
//! For each query slice a two-frame sequence is built: the matched support
//! image first, carrying its mask as the prompt, then the query slice. The
//! backend propagates the prompt and the output for the query frame becomes
//! that slice's mask. Backends are treated as stateless black boxes.

mod flood;
pub mod remote;

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::augment::AugmentedSupportSet;
use crate::image::{BinaryMask, GrayImage, SliceVolume};
use crate::matcher::MatchAssignment;

pub use flood::FloodBackend;
pub use remote::{remote_backend, HealthStatus, ModelVariant, RemoteBackend};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("segmenter service unreachable: {0}")]
    Unreachable(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("segmenter service reported an error (HTTP {status}): {message}")]
    RemoteModelError { status: u16, message: String },
    #[error("invalid prompted sequence: {0}")]
    InvalidSequence(String),
}

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("backend failed on slice {slice}: {source}")]
    Backend {
        slice: usize,
        #[source]
        source: BackendError,
    },
    #[error("prompt geometry mismatch on slice {slice}: {detail}")]
    PromptGeometryMismatch { slice: usize, detail: String },
    #[error("assignment does not cover the volume: {0}")]
    IncompleteAssignment(String),
}

/// Frames plus one mask prompt attached to `prompt_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptedSequence {
    frames: Vec<GrayImage>,
    prompt_frame: usize,
    prompt_mask: BinaryMask,
}

impl PromptedSequence {
    pub fn new(frames: Vec<GrayImage>, prompt_frame: usize, prompt_mask: BinaryMask) -> Result<Self, BackendError> {
        if prompt_frame >= frames.len() {
            return Err(BackendError::InvalidSequence(format!(
                "prompt frame {prompt_frame} out of range for {} frames",
                frames.len()
            )));
        }
        let dims = prompt_mask.dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(BackendError::InvalidSequence(format!(
                "frame {i} is {}x{}, prompt mask is {}x{}",
                f.width(),
                f.height(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self {
            frames,
            prompt_frame,
            prompt_mask,
        })
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn prompt_frame(&self) -> usize {
        self.prompt_frame
    }

    pub fn prompt_mask(&self) -> &BinaryMask {
        &self.prompt_mask
    }

    pub fn dims(&self) -> (u32, u32) {
        self.prompt_mask.dims()
    }
}

/// A promptable sequence segmenter. Implementations must return one mask per
/// frame, reproduce the prompt exactly on the prompted frame, and be
/// deterministic for identical input.
pub trait SegmenterBackend: Send + Sync + fmt::Debug {
    fn id(&self) -> String;

    fn segment(&self, seq: &PromptedSequence) -> Result<Vec<BinaryMask>, BackendError>;
}

/// Returns the prompt mask for every frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

pub fn identity_backend() -> IdentityBackend {
    IdentityBackend
}

impl SegmenterBackend for IdentityBackend {
    fn id(&self) -> String {
        "identity".into()
    }

    fn segment(&self, seq: &PromptedSequence) -> Result<Vec<BinaryMask>, BackendError> {
        Ok(vec![seq.prompt_mask().clone(); seq.frames().len()])
    }
}

pub fn flood_backend(intensity_tolerance: f64) -> FloodBackend {
    FloodBackend::new(intensity_tolerance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub masks: Vec<BinaryMask>,
    pub timings_ms: Vec<f64>,
    pub backend_id: String,
}

/// Index of the query frame within each per-slice sequence.
pub const QUERY_FRAME: usize = 1;
/// Index of the prompted support frame within each per-slice sequence.
pub const SUPPORT_FRAME: usize = 0;

/// Builds the `[support, query]` sequence for slice `j`.
pub fn build_sequence(
    q: &SliceVolume,
    s: &AugmentedSupportSet,
    assignment: &MatchAssignment,
    j: usize,
) -> Result<PromptedSequence, SegmentError> {
    let m = assignment
        .slices
        .get(j)
        .ok_or_else(|| SegmentError::IncompleteAssignment(format!("no match for slice {j}")))?;
    let entry = s.entries().get(m.winner_index).ok_or_else(|| {
        SegmentError::IncompleteAssignment(format!(
            "slice {j} matched entry {} but the support set has {}",
            m.winner_index,
            s.len()
        ))
    })?;
    let query = &q.slices()[j];
    if entry.image.dims() != query.dims() || entry.mask.dims() != query.dims() {
        return Err(SegmentError::PromptGeometryMismatch {
            slice: j,
            detail: format!(
                "support {}x{}, query {}x{}",
                entry.image.width(),
                entry.image.height(),
                query.width(),
                query.height()
            ),
        });
    }
    PromptedSequence::new(vec![entry.image.clone(), query.clone()], SUPPORT_FRAME, entry.mask.clone())
        .map_err(|e| SegmentError::PromptGeometryMismatch {
            slice: j,
            detail: e.to_string(),
        })
}

pub fn segment_volume(
    q: &SliceVolume,
    s: &AugmentedSupportSet,
    assignment: &MatchAssignment,
    backend: &dyn SegmenterBackend,
) -> Result<SegmentationResult, SegmentError> {
    if assignment.slices.len() != q.len() {
        return Err(SegmentError::IncompleteAssignment(format!(
            "{} matches for {} slices",
            assignment.slices.len(),
            q.len()
        )));
    }
    if let Some((j, m)) = assignment
        .slices
        .iter()
        .enumerate()
        .find(|(j, m)| m.slice_index != *j)
    {
        return Err(SegmentError::IncompleteAssignment(format!(
            "match {j} refers to slice {}",
            m.slice_index
        )));
    }
    let outputs = (0..q.len())
        .into_par_iter()
        .map(|j| {
            let seq = build_sequence(q, s, assignment, j)?;
            let started = Instant::now();
            let mut masks = backend
                .segment(&seq)
                .map_err(|source| SegmentError::Backend { slice: j, source })?;
            let elapsed = started.elapsed().as_secs_f64() * 1e3;
            if masks.len() != seq.frames().len() {
                return Err(SegmentError::Backend {
                    slice: j,
                    source: BackendError::ProtocolViolation(format!(
                        "{} masks for {} frames",
                        masks.len(),
                        seq.frames().len()
                    )),
                });
            }
            let mask = masks.swap_remove(QUERY_FRAME);
            if mask.dims() != seq.dims() {
                return Err(SegmentError::Backend {
                    slice: j,
                    source: BackendError::ProtocolViolation(format!(
                        "query mask is {}x{}, frame is {}x{}",
                        mask.width(),
                        mask.height(),
                        seq.dims().0,
                        seq.dims().1
                    )),
                });
            }
            Ok((mask, elapsed))
        })
        .collect::<Result<Vec<_>, SegmentError>>()?;
    let (masks, timings_ms) = outputs.into_iter().unzip();
    Ok(SegmentationResult {
        masks,
        timings_ms,
        backend_id: backend.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{Provenance, SupportEntry};
    use crate::image::BitDepth;
    use crate::matcher::{MetricConfig, SliceMatch};
    use crate::similarity::MetricId;

    fn slice(seed: u32) -> GrayImage {
        GrayImage::from_fn(12, 10, BitDepth::Eight, |x, y| ((x * 13 + y * 7 + seed * 31) % 256) as u16).unwrap()
    }

    fn disk(cx: i32, cy: i32, r: i32) -> BinaryMask {
        BinaryMask::from_fn(12, 10, |x, y| {
            let (dx, dy) = (x as i32 - cx, y as i32 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    fn planted(q: &SliceVolume, gt: &[BinaryMask]) -> (AugmentedSupportSet, MatchAssignment) {
        let entries: Vec<SupportEntry> = q
            .slices()
            .iter()
            .zip(gt)
            .enumerate()
            .map(|(i, (image, mask))| SupportEntry {
                image: image.clone(),
                mask: mask.clone(),
                provenance: Provenance::Original { support: i },
            })
            .collect();
        let n = entries.len();
        let set = AugmentedSupportSet::from_entries(entries, n, 0, n);
        let assignment = crate::matcher::match_volume(q, &set, &MetricConfig::Psnr).unwrap();
        (set, assignment)
    }

    #[test]
    fn identity_backend_propagates_correct_prompts() {
        let q = SliceVolume::new((0..4).map(slice).collect()).unwrap();
        let gt: Vec<BinaryMask> = (0..4).map(|i| disk(5, 5, i)).collect();
        let (set, assignment) = planted(&q, &gt);
        let out = segment_volume(&q, &set, &assignment, &identity_backend()).unwrap();
        assert_eq!(out.masks, gt);
        assert_eq!(out.backend_id, "identity");
        assert_eq!(out.timings_ms.len(), 4);
    }

    #[derive(Debug, Default)]
    struct Counting(std::sync::atomic::AtomicUsize);

    impl SegmenterBackend for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn segment(&self, seq: &PromptedSequence) -> Result<Vec<BinaryMask>, BackendError> {
            self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            IdentityBackend.segment(seq)
        }
    }

    #[test]
    fn single_slice_volume_calls_backend_once() {
        let q = SliceVolume::new(vec![slice(3)]).unwrap();
        let (set, assignment) = planted(&q, &[disk(4, 4, 2)]);
        let backend = Counting::default();
        let out = segment_volume(&q, &set, &assignment, &backend).unwrap();
        assert_eq!(out.masks.len(), 1);
        assert_eq!(backend.0.load(std::sync::atomic::Ordering::SeqCst), 1);
    }

    #[derive(Debug)]
    struct Failing;

    impl SegmenterBackend for Failing {
        fn id(&self) -> String {
            "failing".into()
        }
        fn segment(&self, _: &PromptedSequence) -> Result<Vec<BinaryMask>, BackendError> {
            Err(BackendError::Unreachable("down".into()))
        }
    }

    #[test]
    fn backend_failure_fails_the_volume_naming_the_slice() {
        let q = SliceVolume::new(vec![slice(1)]).unwrap();
        let (set, assignment) = planted(&q, &[disk(4, 4, 2)]);
        assert!(matches!(
            segment_volume(&q, &set, &assignment, &Failing),
            Err(SegmentError::Backend { slice: 0, .. })
        ));
    }

    #[test]
    fn mismatched_support_geometry_is_rejected() {
        let q = SliceVolume::new(vec![slice(1)]).unwrap();
        let other = GrayImage::filled(8, 8, BitDepth::Eight, 1).unwrap();
        let set = AugmentedSupportSet::from_entries(
            vec![SupportEntry {
                image: other,
                mask: BinaryMask::empty(8, 8),
                provenance: Provenance::Original { support: 0 },
            }],
            1,
            0,
            1,
        );
        let assignment = MatchAssignment {
            metric: MetricId::Psnr,
            slices: vec![SliceMatch {
                slice_index: 0,
                winner_index: 0,
                winner_distance: 0.0,
                metric: MetricId::Psnr,
                provenance: None,
            }],
            rows: None,
        };
        assert!(matches!(
            segment_volume(&q, &set, &assignment, &identity_backend()),
            Err(SegmentError::PromptGeometryMismatch { slice: 0, .. })
        ));
        let short = MatchAssignment {
            slices: vec![],
            ..assignment
        };
        assert!(matches!(
            segment_volume(&q, &set, &short, &identity_backend()),
            Err(SegmentError::IncompleteAssignment(_))
        ));
    }

    #[test]
    fn identity_backend_contract() {
        let frames = vec![slice(0), slice(1), slice(2)];
        let prompt = disk(6, 5, 3);
        let seq = PromptedSequence::new(frames.clone(), 1, prompt.clone()).unwrap();
        let out = IdentityBackend.segment(&seq).unwrap();
        assert_eq!(out, vec![prompt.clone(); 3]);
        assert_eq!(IdentityBackend.segment(&seq).unwrap(), out);
        let empty = PromptedSequence::new(frames, 0, BinaryMask::empty(12, 10)).unwrap();
        assert!(IdentityBackend.segment(&empty).unwrap().iter().all(BinaryMask::is_empty));
    }

    #[test]
    fn prompted_sequence_validation() {
        assert!(PromptedSequence::new(vec![slice(0)], 1, disk(1, 1, 1)).is_err());
        assert!(PromptedSequence::new(vec![slice(0)], 0, BinaryMask::empty(3, 3)).is_err());
    }
}
