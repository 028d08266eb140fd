//! Augment, match and segment chained for one query volume.

use std::sync::Arc;

use thiserror::Error;

use crate::augment::{build_support_set, AugmentError, AugmentPolicy, AugmentedSupportSet};
use crate::image::{LabeledSlice, SliceVolume};
use crate::matcher::{match_volume_with, MatchAssignment, MatchError, MetricConfig};
use crate::segmenter::{segment_volume, SegmentError, SegmentationResult, SegmenterBackend};
use crate::similarity::FeatureCache;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("augmentation failed: {0}")]
    Augment(#[from] AugmentError),
    #[error("matching failed: {0}")]
    Match(#[from] MatchError),
    #[error("segmentation failed: {0}")]
    Segment(#[from] SegmentError),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub n_t: usize,
    /// `policy.seed` is the augmentation seed used as-is.
    pub policy: AugmentPolicy,
    pub metric: MetricConfig,
    pub backend: Arc<dyn SegmenterBackend>,
    pub keep_rows: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub support_set: AugmentedSupportSet,
    pub assignment: MatchAssignment,
    pub segmentation: SegmentationResult,
}

pub fn run_pipeline(
    supports: &[LabeledSlice],
    query: &SliceVolume,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let support_set = build_support_set(supports, config.n_t, query.len(), &config.policy)?;
    let cache = FeatureCache::new();
    let assignment = match_volume_with(query, &support_set, &config.metric, config.keep_rows, &cache)?;
    let segmentation = segment_volume(query, &support_set, &assignment, config.backend.as_ref())?;
    Ok(PipelineOutput {
        support_set,
        assignment,
        segmentation,
    })
}
