//! Loading supports, queries and mask stacks from the accepted path layouts.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use fss_core::augment::{load_support_set, AugmentedSupportSet, SUPPORT_SET_INDEX};
use fss_core::eval::{load_labeled_volume, select_support_slice, LabeledVolume, SupportSliceRule};
use fss_core::image::{BinaryMask, LabeledSlice, SliceVolume};
use fss_core::matcher::MetricConfig;
use fss_core::phantom::{IMAGE_DIR, LABELS_DIR};
use fss_core::segmenter::{flood_backend, identity_backend, remote_backend, SegmenterBackend};
use fss_core::similarity::{FeatureExtractor, IdentityExtractor, InterchangeModelExtractor, MetricId, TinyFixedExtractor};
use fss_core::volume_io;

use crate::config::{BackendKind, ExtractorKind, RunConfig, DEFAULT_MAX_IN_FLIGHT, DEFAULT_RETRIES, DEFAULT_TIMEOUT_SECS, DEFAULT_TOLERANCE};
use crate::error::CliError;

pub enum Support {
    Raw(LabeledSlice),
    Augmented(AugmentedSupportSet),
}

fn is_labeled_volume(p: &Path) -> bool {
    p.join(IMAGE_DIR).is_dir() && p.join(LABELS_DIR).is_dir()
}

fn labeled(p: &Path) -> Result<LabeledVolume, CliError> {
    let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    load_labeled_volume(p, &id).map_err(|e| CliError::input(&p.display().to_string(), e))
}

/// The class to read from a labeled volume: `--class`, or the only label present.
pub fn pick_class(vol: &LabeledVolume, class: Option<u32>) -> Result<u32, CliError> {
    match class {
        Some(c) if vol.labels.contains_key(&c) => Ok(c),
        Some(c) => Err(CliError::Validation(format!("volume `{}` has no label {c}", vol.id))),
        None if vol.labels.len() == 1 => Ok(*vol.labels.keys().next().expect("one label")),
        None => Err(CliError::Validation(format!(
            "volume `{}` has labels {:?}; choose one with --class",
            vol.id,
            vol.labels.keys().collect::<Vec<_>>()
        ))),
    }
}

fn slice_rule(cfg: &RunConfig) -> SupportSliceRule {
    cfg.support_slice.map_or(SupportSliceRule::Middle, SupportSliceRule::Index)
}

pub fn load_support(cfg: &RunConfig) -> Result<Support, CliError> {
    let path = RunConfig::require(&cfg.support, "support")?;
    if path.is_file() {
        let mask_path = RunConfig::require(&cfg.support_mask, "support-mask")?;
        let image = volume_io::read_gray_png(path).map_err(|e| CliError::input("support image", e))?;
        let mask = volume_io::read_mask_png(mask_path).map_err(|e| CliError::input("support mask", e))?;
        let pair = LabeledSlice::new(image, mask).map_err(|e| CliError::input("support pair", e))?;
        return Ok(Support::Raw(pair));
    }
    if path.join(SUPPORT_SET_INDEX).is_file() {
        let set = load_support_set(path).map_err(|e| CliError::input("augmented support set", e))?;
        return Ok(Support::Augmented(set));
    }
    let vol = if is_labeled_volume(path) {
        labeled(path)?
    } else {
        let image = volume_io::load_volume(path).map_err(|e| CliError::input("support volume", e))?;
        let mask_path = RunConfig::require(&cfg.support_mask, "support-mask")?;
        let masks = volume_io::load_mask_volume(mask_path).map_err(|e| CliError::input("support masks", e))?;
        let mut labels = std::collections::BTreeMap::new();
        labels.insert(cfg.class.unwrap_or(1), masks);
        LabeledVolume::new("support", image, labels).map_err(|e| CliError::input("support volume", e))?
    };
    let class = pick_class(&vol, cfg.class)?;
    let z = select_support_slice(&vol, class, slice_rule(cfg)).map_err(|e| CliError::Validation(e.to_string()))?;
    log::info!("support slice {z} of {} (class {class})", vol.id);
    let pair = LabeledSlice::new(vol.image.slices()[z].clone(), vol.labels[&class][z].clone())
        .map_err(|e| CliError::input("support pair", e))?;
    Ok(Support::Raw(pair))
}

pub fn load_query(cfg: &RunConfig) -> Result<SliceVolume, CliError> {
    let path = RunConfig::require(&cfg.query, "query")?;
    let dir = if is_labeled_volume(path) { path.join(IMAGE_DIR) } else { path.clone() };
    volume_io::load_volume(&dir).map_err(|e| CliError::input("query volume", e))
}

/// A mask stack given directly or as the `--class` label of a labeled volume.
pub fn load_masks(path: &Path, class: Option<u32>, what: &str) -> Result<Vec<BinaryMask>, CliError> {
    if is_labeled_volume(path) {
        let vol = labeled(path)?;
        let c = pick_class(&vol, class)?;
        return Ok(vol.labels[&c].clone());
    }
    volume_io::load_mask_volume(path).map_err(|e| CliError::input(what, e))
}

pub fn extractor(cfg: &RunConfig) -> Result<Arc<dyn FeatureExtractor>, CliError> {
    Ok(match cfg.extractor() {
        ExtractorKind::TinyFixed => Arc::new(TinyFixedExtractor::new()),
        ExtractorKind::Identity => Arc::new(IdentityExtractor),
        ExtractorKind::InterchangeModel => {
            let p = RunConfig::require(&cfg.model_path, "model-path")?;
            Arc::new(InterchangeModelExtractor::load(p).map_err(|e| CliError::input("model", e))?)
        }
    })
}

pub fn metric_config(cfg: &RunConfig, metric: MetricId) -> Result<MetricConfig, CliError> {
    Ok(match metric {
        MetricId::Lpips => MetricConfig::lpips(extractor(cfg)?).map_err(|e| CliError::input("metric", e))?,
        MetricId::Ssim => MetricConfig::Ssim,
        MetricId::Psnr => MetricConfig::Psnr,
    })
}

/// Builds the selected backend; the remote one must pass its health check.
pub fn backend(cfg: &RunConfig) -> Result<Arc<dyn SegmenterBackend>, CliError> {
    let kind = cfg
        .backend
        .ok_or_else(|| CliError::Validation("select a backend with --backend identity|flood|remote".into()))?;
    Ok(match kind {
        BackendKind::Identity => Arc::new(identity_backend()),
        BackendKind::Flood => Arc::new(flood_backend(cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE))),
        BackendKind::Remote => {
            let endpoint = cfg
                .endpoint()
                .ok_or_else(|| CliError::Validation("--backend remote needs --endpoint or FSS_ENDPOINT".into()))?;
            let b = remote_backend(
                &endpoint,
                cfg.variant.unwrap_or_default(),
                Duration::from_secs(cfg.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS)),
                cfg.retries.unwrap_or(DEFAULT_RETRIES),
            )
            .with_max_in_flight(cfg.max_in_flight.unwrap_or(DEFAULT_MAX_IN_FLIGHT));
            let health = b.health().map_err(|e| CliError::pipeline("segmenter health check", e))?;
            log::info!("segmenter at {endpoint} is {} ({})", health.status, health.model);
            Arc::new(b)
        }
    })
}
