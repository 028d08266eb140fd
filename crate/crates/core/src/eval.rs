//! Episodes, Dice scoring, fold plans and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, LabeledSlice, SliceVolume};
use crate::phantom::{IMAGE_DIR, LABELS_DIR};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use crate::rng::{derive_seed, SampleStream};
use crate::volume_io::{self, VolumeIoError};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient volumes: {0}")]
    InsufficientVolumes(String),
    #[error("cannot select a support slice from volume `{volume}` for class {class}: {reason}")]
    SupportSelection { volume: String, class: u32, reason: String },
    #[error("episode {episode}: {source}")]
    Pipeline {
        episode: String,
        #[source]
        source: PipelineError,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] VolumeIoError),
}

/// Dice from overlap and set sizes; two empty sets score 1.
pub fn dice_from_counts(intersection: u64, x: u64, y: u64) -> f64 {
    if x + y == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / (x + y) as f64
    }
}

fn overlap(x: &BinaryMask, y: &BinaryMask) -> Result<(u64, u64, u64), EvalError> {
    if x.dims() != y.dims() {
        return Err(EvalError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    let inter = x
        .values()
        .iter()
        .zip(y.values())
        .filter(|(&a, &b)| a != 0 && b != 0)
        .count();
    Ok((inter as u64, x.count() as u64, y.count() as u64))
}

pub fn dice(x: &BinaryMask, y: &BinaryMask) -> Result<f64, EvalError> {
    let (i, a, b) = overlap(x, y)?;
    Ok(dice_from_counts(i, a, b))
}

/// Dice over all voxels of two mask stacks.
pub fn dice_volume(x: &[BinaryMask], y: &[BinaryMask]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::DimensionMismatch(format!("{} slices vs {}", x.len(), y.len())));
    }
    let (mut i, mut a, mut b) = (0, 0, 0);
    for (p, q) in x.iter().zip(y) {
        let (pi, pa, pb) = overlap(p, q)?;
        i += pi;
        a += pa;
        b += pb;
    }
    Ok(dice_from_counts(i, a, b))
}

/// An image volume with per-class mask stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    pub id: String,
    pub image: SliceVolume,
    pub labels: BTreeMap<u32, Vec<BinaryMask>>,
    pub class_names: BTreeMap<u32, String>,
}

impl LabeledVolume {
    pub fn new(
        id: impl Into<String>,
        image: SliceVolume,
        labels: BTreeMap<u32, Vec<BinaryMask>>,
    ) -> Result<Self, EvalError> {
        let id = id.into();
        for (class, stack) in &labels {
            if stack.len() != image.len() || stack.iter().any(|m| m.dims() != image.dims()) {
                return Err(EvalError::DimensionMismatch(format!(
                    "volume `{id}` class {class}: mask stack does not match the image"
                )));
            }
        }
        Ok(Self {
            id,
            image,
            labels,
            class_names: BTreeMap::new(),
        })
    }

    pub fn class_name(&self, class: u32) -> String {
        self.class_names
            .get(&class)
            .cloned()
            .unwrap_or_else(|| format!("label{class}"))
    }
}

/// Reads `image/` and every `labels/<class>/` stack under `dir`.
pub fn load_labeled_volume(dir: &Path, id: &str) -> Result<LabeledVolume, EvalError> {
    let (image, manifest) = volume_io::load_volume_with_manifest(&dir.join(IMAGE_DIR))?;
    let labels_dir = dir.join(LABELS_DIR);
    let mut labels = BTreeMap::new();
    let entries = std::fs::read_dir(&labels_dir).map_err(|source| VolumeIoError::Fs {
        path: labels_dir.clone(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| VolumeIoError::Fs {
            path: labels_dir.clone(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Ok(class) = name.parse::<u32>() else {
            continue;
        };
        labels.insert(class, volume_io::load_mask_volume(&entry.path())?);
    }
    let mut vol = LabeledVolume::new(id, image, labels)?;
    vol.class_names = manifest.labels;
    Ok(vol)
}

/// Loads every subdirectory of `root` holding an `image/` stack, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<LabeledVolume>, EvalError> {
    let entries = std::fs::read_dir(root).map_err(|source| VolumeIoError::Fs {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<(String, PathBuf)> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().join(IMAGE_DIR).is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(EvalError::Dataset(format!("no volumes under {}", root.display())));
    }
    dirs.iter().map(|(id, path)| load_labeled_volume(path, id)).collect()
}

/// Volume-to-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Shuffles the ids with the seed, then deals them round robin.
    pub fn new(ids: &[String], folds: usize, seed: u64) -> Result<Self, EvalError> {
        if folds == 0 {
            return Err(EvalError::InsufficientVolumes("zero folds requested".into()));
        }
        if ids.len() < folds {
            return Err(EvalError::InsufficientVolumes(format!(
                "{} volumes cannot fill {folds} folds",
                ids.len()
            )));
        }
        let mut order: Vec<String> = ids.to_vec();
        order.sort();
        order.dedup();
        if order.len() != ids.len() {
            return Err(EvalError::Dataset("duplicate volume ids".into()));
        }
        let mut stream = SampleStream::new(derive_seed(seed, "eval/folds"));
        for i in (1..order.len()).rev() {
            let j = stream.int_inclusive(0, i as i64) as usize;
            order.swap(i, j);
        }
        let assignments = order.into_iter().enumerate().map(|(i, id)| (id, i % folds)).collect();
        Ok(Self { folds, assignments })
    }

    pub fn members(&self, fold: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupportSliceRule {
    /// Middle of the class's occupied z-extent.
    #[default]
    Middle,
    Index(usize),
}

/// Picks the support slice index for `class` in `volume`.
pub fn select_support_slice(volume: &LabeledVolume, class: u32, rule: SupportSliceRule) -> Result<usize, EvalError> {
    let err = |reason: String| EvalError::SupportSelection {
        volume: volume.id.clone(),
        class,
        reason,
    };
    let stack = volume
        .labels
        .get(&class)
        .ok_or_else(|| err("class has no mask stack".into()))?;
    let index = match rule {
        SupportSliceRule::Middle => {
            let occupied: Vec<usize> = (0..stack.len()).filter(|&z| !stack[z].is_empty()).collect();
            let (Some(&lo), Some(&hi)) = (occupied.first(), occupied.last()) else {
                return Err(err("class is absent from every slice".into()));
            };
            (lo + hi) / 2
        }
        SupportSliceRule::Index(i) => {
            if i >= stack.len() {
                return Err(err(format!("slice {i} out of range for {} slices", stack.len())));
            }
            i
        }
    };
    if stack[index].is_empty() {
        return Err(err(format!("class is absent from slice {index}")));
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub class_id: u32,
    pub class_name: String,
    pub fold: usize,
    pub support_volume: String,
    pub support_slice: usize,
    pub support: LabeledSlice,
    pub query_volume: String,
    pub query: SliceVolume,
    pub query_gt: Vec<BinaryMask>,
}

impl Episode {
    pub fn id(&self) -> String {
        format!("{}/fold{}/{}", self.class_name, self.fold, self.query_volume)
    }
}

/// For each fold, the lowest-id volume of that fold supplies the support
/// slice and every other volume of the dataset is a query.
pub fn build_episodes(
    dataset: &[LabeledVolume],
    class_id: u32,
    plan: &FoldPlan,
    rule: SupportSliceRule,
) -> Result<Vec<Episode>, EvalError> {
    if dataset.len() < 2 {
        return Err(EvalError::InsufficientVolumes(format!(
            "{} volume(s); one support and at least one query are required",
            dataset.len()
        )));
    }
    let by_id: BTreeMap<&str, &LabeledVolume> = dataset.iter().map(|v| (v.id.as_str(), v)).collect();
    if let Some(v) = dataset.iter().find(|v| !plan.assignments.contains_key(&v.id)) {
        return Err(EvalError::Dataset(format!("volume `{}` is not in the fold plan", v.id)));
    }
    let mut episodes = Vec::new();
    for fold in 0..plan.folds {
        let members = plan.members(fold);
        let support_id = members
            .first()
            .ok_or_else(|| EvalError::InsufficientVolumes(format!("fold {fold} is empty")))?;
        let support_vol = by_id
            .get(support_id.as_str())
            .ok_or_else(|| EvalError::Dataset(format!("fold plan names unknown volume `{support_id}`")))?;
        let z = select_support_slice(support_vol, class_id, rule)?;
        let support = LabeledSlice::new(
            support_vol.image.slices()[z].clone(),
            support_vol.labels[&class_id][z].clone(),
        )
        .map_err(|e| EvalError::DimensionMismatch(e.to_string()))?;
        for q in dataset.iter().filter(|v| &v.id != support_id) {
            if q.image.dims() != support_vol.image.dims() {
                return Err(EvalError::DimensionMismatch(format!(
                    "query `{}` and support `{}` differ in slice geometry",
                    q.id, support_id
                )));
            }
            let gt = q.labels.get(&class_id).cloned().unwrap_or_else(|| {
                vec![BinaryMask::empty(q.image.width(), q.image.height()); q.image.len()]
            });
            episodes.push(Episode {
                class_id,
                class_name: support_vol.class_name(class_id),
                fold,
                support_volume: support_id.clone(),
                support_slice: z,
                support: support.clone(),
                query_volume: q.id.clone(),
                query: q.image.clone(),
                query_gt: gt,
            });
        }
    }
    Ok(episodes)
}

/// Augmentation seed for one (class, fold) support pool.
pub fn episode_augment_seed(master: u64, class_id: u32, fold: usize) -> u64 {
    derive_seed(master, &format!("augment/class{class_id}/fold{fold}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub class: String,
    pub class_id: u32,
    pub fold: usize,
    pub support_volume: String,
    pub support_slice: usize,
    pub query_volume: String,
    pub dice: f64,
    pub n_slices: usize,
    pub timing_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_dice: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::matcher::float_vec")]
    pub winner_distances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFoldMean {
    pub class: String,
    pub fold: usize,
    pub mean_dice: f64,
    pub volumes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMean {
    pub class: String,
    pub mean_dice: f64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub per_class_fold: Vec<ClassFoldMean>,
    pub per_class: Vec<ClassMean>,
    pub grand_mean: f64,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl Aggregates {
    /// Fold means of volume Dice, class means of fold means, grand mean of class means.
    /// Rows must already be in (class_id, fold, query_volume) order.
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let mut groups: BTreeMap<(u32, usize), (String, Vec<f64>)> = BTreeMap::new();
        for r in rows {
            groups
                .entry((r.class_id, r.fold))
                .or_insert_with(|| (r.class.clone(), Vec::new()))
                .1
                .push(r.dice);
        }
        let per_class_fold: Vec<ClassFoldMean> = groups
            .iter()
            .map(|(&(_, fold), (class, d))| ClassFoldMean {
                class: class.clone(),
                fold,
                mean_dice: mean(d.iter().copied()),
                volumes: d.len(),
            })
            .collect();
        let mut classes: BTreeMap<u32, (String, Vec<f64>)> = BTreeMap::new();
        for (&(class_id, _), cf) in groups.keys().zip(&per_class_fold) {
            classes
                .entry(class_id)
                .or_insert_with(|| (cf.class.clone(), Vec::new()))
                .1
                .push(cf.mean_dice);
        }
        let per_class: Vec<ClassMean> = classes
            .into_values()
            .map(|(class, f)| ClassMean {
                class,
                mean_dice: mean(f.iter().copied()),
                folds: f.len(),
            })
            .collect();
        let grand_mean = mean(per_class.iter().map(|c| c.mean_dice));
        Self {
            per_class_fold,
            per_class,
            grand_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub backend: String,
    pub metric: String,
    pub caveats: Vec<String>,
}

pub fn protocol_caveats() -> Vec<String> {
    vec![
        "Dice is computed in 3D per query volume, then averaged; slice-averaged 2D Dice can differ.".into(),
        "A slice pair where prediction and ground truth are both empty scores 1.0.".into(),
        "The support slice is the middle of the class's occupied z-extent in the support volume unless an index is given.".into(),
        "The method is training-free, so the Setting 1 / Setting 2 split of published FSMIS protocols does not apply; compare against Setting 1 numbers with that in mind.".into(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub metadata: ReportMetadata,
    pub rows: Vec<EvalRow>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub master_seed: u64,
    pub slice_detail: bool,
}

/// Runs every episode; the augmentation seed of `config.policy` is replaced
/// per episode by [`episode_augment_seed`].
pub fn run_evaluation(
    episodes: &[Episode],
    config: &PipelineConfig,
    options: EvalOptions,
    config_snapshot: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    let mut rows = episodes
        .par_iter()
        .map(|ep| {
            let mut cfg = config.clone();
            cfg.policy.seed = episode_augment_seed(options.master_seed, ep.class_id, ep.fold);
            let started = Instant::now();
            let out = run_pipeline(std::slice::from_ref(&ep.support), &ep.query, &cfg).map_err(|source| {
                EvalError::Pipeline {
                    episode: ep.id(),
                    source,
                }
            })?;
            let timing_ms = started.elapsed().as_secs_f64() * 1e3;
            let masks = &out.segmentation.masks;
            let d = dice_volume(masks, &ep.query_gt)?;
            let slice_dice = if options.slice_detail {
                Some(
                    masks
                        .iter()
                        .zip(&ep.query_gt)
                        .map(|(p, g)| dice(p, g))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            } else {
                None
            };
            let winner_distances = options.slice_detail.then(|| out.assignment.distances());
            Ok(EvalRow {
                class: ep.class_name.clone(),
                class_id: ep.class_id,
                fold: ep.fold,
                support_volume: ep.support_volume.clone(),
                support_slice: ep.support_slice,
                query_volume: ep.query_volume.clone(),
                dice: d,
                n_slices: ep.query.len(),
                timing_ms,
                slice_dice,
                winner_distances,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    rows.sort_by(|a, b| {
        (a.class_id, a.fold, &a.query_volume).cmp(&(b.class_id, b.fold, &b.query_volume))
    });
    let aggregates = Aggregates::from_rows(&rows);
    Ok(EvalReport {
        config: config_snapshot,
        metadata: ReportMetadata {
            backend: config.backend.id(),
            metric: config.metric.id().to_string(),
            caveats: protocol_caveats(),
        },
        rows,
        aggregates,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Class columns plus the mean, Dice in percent, one row labelled `method`.
    pub fn table(&self, method: &str) -> String {
        let mut header = vec!["Method".to_string()];
        header.extend(self.aggregates.per_class.iter().map(|c| c.class.clone()));
        header.push("Mean".into());
        let mut row = vec![method.to_string()];
        row.extend(self.aggregates.per_class.iter().map(|c| format!("{:.2}", 100.0 * c.mean_dice)));
        row.push(format!("{:.2}", 100.0 * self.aggregates.grand_mean));
        let widths: Vec<usize> = header.iter().zip(&row).map(|(a, b)| a.len().max(b.len())).collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = String::new();
        let head = line(&header);
        let _ = writeln!(out, "{head}");
        let _ = writeln!(out, "{}", "-".repeat(head.len()));
        let _ = writeln!(out, "{}", line(&row));
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16} {:>4} {:>8} {:>8}", "class", "fold", "volumes", "dice");
        for cf in &self.aggregates.per_class_fold {
            let _ = writeln!(
                out,
                "{:<16} {:>4} {:>8} {:>8.2}",
                cf.class,
                cf.fold,
                cf.volumes,
                100.0 * cf.mean_dice
            );
        }
        out
    }
}
