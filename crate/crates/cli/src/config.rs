//! Run configuration: JSON file values overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use fss_core::augment::AugmentPolicy;
use fss_core::segmenter::ModelVariant;
use fss_core::similarity::MetricId;

use crate::error::CliError;

pub const ENDPOINT_ENV: &str = "FSS_ENDPOINT";
pub const DEFAULT_NT: usize = 2;
pub const DEFAULT_TOLERANCE: f64 = 4.0;
pub const DEFAULT_TIMEOUT_SECS: u64 = 120;
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    TinyFixed,
    InterchangeModel,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Identity,
    Flood,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Every configurable value. Keys mirror the long flag names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_mask: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_slice: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<OneOrMany<MetricId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractor: Option<ExtractorKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nt: Option<OneOrMany<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nq: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<AugmentPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<ModelVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice_detail: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    /// Parses a config file; a `report.json` is accepted through its `config` key.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
        let inner = match value.get("config") {
            Some(c) if value.get("rows").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| CliError::Validation(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Values present in `flags` replace those in `self`.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        overlay!(self, flags;
            support, support_mask, support_slice, class, query, gt, pred, dataset, matches, out,
            metric, extractor, model_path, nt, nq, policy, backend, endpoint, variant, tolerance,
            timeout_secs, retries, max_in_flight, folds, classes, full, slice_detail, seed, workers,
        );
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn nt_values(&self) -> Vec<usize> {
        self.nt.as_ref().map_or(vec![DEFAULT_NT], OneOrMany::to_vec)
    }

    pub fn metric_values(&self) -> Vec<MetricId> {
        self.metric.as_ref().map_or(vec![MetricId::Lpips], OneOrMany::to_vec)
    }

    pub fn single_nt(&self) -> Result<usize, CliError> {
        match self.nt_values().as_slice() {
            [n] => Ok(*n),
            _ => Err(CliError::Validation("--nt takes a single value for this command".into())),
        }
    }

    pub fn single_metric(&self) -> Result<MetricId, CliError> {
        match self.metric_values().as_slice() {
            [m] => Ok(*m),
            _ => Err(CliError::Validation("--metric takes a single value for this command".into())),
        }
    }

    pub fn extractor(&self) -> ExtractorKind {
        self.extractor.unwrap_or(ExtractorKind::TinyFixed)
    }

    pub fn policy(&self) -> AugmentPolicy {
        self.policy.clone().unwrap_or_default()
    }

    /// Flag or file value, then the environment.
    pub fn endpoint(&self) -> Option<String> {
        self.endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Validation(format!("missing required --{flag}")))
    }

    /// Fills every defaulted value so the snapshot is self-contained.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.metric.get_or_insert(OneOrMany::One(MetricId::Lpips));
        c.extractor.get_or_insert(ExtractorKind::TinyFixed);
        c.nt.get_or_insert(OneOrMany::One(DEFAULT_NT));
        c.policy.get_or_insert_with(AugmentPolicy::default);
        c.seed.get_or_insert(0);
        if let Some(b) = c.backend {
            match b {
                BackendKind::Flood => {
                    c.tolerance.get_or_insert(DEFAULT_TOLERANCE);
                }
                BackendKind::Remote => {
                    c.endpoint = c.endpoint();
                    c.variant.get_or_insert(ModelVariant::Tiny);
                    c.timeout_secs.get_or_insert(DEFAULT_TIMEOUT_SECS);
                    c.retries.get_or_insert(DEFAULT_RETRIES);
                    c.max_in_flight.get_or_insert(DEFAULT_MAX_IN_FLIGHT);
                }
                BackendKind::Identity => {}
            }
        }
        c
    }

    /// The configuration embedded in reports: resolved, without output location or worker count.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut c = self.resolved();
        c.out = None;
        c.workers = None;
        serde_json::to_value(c).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let paths = [
            ("support", &self.support),
            ("support-mask", &self.support_mask),
            ("query", &self.query),
            ("gt", &self.gt),
            ("pred", &self.pred),
            ("dataset", &self.dataset),
            ("matches", &self.matches),
            ("model-path", &self.model_path),
        ];
        for (flag, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::Validation(format!("--{flag} {} does not exist", p.display())));
                }
            }
        }
        if let Some(t) = self.tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(CliError::Validation(format!("--tolerance must be a nonnegative number, got {t}")));
            }
        }
        if self.extractor() == ExtractorKind::InterchangeModel && self.model_path.is_none() {
            return Err(CliError::Validation("--extractor interchange-model needs --model-path".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Validation("--workers must be at least 1".into()));
        }
        if self.folds == Some(0) {
            return Err(CliError::Validation("--folds must be at least 1".into()));
        }
        if let Some(p) = &self.policy {
            p.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        }
        Ok(())
    }
}

/// Flags shared by the pipeline commands.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file (keys mirror flag names; flags win). A report.json is accepted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Support PNG, support image volume, labeled volume directory, or augmented support set directory.
    #[arg(long)]
    pub support: Option<PathBuf>,
    /// Support mask PNG or mask volume directory.
    #[arg(long)]
    pub support_mask: Option<PathBuf>,
    /// Slice index used when the support is a volume (default: middle of the labeled extent).
    #[arg(long)]
    pub support_slice: Option<usize>,
    /// Label id inside labeled volume directories.
    #[arg(long)]
    pub class: Option<u32>,
    /// Query image volume (or labeled volume directory).
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Ground-truth mask volume (or labeled volume directory).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Predicted mask volume to score.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Dataset root holding one labeled volume directory per volume.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Existing matches.json to segment with.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Output file or directory (staged, then renamed into place).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// lpips, ssim or psnr (default lpips); sweep accepts a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    pub metric: Option<Vec<MetricId>>,
    /// Feature extractor for lpips (default tiny-fixed).
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorKind>,
    /// Interchange-format model file for --extractor interchange-model.
    #[arg(long)]
    pub model_path: Option<PathBuf>,
    /// Augmentations per query slice (default 2); sweep accepts a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    pub nt: Option<Vec<usize>>,
    /// Query slice count when augmenting without --query.
    #[arg(long)]
    pub nq: Option<usize>,
    /// Segmenter backend.
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Segmenter service base URL (default: $FSS_ENDPOINT).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Remote model variant: tiny, small, base or large (default tiny).
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    /// Flood backend intensity tolerance (default 4).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Remote request timeout in seconds (default 120).
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Remote retries on transport errors (default 2).
    #[arg(long)]
    pub retries: Option<u32>,
    /// Concurrent remote requests (default 4).
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Cross-validation folds (default 5).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Label ids to evaluate (default: every label present).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u32>>,
    /// Keep the full distance matrix in matches.json.
    #[arg(long)]
    pub full: bool,
    /// Add per-slice Dice and winner distances to report rows.
    #[arg(long)]
    pub slice_detail: bool,
    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Replace existing outputs.
    #[arg(long)]
    pub force: bool,
}

fn many<T: Clone>(v: &Option<Vec<T>>) -> Option<OneOrMany<T>> {
    v.clone()
        .map(|mut v| if v.len() == 1 { OneOrMany::One(v.remove(0)) } else { OneOrMany::Many(v) })
}

impl RunArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            support: self.support.clone(),
            support_mask: self.support_mask.clone(),
            support_slice: self.support_slice,
            class: self.class,
            query: self.query.clone(),
            gt: self.gt.clone(),
            pred: self.pred.clone(),
            dataset: self.dataset.clone(),
            matches: self.matches.clone(),
            out: self.out.clone(),
            metric: many(&self.metric),
            extractor: self.extractor,
            model_path: self.model_path.clone(),
            nt: many(&self.nt),
            nq: self.nq,
            policy: None,
            backend: self.backend,
            endpoint: self.endpoint.clone(),
            variant: self.variant,
            tolerance: self.tolerance,
            timeout_secs: self.timeout_secs,
            retries: self.retries,
            max_in_flight: self.max_in_flight,
            folds: self.folds,
            classes: self.classes.clone(),
            full: self.full.then_some(true),
            slice_detail: self.slice_detail.then_some(true),
            seed: self.seed,
            workers: self.workers,
        }
    }

    /// File values (if any) overlaid by flags, then validated.
    pub fn effective(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cfg = base.overlay(self.flags());
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig::from_json(r#"{"nt": 4, "metric": "ssim", "seed": 9, "backend": "flood"}"#).unwrap();
        let flags = RunConfig {
            nt: Some(OneOrMany::One(1)),
            ..Default::default()
        };
        let c = file.overlay(flags);
        assert_eq!(c.single_nt().unwrap(), 1);
        assert_eq!(c.single_metric().unwrap(), MetricId::Ssim);
        assert_eq!(c.seed(), 9);
        assert_eq!(c.backend, Some(BackendKind::Flood));
    }

    #[test]
    fn list_values_and_report_configs() {
        let c = RunConfig::from_json(r#"{"nt": [0, 1, 2, 4], "metric": ["lpips", "psnr"]}"#).unwrap();
        assert_eq!(c.nt_values(), vec![0, 1, 2, 4]);
        assert!(c.single_nt().is_err());
        let report = format!(r#"{{"config": {}, "rows": []}}"#, c.to_json());
        assert_eq!(RunConfig::from_json(&report).unwrap(), c);
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let c = RunConfig {
            backend: Some(BackendKind::Flood),
            out: Some("x".into()),
            ..Default::default()
        };
        let snap = c.snapshot();
        assert!(snap.get("out").is_none());
        assert_eq!(snap["tolerance"], DEFAULT_TOLERANCE);
        let back: RunConfig = serde_json::from_value(snap.clone()).unwrap();
        assert_eq!(back.snapshot(), snap);
    }
}
