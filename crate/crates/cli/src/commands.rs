use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fss_core::augment::{build_support_set, save_support_set, AugmentedSupportSet};
use fss_core::eval::{
    build_episodes, dice, dice_volume, load_dataset, run_evaluation, Aggregates, EvalOptions, EvalReport, EvalRow,
    FoldPlan, ReportMetadata, SupportSliceRule,
};
use fss_core::matcher::{float_vec, match_volume_with, MatchAssignment, MatchesFile};
use fss_core::phantom::{generate, write_phantom, PhantomSpec};
use fss_core::pipeline::PipelineConfig;
use fss_core::rng::derive_seed;
use fss_core::segmenter::segment_volume;
use fss_core::similarity::{FeatureCache, MetricId};
use fss_core::volume_io;

use crate::config::{RunArgs, RunConfig, DEFAULT_FOLDS};
use crate::error::CliError;
use crate::inputs::{self, Support};
use crate::output;

#[derive(Debug, Parser)]
#[command(name = "fss", version, about = "Training-free few-shot volume segmentation by support augmentation and matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Phantom(PhantomArgs),
    /// Build the augmented support set.
    Augment(RunArgs),
    /// Match every query slice to its closest augmented support.
    Match(RunArgs),
    /// Segment a query volume (augmenting and matching first when needed).
    Segment(RunArgs),
    /// Score predictions, or cross-validate over a dataset.
    Eval(RunArgs),
    /// Evaluate a grid of N_T values and metrics.
    Sweep(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Phantom spec JSON; the generated volumes differ only in their seed.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub volumes: usize,
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 64)]
    pub height: u32,
    #[arg(long, default_value_t = 24)]
    pub slices: usize,
    /// Noise amplitude (uniform integer in [-n, n]).
    #[arg(long)]
    pub noise: Option<u32>,
    /// Per-slice intensity ramp added to every organ.
    #[arg(long)]
    pub ramp: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

fn force(args: &RunArgs) -> bool {
    args.force
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Augment(a) => with_workers(&a, cmd_augment),
        Command::Match(a) => with_workers(&a, cmd_match),
        Command::Segment(a) => with_workers(&a, cmd_segment),
        Command::Eval(a) => with_workers(&a, cmd_eval),
        Command::Sweep(a) => with_workers(&a, cmd_sweep),
    }
}

fn with_workers(args: &RunArgs, f: fn(&RunConfig, bool) -> Result<(), CliError>) -> Result<(), CliError> {
    let cfg = args.effective()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::pipeline("worker pool", e))?;
    pool.install(|| f(&cfg, force(args)))
}

fn out_path(cfg: &RunConfig) -> Result<&PathBuf, CliError> {
    RunConfig::require(&cfg.out, "out")
}

pub fn cmd_phantom(a: &PhantomArgs) -> Result<(), CliError> {
    let base = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input("phantom spec", e))?;
            serde_json::from_str::<PhantomSpec>(&text).map_err(|e| CliError::input("phantom spec", e))?
        }
        None => PhantomSpec::two_organ(a.width, a.height, a.slices, 0),
    };
    let mut base = match a.ramp {
        Some(r) => base.with_ramp(r),
        None => base,
    };
    if let Some(n) = a.noise {
        base.noise_amplitude = n;
    }
    base.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    if a.volumes == 0 {
        return Err(CliError::Validation("--volumes must be at least 1".into()));
    }
    output::write_dir(&a.out, a.force, |dir| {
        for i in 0..a.volumes {
            let spec = PhantomSpec {
                seed: derive_seed(a.seed, &format!("phantom/vol{i}")),
                ..base.clone()
            };
            let p = generate(&spec).map_err(|e| CliError::pipeline("phantom", e))?;
            write_phantom(&p, &dir.join(format!("vol{i:02}"))).map_err(|e| CliError::pipeline("phantom", e))?;
        }
        Ok(())
    })?;
    println!("wrote {} phantom volume(s) to {}", a.volumes, a.out.display());
    Ok(())
}

/// Augmentation seed used by the single-query commands.
pub fn augment_seed(master: u64) -> u64 {
    derive_seed(master, "augment")
}

fn build_set(cfg: &RunConfig, support: Support, n_q: usize) -> Result<(AugmentedSupportSet, bool), CliError> {
    match support {
        Support::Augmented(set) => Ok((set, false)),
        Support::Raw(pair) => {
            let mut policy = cfg.policy();
            policy.seed = augment_seed(cfg.seed());
            let set = build_support_set(std::slice::from_ref(&pair), cfg.single_nt()?, n_q, &policy)
                .map_err(|e| CliError::pipeline("augment", e))?;
            Ok((set, true))
        }
    }
}

pub fn cmd_augment(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let out = out_path(cfg)?;
    let Support::Raw(pair) = inputs::load_support(cfg)? else {
        return Err(CliError::Validation("--support is already an augmented support set".into()));
    };
    let n_q = match (cfg.nq, &cfg.query) {
        (Some(n), _) => n,
        (None, Some(_)) => inputs::load_query(cfg)?.len(),
        (None, None) => return Err(CliError::Validation("augment needs --query or --nq".into())),
    };
    let (set, _) = build_set(cfg, Support::Raw(pair), n_q)?;
    output::write_dir(out, force, |dir| {
        save_support_set(&set, dir).map_err(|e| CliError::pipeline("augment", e))
    })?;
    println!("wrote {} support entries to {}", set.len(), out.display());
    Ok(())
}

fn run_match(cfg: &RunConfig, query: &fss_core::image::SliceVolume, set: &AugmentedSupportSet) -> Result<MatchAssignment, CliError> {
    let metric = inputs::metric_config(cfg, cfg.single_metric()?)?;
    let cache = FeatureCache::new();
    match_volume_with(query, set, &metric, cfg.full.unwrap_or(false), &cache).map_err(|e| CliError::pipeline("match", e))
}

pub fn cmd_match(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let out = out_path(cfg)?;
    let query = inputs::load_query(cfg)?;
    let (set, _) = build_set(cfg, inputs::load_support(cfg)?, query.len())?;
    let assignment = run_match(cfg, &query, &set)?;
    let file = MatchesFile::new(&assignment, set.len());
    output::write_file(out, file.to_json().as_bytes(), force)?;
    println!("matched {} slices against {} supports ({})", query.len(), set.len(), assignment.metric);
    Ok(())
}

#[derive(Serialize)]
struct SegmentationSummary<'a> {
    backend: &'a str,
    slices: usize,
    timing_ms: &'a [f64],
}

pub const MASKS_DIR: &str = "masks";
pub const MATCHES_FILE: &str = "matches.json";
pub const SEGMENTATION_FILE: &str = "segmentation.json";
pub const SUPPORT_SET_DIR: &str = "support_set";

pub fn cmd_segment(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let out = out_path(cfg)?;
    let query = inputs::load_query(cfg)?;
    let support = inputs::load_support(cfg)?;
    let (set, built, assignment) = match &cfg.matches {
        Some(m) => {
            let Support::Augmented(set) = support else {
                return Err(CliError::Validation(
                    "--matches requires --support to be an augmented support set directory".into(),
                ));
            };
            let text = std::fs::read_to_string(m).map_err(|e| CliError::input("matches", e))?;
            let file = MatchesFile::from_json(&text).map_err(|e| CliError::input("matches", e))?;
            if file.pool_size != set.len() {
                return Err(CliError::Validation(format!(
                    "matches were computed against {} supports, the support set has {}",
                    file.pool_size,
                    set.len()
                )));
            }
            (set, false, file.into_assignment())
        }
        None => {
            let (set, built) = build_set(cfg, support, query.len())?;
            let assignment = run_match(cfg, &query, &set)?;
            (set, built, assignment)
        }
    };
    let backend = inputs::backend(cfg)?;
    let result = segment_volume(&query, &set, &assignment, backend.as_ref()).map_err(|e| CliError::pipeline("segment", e))?;
    output::write_dir(out, force, |dir| {
        let io = |e: volume_io::VolumeIoError| CliError::pipeline("segment output", e);
        volume_io::save_mask_volume(&result.masks, &dir.join(MASKS_DIR)).map_err(io)?;
        let matches = MatchesFile::new(&assignment, set.len()).to_json();
        std::fs::write(dir.join(MATCHES_FILE), matches).map_err(|e| CliError::pipeline("segment output", e))?;
        let summary = SegmentationSummary {
            backend: &result.backend_id,
            slices: result.masks.len(),
            timing_ms: &result.timings_ms,
        };
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        std::fs::write(dir.join(SEGMENTATION_FILE), text).map_err(|e| CliError::pipeline("segment output", e))?;
        if built {
            save_support_set(&set, &dir.join(SUPPORT_SET_DIR)).map_err(|e| CliError::pipeline("segment output", e))?;
        }
        Ok(())
    })?;
    println!("segmented {} slices with {} into {}", result.masks.len(), result.backend_id, out.display());
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path, method: &str, force: bool) -> Result<(), CliError> {
    output::write_file(out, report.to_json().as_bytes(), force)?;
    let table = report.table(method);
    output::write_file(&out.with_extension("txt"), table.as_bytes(), force)?;
    print!("{table}");
    Ok(())
}

fn method_label(cfg: &RunConfig, nt: usize, metric: MetricId) -> String {
    let backend = cfg.backend.map_or("none".to_string(), |b| format!("{b:?}").to_lowercase());
    format!("{metric} N_T={nt} {backend}")
}

pub fn cmd_eval(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let out = out_path(cfg)?;
    if cfg.dataset.is_some() {
        let nt = cfg.single_nt()?;
        let metric = cfg.single_metric()?;
        let report = evaluate_dataset(cfg, nt, metric, cfg.slice_detail.unwrap_or(false))?;
        return write_report(&report, out, &method_label(cfg, nt, metric), force);
    }
    let pred_path = RunConfig::require(&cfg.pred, "pred (or --dataset)")?;
    let gt_path = RunConfig::require(&cfg.gt, "gt")?;
    let pred = inputs::load_masks(pred_path, cfg.class, "predicted masks")?;
    let gt = inputs::load_masks(gt_path, cfg.class, "ground-truth masks")?;
    let d = dice_volume(&pred, &gt).map_err(|e| CliError::Validation(e.to_string()))?;
    let slice_dice = if cfg.slice_detail.unwrap_or(false) {
        Some(
            pred.iter()
                .zip(&gt)
                .map(|(p, g)| dice(p, g))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Validation(e.to_string()))?,
        )
    } else {
        None
    };
    let class_id = cfg.class.unwrap_or(1);
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let rows = vec![EvalRow {
        class: format!("label{class_id}"),
        class_id,
        fold: 0,
        support_volume: String::new(),
        support_slice: 0,
        query_volume: name(gt_path),
        dice: d,
        n_slices: gt.len(),
        timing_ms: 0.0,
        slice_dice,
        winner_distances: None,
    }];
    let report = EvalReport {
        config: cfg.snapshot(),
        metadata: ReportMetadata {
            backend: String::new(),
            metric: String::new(),
            caveats: fss_core::eval::protocol_caveats(),
        },
        aggregates: Aggregates::from_rows(&rows),
        rows,
    };
    write_report(&report, out, "prediction", force)
}

fn evaluate_dataset(cfg: &RunConfig, nt: usize, metric: MetricId, slice_detail: bool) -> Result<EvalReport, CliError> {
    let root = RunConfig::require(&cfg.dataset, "dataset")?;
    let data = load_dataset(root).map_err(|e| CliError::input("dataset", e))?;
    let ids: Vec<String> = data.iter().map(|v| v.id.clone()).collect();
    let plan = FoldPlan::new(&ids, cfg.folds.unwrap_or(DEFAULT_FOLDS), cfg.seed())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let classes: Vec<u32> = match &cfg.classes {
        Some(c) => c.clone(),
        None => data
            .iter()
            .flat_map(|v| v.labels.keys().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if classes.is_empty() {
        return Err(CliError::Validation("dataset has no labels".into()));
    }
    let rule = cfg.support_slice.map_or(SupportSliceRule::Middle, SupportSliceRule::Index);
    let mut episodes = Vec::new();
    for class in classes {
        episodes.extend(build_episodes(&data, class, &plan, rule).map_err(|e| CliError::Validation(e.to_string()))?);
    }
    let pipeline = PipelineConfig {
        n_t: nt,
        policy: cfg.policy(),
        metric: inputs::metric_config(cfg, metric)?,
        backend: inputs::backend(cfg)?,
        keep_rows: false,
    };
    let mut snapshot_cfg = cfg.clone();
    snapshot_cfg.nt = Some(crate::config::OneOrMany::One(nt));
    snapshot_cfg.metric = Some(crate::config::OneOrMany::One(metric));
    let options = EvalOptions {
        master_seed: cfg.seed(),
        slice_detail,
    };
    run_evaluation(&episodes, &pipeline, options, snapshot_cfg.snapshot()).map_err(|e| CliError::pipeline("evaluation", e))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    nt: usize,
    metric: MetricId,
    grand_mean: f64,
    per_class: BTreeMap<String, f64>,
    #[serde(with = "float_vec")]
    mean_winner_distance: Option<Vec<f64>>,
    report: String,
}

#[derive(Debug, Serialize)]
struct SweepFile {
    config: serde_json::Value,
    rows: Vec<SweepRow>,
    /// Per metric: whether every slice's winner distance is non-increasing in N_T.
    winner_distance_monotone: BTreeMap<String, bool>,
}

/// True when, for every episode row and slice, distances never increase along `reports`.
pub fn distances_monotone(reports: &[&EvalReport]) -> bool {
    reports.windows(2).all(|w| {
        w[0].rows.iter().zip(&w[1].rows).all(|(a, b)| {
            match (&a.winner_distances, &b.winner_distances) {
                (Some(x), Some(y)) => x.iter().zip(y).all(|(p, q)| q <= p),
                _ => false,
            }
        })
    })
}

pub fn cmd_sweep(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let out = out_path(cfg)?;
    RunConfig::require(&cfg.dataset, "dataset")?;
    let mut nts = cfg.nt_values();
    nts.sort_unstable();
    nts.dedup();
    let metrics = cfg.metric_values();
    let mut results: Vec<(usize, MetricId, EvalReport)> = Vec::new();
    for &metric in &metrics {
        for &nt in &nts {
            log::info!("sweep: N_T={nt} metric={metric}");
            results.push((nt, metric, evaluate_dataset(cfg, nt, metric, true)?));
        }
    }
    let mut monotone = BTreeMap::new();
    for &metric in &metrics {
        let chain: Vec<&EvalReport> = results.iter().filter(|r| r.1 == metric).map(|r| &r.2).collect();
        monotone.insert(metric.to_string(), distances_monotone(&chain));
    }
    let rows: Vec<SweepRow> = results
        .iter()
        .map(|(nt, metric, report)| SweepRow {
            nt: *nt,
            metric: *metric,
            grand_mean: report.aggregates.grand_mean,
            per_class: report
                .aggregates
                .per_class
                .iter()
                .map(|c| (c.class.clone(), c.mean_dice))
                .collect(),
            mean_winner_distance: Some(
                report
                    .rows
                    .iter()
                    .map(|r| {
                        let d = r.winner_distances.as_deref().unwrap_or(&[]);
                        d.iter().sum::<f64>() / d.len().max(1) as f64
                    })
                    .collect(),
            ),
            report: format!("nt{nt}-{metric}/report.json"),
        })
        .collect();
    let mut table = String::new();
    for (nt, metric, report) in &results {
        let t = report.table(&method_label(cfg, *nt, *metric));
        if table.is_empty() {
            table.push_str(t.lines().take(2).collect::<Vec<_>>().join("\n").as_str());
            table.push('\n');
        }
        table.push_str(t.lines().nth(2).unwrap_or_default());
        table.push('\n');
    }
    let mut snapshot_cfg = cfg.clone();
    snapshot_cfg.nt = Some(crate::config::OneOrMany::Many(nts.clone()));
    snapshot_cfg.metric = Some(crate::config::OneOrMany::Many(metrics.clone()));
    let sweep = SweepFile {
        config: snapshot_cfg.snapshot(),
        rows,
        winner_distance_monotone: monotone,
    };
    output::write_dir(out, force, |dir| {
        for (nt, metric, report) in &results {
            let sub = dir.join(format!("nt{nt}-{metric}"));
            std::fs::create_dir_all(&sub).map_err(|e| CliError::pipeline("sweep output", e))?;
            std::fs::write(sub.join("report.json"), report.to_json()).map_err(|e| CliError::pipeline("sweep output", e))?;
        }
        let text = serde_json::to_string_pretty(&sweep).expect("sweep serializes") + "\n";
        std::fs::write(dir.join("sweep.json"), text).map_err(|e| CliError::pipeline("sweep output", e))?;
        std::fs::write(dir.join("sweep.txt"), &table).map_err(|e| CliError::pipeline("sweep output", e))
    })?;
    print!("{table}");
    Ok(())
}
