//! End-to-end runs: split, normalize, train, evaluate and write artifacts.
//!
//! A training run directory holds `split.json`, `stats.jsonl`,
//! `checkpoint.jsonl`, `history.csv` and `metrics.txt` (test subset).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checkpoint;
use crate::config::{RunConfig, Variant};
use crate::data::{class_weights, split, DatasetSplit, NormStats, PatientJourney};
use crate::error::{Error, Result};
use crate::export::export_attention;
use crate::metrics::{summarize, MetricsReport};
use crate::model::Model;
use crate::train::{evaluate, train, History};

pub const SPLIT_FILE: &str = "split.json";
pub const STATS_FILE: &str = "stats.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Train, validation and test journeys after normalization.
pub struct PreparedData {
    pub split: DatasetSplit,
    pub stats: NormStats,
    pub train: Vec<PatientJourney>,
    pub valid: Vec<PatientJourney>,
    pub test: Vec<PatientJourney>,
}

/// Splits under `seed` and standardizes with training-set statistics.
pub fn prepare(journeys: &[PatientJourney], seed: u64) -> Result<PreparedData> {
    let split = split(journeys, seed)?;
    let train = DatasetSplit::select(journeys, &split.train)?;
    let stats = NormStats::fit(&train)?;
    let train = stats.apply(&train)?;
    let valid = stats.apply(&DatasetSplit::select(journeys, &split.valid)?)?;
    let test = stats.apply(&DatasetSplit::select(journeys, &split.test)?)?;
    Ok(PreparedData { split, stats, train, valid, test })
}

pub struct RunOutcome {
    pub model: Model,
    pub history: History,
    pub report: MetricsReport,
}

/// One complete training run. Writes artifacts into `out` when given.
pub fn train_run(journeys: &[PatientJourney], cfg: &RunConfig, seed: u64, out: Option<&Path>) -> Result<RunOutcome> {
    let data = prepare(journeys, seed)?;
    let weights = class_weights(&data.train)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    let model = Model::new(model_cfg)?;
    let (model, history) = train(model, &data.train, &data.valid, &weights, &cfg.train, seed)?;
    let report = evaluate(&model, &data.test, seed)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let split_json = serde_json::to_string_pretty(&data.split).map_err(|e| Error::Data(e.to_string()))?;
        write_text(&dir.join(SPLIT_FILE), &(split_json + "\n"))?;
        data.stats.save(&dir.join(STATS_FILE))?;
        checkpoint::save(&model, &dir.join(CHECKPOINT_FILE))?;
        write_text(&dir.join(HISTORY_FILE), &history.to_csv())?;
        write_text(&dir.join(METRICS_FILE), &report.to_text())?;
    }
    Ok(RunOutcome { model, history, report })
}

/// `cfg.train.repeats` runs with seeds `seed, seed + 1, …`. Several repeats
/// go to `repeat_{k}` subdirectories plus a summary.
pub fn train_repeats(journeys: &[PatientJourney], cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<MetricsReport>> {
    let repeats = cfg.train.repeats;
    if repeats == 1 {
        return Ok(vec![train_run(journeys, cfg, seed, Some(out))?.report]);
    }
    let mut reports = Vec::with_capacity(repeats);
    for k in 0..repeats {
        let dir = out.join(format!("repeat_{k}"));
        reports.push(train_run(journeys, cfg, seed + k as u64, Some(&dir))?.report);
    }
    write_text(&out.join(SUMMARY_FILE), &summarize(&reports))?;
    Ok(reports)
}

/// Loads the split, statistics and checkpoint of a run directory.
pub fn load_run(run: &Path) -> Result<(Model, DatasetSplit, NormStats)> {
    let split_path = run.join(SPLIT_FILE);
    let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let split: DatasetSplit =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: split_path, line: e.line(), message: e.to_string() })?;
    let stats = NormStats::load(&run.join(STATS_FILE))?;
    let model = checkpoint::load(&run.join(CHECKPOINT_FILE))?;
    Ok((model, split, stats))
}

/// Evaluates a trained run on one subset of `journeys`.
pub fn eval_run(run: &Path, journeys: &[PatientJourney], subset: &str) -> Result<MetricsReport> {
    let (model, split, stats) = load_run(run)?;
    let selected = DatasetSplit::select(journeys, split.subset(subset)?)?;
    evaluate(&model, &stats.apply(&selected)?, split.seed)
}

/// Exports the attention maps of one journey under a trained run.
pub fn export_run(run: &Path, journeys: &[PatientJourney], id: &str, out: &Path) -> Result<Vec<std::path::PathBuf>> {
    let (model, _, stats) = load_run(run)?;
    let journey = journeys
        .iter()
        .find(|j| j.id == id)
        .ok_or_else(|| Error::Data(format!("journey {id} not found")))?;
    let normalized = stats.apply(std::slice::from_ref(journey))?;
    export_attention(&model, &normalized[0], out)
}

/// Mean test metrics of one variant over several seeds.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub reports: Vec<MetricsReport>,
}

impl AblationRow {
    pub fn mean_auroc(&self) -> f64 {
        self.reports.iter().map(|r| r.auroc).sum::<f64>() / self.reports.len() as f64
    }

    pub fn mean_auprc(&self) -> f64 {
        self.reports.iter().map(|r| r.auprc).sum::<f64>() / self.reports.len() as f64
    }
}

/// Trains every variant in `variants` under seeds `seed..seed + runs`. The
/// split and initial seed are shared across variants for each run.
pub fn ablate(
    journeys: &[PatientJourney],
    cfg: &RunConfig,
    variants: &[Variant],
    seed: u64,
    runs: usize,
    out: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if runs == 0 {
        return Err(Error::Config("ablation needs at least one run".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let mut vcfg = cfg.clone();
        vcfg.model = variant.apply(&cfg.model);
        let mut reports = Vec::with_capacity(runs);
        for k in 0..runs {
            let s = seed + k as u64;
            let dir = out.map(|o| o.join(variant.name()).join(format!("seed_{s}")));
            let outcome = train_run(journeys, &vcfg, s, dir.as_deref())?;
            log::info!("{} seed {s}: auroc={:.4} auprc={:.4}", variant.name(), outcome.report.auroc, outcome.report.auprc);
            reports.push(outcome.report);
        }
        rows.push(AblationRow { variant, reports });
    }
    if let Some(o) = out {
        write_text(&o.join("ablation.txt"), &ablation_table(&rows))?;
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,runs,auroc_mean,auprc_mean\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.variant.name(), r.reports.len(), r.mean_auroc(), r.mean_auprc());
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
