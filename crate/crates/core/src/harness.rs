//! Manifest-driven sweeps and report emission.
//!
//! Everything the CLI does lives here so it can be driven from tests:
//! evaluation sweeps that produce a [`ReportTable`], decimation audits,
//! statistics over result tables, plot-data series and the phantom suite
//! writer. Output is deterministic: rows follow manifest order then
//! condition order, CSV floats carry four decimals and JSON carries full
//! precision.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask::{load_manifest, load_mask, load_probability_map, save_mask, BinaryMask, DatasetManifest, Size2D};
use crate::metrics::{aggregate, evaluate_with_labels, EvalOptions, EvalResult, MeanStd, MetricSummary, Prediction, UpsampleOrder};
use crate::phantom::{standard_suite, SUITE_CANVAS, SUITE_VERSION};
use crate::resample::{condition_sizes, decimation_audit, preset, resize_nearest, ConditionSpec, PAPER_DATASETS};
use crate::stats::{spearman_with, wilcoxon_signed_rank, StatTestResult, TestMethod};
use crate::stratify::{stratify_mask, PerStratum, StratumLabels, StratumThresholds};

/// Dataset name used for the phantom-suite manifest.
pub const PHANTOM_DATASET: &str = "PHANTOM";

pub const REPORT_HEADER: &str = "dataset,condition,width,dice_mean,dice_std,sens_mean,sens_std,spec_mean,spec_std,\
thin_mean,thin_std,medium_mean,medium_std,thick_mean,thick_std,incomplete";

/// Named preset or an explicit list of conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionSource {
    Preset(String),
    Explicit(Vec<ConditionSpec>),
}

impl Default for ConditionSource {
    fn default() -> Self {
        ConditionSource::Preset(crate::resample::PAPER_TABLE2.to_string())
    }
}

impl ConditionSource {
    /// A preset name, or else a path to a JSON list of conditions.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if preset(arg, "").is_some() {
            return Ok(ConditionSource::Preset(arg.to_string()));
        }
        let path = Path::new(arg);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let list: Vec<ConditionSpec> =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        if list.is_empty() {
            return Err(Error::InvalidCondition { name: arg.into(), reason: "empty condition list".into() });
        }
        Ok(ConditionSource::Explicit(list))
    }

    pub fn resolve(&self, dataset: &str) -> Result<Vec<ConditionSpec>> {
        match self {
            ConditionSource::Preset(name) => preset(name, dataset)
                .ok_or_else(|| Error::InvalidCondition { name: name.clone(), reason: "unknown preset".into() }),
            ConditionSource::Explicit(list) => {
                let mut seen = HashSet::new();
                for c in list {
                    if !seen.insert(c.name.as_str()) {
                        return Err(Error::InvalidCondition { name: c.name.clone(), reason: "duplicate name".into() });
                    }
                }
                Ok(list.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmitFlags {
    pub csv: bool,
    pub json: bool,
    pub plotdata: bool,
}

/// Everything that determines a run. Fields that cannot change results
/// (output location, emit flags, worker count) are left out of the hash.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub manifests: Vec<PathBuf>,
    pub conditions: ConditionSource,
    pub threshold: f64,
    pub strata: StratumThresholds,
    pub upsample: UpsampleOrder,
    /// Restrict specificity to the manifest's FOV masks when present.
    pub use_fov: bool,
    pub pred_root: Option<PathBuf>,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub emit: EmitFlags,
    /// 0 means one worker per core.
    #[serde(skip)]
    pub workers: usize,
}

impl RunConfig {
    pub fn new(manifests: Vec<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            manifests,
            conditions: ConditionSource::default(),
            threshold: 0.5,
            strata: StratumThresholds::default(),
            upsample: UpsampleOrder::default(),
            use_fov: false,
            pred_root: None,
            out_dir: out_dir.into(),
            emit: EmitFlags { csv: true, json: false, plotdata: false },
            workers: 0,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { threshold: self.threshold, strata: self.strata, upsample: self.upsample }
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifests.is_empty() {
            return Err(Error::Manifest("no manifest given".into()));
        }
        for m in &self.manifests {
            if !m.exists() {
                return Err(Error::io(m, std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidThreshold(self.threshold));
        }
        StratumThresholds::new(self.strata.thin_below(), self.strata.thick_above())?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the result-affecting fields.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::io(&self.out_dir, std::io::Error::other(e)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStdCell {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl From<Option<MeanStd>> for MeanStdCell {
    fn from(v: Option<MeanStd>) -> Self {
        MeanStdCell { mean: v.map(|m| m.mean), std: v.map(|m| m.std) }
    }
}

/// One dataset-condition row of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub condition: String,
    pub width: usize,
    pub dice: MeanStdCell,
    pub sensitivity: MeanStdCell,
    pub specificity: MeanStdCell,
    pub thin: MeanStdCell,
    pub medium: MeanStdCell,
    pub thick: MeanStdCell,
    pub incomplete: bool,
}

impl SummaryRow {
    pub fn from_summary(dataset: &str, condition: &str, width: usize, s: &MetricSummary, incomplete: bool) -> Self {
        SummaryRow {
            dataset: dataset.to_string(),
            condition: condition.to_string(),
            width,
            dice: s.dice.into(),
            sensitivity: s.sensitivity.into(),
            specificity: s.specificity.into(),
            thin: s.stratified.thin.into(),
            medium: s.stratified.medium.into(),
            thick: s.stratified.thick.into(),
            incomplete,
        }
    }

    fn cells(&self) -> [MeanStdCell; 6] {
        [self.dice, self.sensitivity, self.specificity, self.thin, self.medium, self.thick]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: String,
    /// Seconds since the epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub generated_unix: u64,
}

impl Provenance {
    pub fn for_config(config: &RunConfig) -> Self {
        let generated_unix = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        Provenance {
            config_hash: config.config_hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_unix,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<SummaryRow>,
    pub provenance: Option<Provenance>,
}

fn fmt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl ReportTable {
    pub fn has_incomplete(&self) -> bool {
        self.rows.iter().any(|r| r.incomplete)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.dataset, r.condition, r.width);
            for c in r.cells() {
                let _ = write!(out, ",{},{}", fmt4(c.mean), fmt4(c.std));
            }
            let _ = writeln!(out, ",{}", r.incomplete);
        }
        out
    }

    /// Parse a report CSV. Only `dataset`, `condition` and `width` are
    /// required; missing metric columns or empty cells read as absent.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let required = |name: &str| col(name).ok_or_else(|| Error::StatInput(format!("report lacks column {name}")));
        let (ds, cond, width) = (required("dataset")?, required("condition")?, required("width")?);
        let metric_cols: Vec<(Option<usize>, Option<usize>)> = ["dice", "sens", "spec", "thin", "medium", "thick"]
            .iter()
            .map(|m| (col(&format!("{m}_mean")), col(&format!("{m}_std"))))
            .collect();
        let incomplete_col = col("incomplete");

        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: Option<usize>| -> Result<Option<f64>> {
                match i.and_then(|i| rec.get(i)).map(str::trim) {
                    None | Some("") => Ok(None),
                    Some(s) => s.parse::<f64>().map(Some).map_err(|_| {
                        Error::StatInput(format!("row {}: non-numeric cell {s:?}", line + 2))
                    }),
                }
            };
            let w = rec.get(width).unwrap_or("").trim().trim_end_matches("px");
            let w: usize = w.parse().map_err(|_| Error::StatInput(format!("row {}: bad width {w:?}", line + 2)))?;
            let mut cells = [MeanStdCell::default(); 6];
            for (cell, (m, s)) in cells.iter_mut().zip(&metric_cols) {
                *cell = MeanStdCell { mean: num(*m)?, std: num(*s)? };
            }
            let incomplete = incomplete_col.and_then(|i| rec.get(i)).is_some_and(|v| v.trim() == "true");
            let [dice, sensitivity, specificity, thin, medium, thick] = cells;
            rows.push(SummaryRow {
                dataset: rec.get(ds).unwrap_or("").to_string(),
                condition: rec.get(cond).unwrap_or("").to_string(),
                width: w,
                dice,
                sensitivity,
                specificity,
                thin,
                medium,
                thick,
                incomplete,
            });
        }
        Ok(ReportTable { rows, provenance: None })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageRecord {
    pub dataset: String,
    pub condition: String,
    pub fold: usize,
    pub result: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageFailure {
    pub dataset: String,
    pub condition: String,
    pub image_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluateOutcome {
    pub report: ReportTable,
    pub images: Vec<ImageRecord>,
    pub failures: Vec<ImageFailure>,
}

struct PreparedImage {
    gt: BinaryMask,
    labels: StratumLabels,
    fov: Option<BinaryMask>,
}

fn load_manifests(config: &RunConfig) -> Result<Vec<DatasetManifest>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(config.manifests.len());
    for path in &config.manifests {
        let m = load_manifest(path)?;
        if !seen.insert(m.dataset_name.clone()) {
            return Err(Error::Manifest(format!("dataset {} appears in more than one manifest", m.dataset_name)));
        }
        out.push(m);
    }
    Ok(out)
}

fn prepare_images(manifest: &DatasetManifest, config: &RunConfig) -> Result<Vec<PreparedImage>> {
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let prepared = (|| {
                let gt = load_mask(&entry.gt_mask_path)?;
                let fov = match (&entry.fov_mask_path, config.use_fov) {
                    (Some(p), true) => Some(load_mask(p)?),
                    _ => None,
                };
                let labels = stratify_mask(&gt, &config.strata)?;
                Ok(PreparedImage { gt, labels, fov })
            })();
            prepared.map_err(|e: Error| e.in_image(&entry.image_id))
        })
        .collect()
}

/// Evaluate every manifest under every condition and aggregate one row per
/// dataset-condition pair. Missing or mis-sized predictions are recorded
/// as failures and mark their row incomplete; anything wrong with the
/// manifest or ground truth is an error.
pub fn run_evaluate(config: &RunConfig) -> Result<EvaluateOutcome> {
    config.validate()?;
    let pool = config.thread_pool()?;
    pool.install(|| {
        let opts = config.eval_options();
        let mut rows = Vec::new();
        let mut images = Vec::new();
        let mut failures = Vec::new();
        for manifest in load_manifests(config)? {
            let dataset = manifest.dataset_name.as_str();
            let conditions = config.conditions.resolve(dataset)?;
            let sizes = condition_sizes(manifest.native_size, &conditions)?;
            let prepared = prepare_images(&manifest, config)?;

            for (condition, processed) in &sizes {
                let outcomes: Vec<std::result::Result<EvalResult, String>> = manifest
                    .entries
                    .par_iter()
                    .zip(prepared.par_iter())
                    .map(|(entry, prep)| {
                        let path = manifest
                            .prediction_path(entry, condition, config.pred_root.as_deref())
                            .ok_or_else(|| "no prediction path (set pred_root or pred)".to_string())?;
                        let map = load_probability_map(&path).map_err(|e| e.to_string())?;
                        if map.size() != *processed {
                            return Err(format!(
                                "{}: prediction is {}, condition {condition} expects {processed}",
                                path.display(),
                                map.size()
                            ));
                        }
                        evaluate_with_labels(
                            &entry.image_id,
                            &Prediction::Probability(map),
                            &prep.gt,
                            &prep.labels,
                            prep.fov.as_ref(),
                            &opts,
                        )
                        .map_err(|e| e.to_string())
                    })
                    .collect();

                let mut results = Vec::new();
                let mut fold_of = BTreeMap::new();
                for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
                    match outcome {
                        Ok(r) => {
                            fold_of.insert(entry.image_id.clone(), entry.fold_id);
                            images.push(ImageRecord {
                                dataset: dataset.to_string(),
                                condition: condition.clone(),
                                fold: entry.fold_id,
                                result: r.clone(),
                            });
                            results.push(r);
                        }
                        Err(reason) => failures.push(ImageFailure {
                            dataset: dataset.to_string(),
                            condition: condition.clone(),
                            image_id: entry.image_id.clone(),
                            reason,
                        }),
                    }
                }
                let incomplete = results.len() < manifest.entries.len();
                let summary = if results.is_empty() {
                    MetricSummary { dice: None, sensitivity: None, specificity: None, stratified: PerStratum::default() }
                } else {
                    aggregate(&results, &fold_of)?
                };
                rows.push(SummaryRow::from_summary(dataset, condition, processed.width, &summary, incomplete));
            }
        }
        Ok(EvaluateOutcome {
            report: ReportTable { rows, provenance: Some(Provenance::for_config(config)) },
            images,
            failures,
        })
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn per_image_csv(images: &[ImageRecord]) -> String {
    let mut out = String::from("dataset,condition,image_id,fold,dice,sens,spec,thin,medium,thick,thin_px,medium_px,thick_px\n");
    for rec in images {
        let r = &rec.result;
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{},{},{},{},{},{},{},{}",
            rec.dataset,
            rec.condition,
            r.image_id,
            rec.fold,
            r.dice,
            fmt4(r.sensitivity),
            fmt4(r.specificity),
            fmt4(r.stratified.thin),
            fmt4(r.stratified.medium),
            fmt4(r.stratified.thick),
            r.stratum_gt_counts.thin,
            r.stratum_gt_counts.medium,
            r.stratum_gt_counts.thick,
        );
    }
    out
}

/// Write the outputs selected by `config.emit`; returns the written paths.
pub fn write_evaluation(outcome: &EvaluateOutcome, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if config.emit.csv {
        let path = dir.join("report.csv");
        write_file(&path, outcome.report.to_csv_string())?;
        written.push(path);
        let path = dir.join("images.csv");
        write_file(&path, per_image_csv(&outcome.images))?;
        written.push(path);
    }
    if config.emit.json {
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(outcome).expect("outcome serializes");
        write_file(&path, json + "\n")?;
        written.push(path);
    }
    if config.emit.plotdata {
        written.extend(emit_plotdata(&outcome.report, dir)?);
    }
    Ok(written)
}

/// Best and worst thin-vessel sensitivity of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestWorst {
    pub dataset: String,
    pub best_thin: f64,
    pub worst_thin: f64,
    pub gap: f64,
}

/// (dataset, condition, dice, thin) for every row with both values.
pub fn dice_vs_thin_points(report: &ReportTable) -> Vec<(String, String, f64, f64)> {
    report
        .rows
        .iter()
        .filter_map(|r| Some((r.dataset.clone(), r.condition.clone(), r.dice.mean?, r.thin.mean?)))
        .collect()
}

/// (dataset, processed width, thin) sorted by width within each dataset.
pub fn thin_vs_width_series(report: &ReportTable) -> Vec<(String, usize, f64)> {
    let mut out = Vec::new();
    for ds in dataset_order(report) {
        let mut pts: Vec<(String, usize, f64)> = report
            .rows
            .iter()
            .filter(|r| r.dataset == ds)
            .filter_map(|r| Some((ds.clone(), r.width, r.thin.mean?)))
            .collect();
        pts.sort_by_key(|p| p.1);
        out.extend(pts);
    }
    out
}

pub fn best_worst_thin(report: &ReportTable) -> Vec<BestWorst> {
    dataset_order(report)
        .into_iter()
        .filter_map(|ds| {
            let vals: Vec<f64> = report.rows.iter().filter(|r| r.dataset == ds).filter_map(|r| r.thin.mean).collect();
            let best = vals.iter().copied().reduce(f64::max)?;
            let worst = vals.iter().copied().reduce(f64::min)?;
            Some(BestWorst { dataset: ds, best_thin: best, worst_thin: worst, gap: best - worst })
        })
        .collect()
}

fn dataset_order(report: &ReportTable) -> Vec<String> {
    let mut seen = HashSet::new();
    report.rows.iter().filter(|r| seen.insert(r.dataset.as_str())).map(|r| r.dataset.clone()).collect()
}

/// Write the three figure series as CSV files into `dir`.
pub fn emit_plotdata(report: &ReportTable, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::StatInput("empty report; no plot data".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut fig1 = String::from("dataset,condition,dice,thin_sens\n");
    for (ds, cond, dice, thin) in dice_vs_thin_points(report) {
        let _ = writeln!(fig1, "{ds},{cond},{dice:.4},{thin:.4}");
    }
    let mut fig2 = String::from("dataset,width,thin_sens\n");
    for (ds, width, thin) in thin_vs_width_series(report) {
        let _ = writeln!(fig2, "{ds},{width},{thin:.4}");
    }
    let mut fig4 = String::from("dataset,best_thin,worst_thin,gap\n");
    for b in best_worst_thin(report) {
        let _ = writeln!(fig4, "{},{:.4},{:.4},{:.4}", b.dataset, b.best_thin, b.worst_thin, b.gap);
    }
    let mut written = Vec::new();
    for (name, body) in [("fig1_dice_vs_thin.csv", fig1), ("fig2_thin_vs_width.csv", fig2), ("fig4_best_worst.csv", fig4)] {
        let path = dir.join(name);
        write_file(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Mean decimation retention for one dataset-condition pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecimationSummaryRow {
    pub dataset: String,
    pub condition: String,
    pub processed_size: Size2D,
    /// Unweighted mean over images with a non-empty stratum.
    pub retention: PerStratum<Option<f64>>,
    pub pixels_lost: PerStratum<u64>,
    pub images: usize,
}

pub const DECIMATION_HEADER: &str =
    "dataset,condition,width,height,thin_retention,medium_retention,thick_retention,thin_lost,medium_lost,thick_lost,images";

pub fn decimation_csv(rows: &[DecimationSummaryRow]) -> String {
    let mut out = String::from(DECIMATION_HEADER);
    out.push('\n');
    for r in rows {
        let [t, m, k] = r.retention.to_array();
        let [lt, lm, lk] = r.pixels_lost.to_array();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{lt},{lm},{lk},{}",
            r.dataset,
            r.condition,
            r.processed_size.width,
            r.processed_size.height,
            fmt4(t),
            fmt4(m),
            fmt4(k),
            r.images
        );
    }
    out
}

/// Round-trip every ground-truth mask through every condition and average
/// per-stratum retention across images. Predictions are not needed.
pub fn run_decimation_audit(config: &RunConfig) -> Result<Vec<DecimationSummaryRow>> {
    config.validate()?;
    let pool = config.thread_pool()?;
    pool.install(|| {
        let mut rows = Vec::new();
        for manifest in load_manifests(config)? {
            let conditions = config.conditions.resolve(&manifest.dataset_name)?;
            let reports: Vec<_> = manifest
                .entries
                .par_iter()
                .map(|entry| {
                    (|| {
                        let gt = load_mask(&entry.gt_mask_path)?;
                        let labels = stratify_mask(&gt, &config.strata)?;
                        decimation_audit(&gt, &labels, &conditions)
                    })()
                    .map_err(|e| e.in_image(&entry.image_id))
                })
                .collect::<Result<_>>()?;
            for (ci, cond) in conditions.iter().enumerate() {
                let mut sums = PerStratum::new((0.0, 0usize), (0.0, 0usize), (0.0, 0usize));
                let mut lost = PerStratum::<u64>::default();
                for report in &reports {
                    let row = &report.rows[ci];
                    let acc = |(s, n): (f64, usize), v: Option<f64>| match v {
                        Some(v) => (s + v, n + 1),
                        None => (s, n),
                    };
                    sums = sums.zip(row.retention).map(|(a, v)| acc(a, v));
                    lost = lost.zip(row.pixels_lost).map(|(a, b)| a + b);
                }
                rows.push(DecimationSummaryRow {
                    dataset: manifest.dataset_name.clone(),
                    condition: cond.name.clone(),
                    processed_size: reports[0].rows[ci].processed_size,
                    retention: sums.map(|(s, n)| (n > 0).then(|| s / n as f64)),
                    pixels_lost: lost,
                    images: reports.len(),
                });
            }
        }
        Ok(rows)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsTest {
    Wilcoxon,
    Spearman,
}

/// Read two numeric columns from a CSV, optionally keeping only rows
/// whose `filter.0` column equals `filter.1`.
pub fn read_columns(
    csv_path: &Path,
    column_a: &str,
    column_b: &str,
    filter: Option<(&str, &str)>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::StatInput(format!("column {name} not found")))
    };
    let (ia, ib) = (find(column_a)?, find(column_b)?);
    let filter = filter.map(|(c, v)| find(c).map(|i| (i, v))).transpose()?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if let Some((i, v)) = filter {
            if rec.get(i).map(str::trim) != Some(v) {
                continue;
            }
        }
        let parse = |i: usize, name: &str| -> Result<Option<f64>> {
            match rec.get(i).map(str::trim) {
                None | Some("") => Ok(None),
                Some(s) => s.parse::<f64>().map(Some).map_err(|_| {
                    Error::StatInput(format!("row {}: non-numeric {name} cell {s:?}", line + 2))
                }),
            }
        };
        match (parse(ia, column_a)?, parse(ib, column_b)?) {
            (Some(x), Some(y)) => {
                a.push(x);
                b.push(y);
            }
            (None, None) => {}
            _ => {
                return Err(Error::StatInput(format!(
                    "row {}: length mismatch between {column_a} and {column_b}",
                    line + 2
                )))
            }
        }
    }
    Ok((a, b))
}

pub fn run_stats(
    csv_path: &Path,
    column_a: &str,
    column_b: &str,
    test: StatsTest,
    method: TestMethod,
    filter: Option<(&str, &str)>,
) -> Result<StatTestResult> {
    let (a, b) = read_columns(csv_path, column_a, column_b, filter)?;
    match test {
        StatsTest::Wilcoxon => wilcoxon_signed_rank(&a, &b),
        StatsTest::Spearman => spearman_with(&a, &b, method),
    }
}

/// One line of the `sizes` table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizesRow {
    pub dataset: String,
    pub condition: String,
    pub processed: Size2D,
    /// Native width over processed width.
    pub ratio: f64,
}

/// Processed sizes of `datasets` under a condition source. With no
/// datasets given, the five fundus datasets are listed.
pub fn sizes_table(conditions: &ConditionSource, datasets: &[(String, Size2D)]) -> Result<Vec<SizesRow>> {
    let defaults: Vec<(String, Size2D)> = PAPER_DATASETS.iter().map(|(n, s)| (n.to_string(), *s)).collect();
    let datasets = if datasets.is_empty() { &defaults[..] } else { datasets };
    let mut out = Vec::new();
    for (name, native) in datasets {
        for (condition, processed) in condition_sizes(*native, &conditions.resolve(name)?)? {
            out.push(SizesRow {
                dataset: name.clone(),
                condition,
                processed,
                ratio: native.width as f64 / processed.width as f64,
            });
        }
    }
    Ok(out)
}

pub fn sizes_csv(rows: &[SizesRow]) -> String {
    let mut out = String::from("dataset,condition,width,height,ratio\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:.2}", r.dataset, r.condition, r.processed.width, r.processed.height, r.ratio);
    }
    out
}

#[derive(Serialize)]
struct Expectation<'a> {
    name: &'a str,
    file: String,
    labels_file: String,
    spec: crate::phantom::PhantomSpec,
    stratum_counts: PerStratum<u64>,
    peak_squared_distance: u64,
    predicted_peak: f64,
}

#[derive(Serialize)]
struct Expectations<'a> {
    suite_version: u32,
    canvas: Size2D,
    members: Vec<Expectation<'a>>,
}

/// Write the phantom suite: masks, stratum label images, an expectations
/// file and a dataset manifest (`PHANTOM`, folds assigned round-robin over
/// five folds). With `predictions`, each mask is also nearest-neighbour
/// decimated to every condition's processed size under
/// `predictions/<condition>/<name>.png`, ready for `run_evaluate`.
pub fn write_phantom_suite(out_dir: &Path, predictions: Option<&ConditionSource>) -> Result<PathBuf> {
    let suite = standard_suite();
    for sub in ["masks", "labels"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut members = Vec::new();
    let mut entries = Vec::new();
    for (i, m) in suite.iter().enumerate() {
        let file = format!("masks/{}.png", m.name);
        let labels_file = format!("labels/{}.png", m.name);
        save_mask(&m.mask, out_dir.join(&file))?;
        m.labels.write_png(out_dir.join(&labels_file))?;
        let dmap = crate::edt::euclidean_distance_transform(&m.mask)?;
        members.push(Expectation {
            name: &m.name,
            file: file.clone(),
            labels_file,
            spec: m.spec,
            stratum_counts: m.labels.counts(),
            peak_squared_distance: dmap.max_squared(),
            predicted_peak: m.spec.predicted_peak(),
        });
        entries.push(serde_json::json!({ "id": m.name, "gt": file, "fold": i % 5 }));
    }
    let expectations = Expectations { suite_version: SUITE_VERSION, canvas: SUITE_CANVAS, members };
    write_file(
        &out_dir.join("expectations.json"),
        serde_json::to_string_pretty(&expectations).expect("expectations serialize") + "\n",
    )?;

    if let Some(source) = predictions {
        let conditions = source.resolve(PHANTOM_DATASET)?;
        for (condition, size) in condition_sizes(SUITE_CANVAS, &conditions)? {
            let d = out_dir.join("predictions").join(&condition);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            for m in &suite {
                save_mask(&resize_nearest(&m.mask, size), d.join(format!("{}.png", m.name)))?;
            }
        }
    }

    let manifest = serde_json::json!({
        "dataset": PHANTOM_DATASET,
        "native_size": SUITE_CANVAS,
        "pred_root": "predictions",
        "entries": entries,
    });
    let path = out_dir.join("manifest.json");
    write_file(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    Ok(path)
}
