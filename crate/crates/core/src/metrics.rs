//! Overlap metrics, width-stratified sensitivity, the per-image evaluation
//! protocol and fold-level aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{binarize, ensure_same_size, BinaryMask, ProbabilityMap, Size2D};
use crate::resample::{resize_bilinear, resize_nearest};
use crate::stratify::{stratify_mask, PerStratum, Stratum, StratumLabels, StratumThresholds};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Pixel confusion counts. With a FOV mask only FOV-foreground pixels
    /// are counted.
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask, fov: Option<&BinaryMask>) -> Result<Self> {
        ensure_same_size(gt.size(), pred.size())?;
        if let Some(fov) = fov {
            ensure_same_size(gt.size(), fov.size())?;
        }
        let mut c = Confusion::default();
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if fov.is_some_and(|f| f.data()[i] == 0) {
                continue;
            }
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `2|P ∩ G| / (|P| + |G|)`; 1.0 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = Confusion::from_masks(pred, gt, None)?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 { 1.0 } else { (2 * c.tp) as f64 / den as f64 })
}

/// Recall over ground-truth foreground; `None` when the ground truth is empty.
pub fn sensitivity(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<f64>> {
    let c = Confusion::from_masks(pred, gt, None)?;
    Ok(ratio(c.tp, c.tp + c.fn_))
}

/// True-negative rate over ground-truth background, optionally restricted
/// to a field-of-view mask; `None` when there is no background to score.
pub fn specificity(pred: &BinaryMask, gt: &BinaryMask, fov: Option<&BinaryMask>) -> Result<Option<f64>> {
    let c = Confusion::from_masks(pred, gt, fov)?;
    Ok(ratio(c.tn, c.tn + c.fp))
}

/// Hits and stratum sizes: `hits.k = |{i in W_k : pred_i = 1}|`.
fn stratified_counts(
    pred: &BinaryMask,
    gt: &BinaryMask,
    labels: &StratumLabels,
) -> Result<(PerStratum<u64>, PerStratum<u64>)> {
    ensure_same_size(gt.size(), pred.size())?;
    ensure_same_size(gt.size(), labels.size())?;
    let mut hits = PerStratum::<u64>::default();
    let mut totals = PerStratum::<u64>::default();
    for (index, ((&label, &g), &p)) in labels.labels().iter().zip(gt.data()).zip(pred.data()).enumerate() {
        if label == Stratum::Background {
            continue;
        }
        if g == 0 {
            return Err(Error::LabelMismatch { index });
        }
        if let (Some(t), Some(h)) = (totals.get_mut(label), hits.get_mut(label)) {
            *t += 1;
            *h += p as u64;
        }
    }
    Ok((hits, totals))
}

/// Recall inside each width stratum, `S_k = |W_k ∩ pred| / |W_k|`, with all
/// inputs at native resolution. Empty strata yield `None`.
pub fn stratified_sensitivity(
    pred_native: &BinaryMask,
    gt_native: &BinaryMask,
    labels: &StratumLabels,
) -> Result<PerStratum<Option<f64>>> {
    let (hits, totals) = stratified_counts(pred_native, gt_native, labels)?;
    Ok(hits.zip(totals).map(|(h, n)| ratio(h, n)))
}

/// A model output at processed resolution.
#[derive(Clone, Debug)]
pub enum Prediction {
    Probability(ProbabilityMap),
    Binary(BinaryMask),
}

impl Prediction {
    pub fn size(&self) -> Size2D {
        match self {
            Prediction::Probability(p) => p.size(),
            Prediction::Binary(m) => m.size(),
        }
    }
}

/// How a probability map reaches native resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsampleOrder {
    /// Binarize at processed size, then nearest-neighbour to native.
    #[default]
    ThresholdThenNearest,
    /// Bilinear-resize the probabilities to native, then binarize.
    BilinearThenThreshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    pub strata: StratumThresholds,
    pub upsample: UpsampleOrder,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { threshold: 0.5, strata: StratumThresholds::default(), upsample: UpsampleOrder::default() }
    }
}

/// Metrics for one image, all computed at native resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub image_id: String,
    pub dice: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub stratified: PerStratum<Option<f64>>,
    pub stratum_gt_counts: PerStratum<u64>,
}

/// Bring a prediction to native resolution as a binary mask.
pub fn prediction_to_native(pred: &Prediction, native: Size2D, opts: &EvalOptions) -> Result<BinaryMask> {
    match pred {
        Prediction::Binary(m) => Ok(resize_nearest(m, native)),
        Prediction::Probability(p) => match opts.upsample {
            UpsampleOrder::ThresholdThenNearest => Ok(resize_nearest(&binarize(p, opts.threshold)?, native)),
            UpsampleOrder::BilinearThenThreshold => binarize(&resize_bilinear(p, native), opts.threshold),
        },
    }
}

/// Score a native-resolution binary prediction against precomputed strata.
pub fn score_native(
    image_id: &str,
    pred_native: &BinaryMask,
    gt_native: &BinaryMask,
    labels: &StratumLabels,
    fov: Option<&BinaryMask>,
) -> Result<EvalResult> {
    let (hits, totals) = stratified_counts(pred_native, gt_native, labels)?;
    Ok(EvalResult {
        image_id: image_id.to_string(),
        dice: dice(pred_native, gt_native)?,
        sensitivity: sensitivity(pred_native, gt_native)?,
        specificity: specificity(pred_native, gt_native, fov)?,
        stratified: hits.zip(totals).map(|(h, n)| ratio(h, n)),
        stratum_gt_counts: totals,
    })
}

/// The evaluation protocol with strata already derived from `gt_native`.
pub fn evaluate_with_labels(
    image_id: &str,
    pred: &Prediction,
    gt_native: &BinaryMask,
    labels: &StratumLabels,
    fov: Option<&BinaryMask>,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    let run = || {
        let pred_native = prediction_to_native(pred, gt_native.size(), opts)?;
        score_native(image_id, &pred_native, gt_native, labels, fov)
    };
    run().map_err(|e| e.in_image(image_id))
}

/// Evaluate one image: binarize (if needed), resize the binary prediction
/// to native with nearest-neighbour, stratify the native ground truth and
/// compute every metric there.
pub fn evaluate_image(
    image_id: &str,
    pred: &Prediction,
    gt_native: &BinaryMask,
    native: Size2D,
    fov: Option<&BinaryMask>,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    let labels = (|| {
        ensure_same_size(native, gt_native.size())?;
        if let Some(f) = fov {
            ensure_same_size(native, f.size())?;
        }
        stratify_mask(gt_native, &opts.strata)
    })()
    .map_err(|e| e.in_image(image_id))?;
    evaluate_with_labels(image_id, pred, gt_native, &labels, fov, opts)
}

/// Mean and sample standard deviation across folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Folds that contributed a value.
    pub folds: usize,
}

impl MeanStd {
    fn from_fold_means(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std, folds: values.len() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dice: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub stratified: PerStratum<Option<MeanStd>>,
}

/// Average images within each fold, then folds. Absent values are left out
/// of their fold's mean; a fold with no value for a metric is left out of
/// that metric's across-fold statistics.
///
/// Every fold named in `fold_of` must have at least one result.
pub fn aggregate(results: &[EvalResult], fold_of: &BTreeMap<String, usize>) -> Result<MetricSummary> {
    let folds: BTreeSet<usize> = fold_of.values().copied().collect();
    if folds.is_empty() {
        return Err(Error::StatInput("nothing to aggregate".into()));
    }
    let mut sorted: Vec<&EvalResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(Error::StatInput(format!("duplicate result for image {}", w[0].image_id)));
    }

    let mut by_fold: BTreeMap<usize, Vec<&EvalResult>> = folds.iter().map(|&f| (f, Vec::new())).collect();
    for r in sorted {
        let fold = fold_of.get(&r.image_id).ok_or_else(|| Error::MissingFold(r.image_id.clone()))?;
        by_fold.get_mut(fold).expect("fold collected above").push(r);
    }
    if let Some((&f, _)) = by_fold.iter().find(|(_, rs)| rs.is_empty()) {
        return Err(Error::EmptyFold(f));
    }

    let summarize = |get: &dyn Fn(&EvalResult) -> Option<f64>| {
        let fold_means: Vec<f64> = by_fold
            .values()
            .filter_map(|rs| {
                let vals: Vec<f64> = rs.iter().filter_map(|r| get(r)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        MeanStd::from_fold_means(&fold_means)
    };

    Ok(MetricSummary {
        dice: summarize(&|r| Some(r.dice)),
        sensitivity: summarize(&|r| r.sensitivity),
        specificity: summarize(&|r| r.specificity),
        stratified: PerStratum::new(
            summarize(&|r| r.stratified.thin),
            summarize(&|r| r.stratified.medium),
            summarize(&|r| r.stratified.thick),
        ),
    })
}
