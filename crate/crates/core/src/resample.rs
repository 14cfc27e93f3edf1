//! Resize protocol: processed-size derivation, bilinear resampling for
//! intensity/probability rasters, nearest-neighbour resampling for masks,
//! and the decimation round-trip audit.
//!
//! Both kernels use the half-pixel-center convention: destination pixel
//! `d` is centered at source coordinate `(d + 0.5) * src / dst - 0.5`.
//! Coordinates outside the source are clamped (edge replicate).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{ensure_same_size, BinaryMask, ProbabilityMap, Size2D};
use crate::stratify::{PerStratum, Stratum, StratumLabels};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConditionRule {
    /// Multiply both native dimensions and floor.
    ScaleFactor(f64),
    ExplicitSize(Size2D),
}

/// A named processing condition such as `R3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCondition", into = "RawCondition")]
pub struct ConditionSpec {
    pub name: String,
    pub rule: ConditionRule,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCondition {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<usize>,
}

impl TryFrom<RawCondition> for ConditionSpec {
    type Error = Error;

    fn try_from(raw: RawCondition) -> Result<Self> {
        match (raw.scale, raw.width, raw.height) {
            (Some(s), None, None) => ConditionSpec::scale(raw.name, s),
            (None, Some(w), Some(h)) => ConditionSpec::explicit(raw.name, w, h),
            _ => Err(Error::InvalidCondition {
                name: raw.name,
                reason: "give either `scale` or both `width` and `height`".into(),
            }),
        }
    }
}

impl From<ConditionSpec> for RawCondition {
    fn from(c: ConditionSpec) -> Self {
        match c.rule {
            ConditionRule::ScaleFactor(s) => RawCondition { name: c.name, scale: Some(s), width: None, height: None },
            ConditionRule::ExplicitSize(sz) => {
                RawCondition { name: c.name, scale: None, width: Some(sz.width), height: Some(sz.height) }
            }
        }
    }
}

impl ConditionSpec {
    pub fn scale(name: impl Into<String>, factor: f64) -> Result<Self> {
        let name = name.into();
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidCondition { name, reason: format!("scale {factor} outside (0, 1]") });
        }
        Ok(ConditionSpec { name, rule: ConditionRule::ScaleFactor(factor) })
    }

    pub fn explicit(name: impl Into<String>, width: usize, height: usize) -> Result<Self> {
        let name = name.into();
        let size = Size2D::new(width, height)
            .map_err(|e| Error::InvalidCondition { name: name.clone(), reason: e.to_string() })?;
        Ok(ConditionSpec { name, rule: ConditionRule::ExplicitSize(size) })
    }

    pub fn processed_size(&self, native: Size2D) -> Result<Size2D> {
        match self.rule {
            ConditionRule::ExplicitSize(size) => Ok(size),
            ConditionRule::ScaleFactor(s) => {
                let width = (native.width as f64 * s).floor() as usize;
                let height = (native.height as f64 * s).floor() as usize;
                Size2D::new(width, height).map_err(|_| Error::InvalidCondition {
                    name: self.name.clone(),
                    reason: format!("scale {s} reduces {native} below one pixel"),
                })
            }
        }
    }
}

/// Processed size of every condition for a dataset at `native`.
pub fn condition_sizes(native: Size2D, conditions: &[ConditionSpec]) -> Result<Vec<(String, Size2D)>> {
    conditions.iter().map(|c| Ok((c.name.clone(), c.processed_size(native)?))).collect()
}

/// Name of the built-in condition preset.
pub const PAPER_TABLE2: &str = "paper-table2";

/// The five fundus datasets and their native sizes.
pub const PAPER_DATASETS: [(&str, Size2D); 5] = [
    ("DRIVE", Size2D { width: 565, height: 584 }),
    ("STARE", Size2D { width: 700, height: 605 }),
    ("CHASE_DB1", Size2D { width: 1280, height: 960 }),
    ("HRF", Size2D { width: 3504, height: 2336 }),
    ("FIVES", Size2D { width: 2048, height: 2048 }),
];

/// Conditions of the `paper-table2` preset for one dataset.
///
/// Every dataset gets R1..R3 at scales 1, 0.75 and 0.5. FIVES continues
/// with explicit 512x512 and 256x256; all others use scale 0.25 for R4 and
/// an explicit 512x512 R5. Unknown dataset names get the latter layout.
pub fn paper_table2(dataset: &str) -> Vec<ConditionSpec> {
    let mut out: Vec<ConditionSpec> = [("R1", 1.0), ("R2", 0.75), ("R3", 0.5)]
        .into_iter()
        .map(|(n, s)| ConditionSpec { name: n.into(), rule: ConditionRule::ScaleFactor(s) })
        .collect();
    let explicit = |n: &str, w, h| ConditionSpec { name: n.into(), rule: ConditionRule::ExplicitSize(Size2D { width: w, height: h }) };
    if dataset.eq_ignore_ascii_case("FIVES") {
        out.push(explicit("R4", 512, 512));
        out.push(explicit("R5", 256, 256));
    } else {
        out.push(ConditionSpec { name: "R4".into(), rule: ConditionRule::ScaleFactor(0.25) });
        out.push(explicit("R5", 512, 512));
    }
    out
}

/// Look up a named preset.
pub fn preset(name: &str, dataset: &str) -> Option<Vec<ConditionSpec>> {
    (name == PAPER_TABLE2).then(|| paper_table2(dataset))
}

struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let c = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = c.floor() as usize;
            Tap { lo, hi: (lo + 1).min(src - 1), t: c - lo as f64 }
        })
        .collect()
}

/// Interpolate, never leaving `[min(a, b), max(a, b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        return a;
    }
    (a + (b - a) * t).clamp(a.min(b), a.max(b))
}

/// Bilinear resize under the half-pixel-center convention.
pub fn resize_bilinear(img: &ProbabilityMap, target: Size2D) -> ProbabilityMap {
    let src = img.size();
    if src == target {
        return img.clone();
    }
    let xs = bilinear_taps(src.width, target.width);
    let ys = bilinear_taps(src.height, target.height);
    let mut out = Vec::with_capacity(target.area());
    for ty in &ys {
        for tx in &xs {
            let top = lerp(img.get(tx.lo, ty.lo), img.get(tx.hi, ty.lo), tx.t);
            let bottom = lerp(img.get(tx.lo, ty.hi), img.get(tx.hi, ty.hi), tx.t);
            out.push(lerp(top, bottom, ty.t));
        }
    }
    ProbabilityMap::from_raw(target, out)
}

/// Source index for destination `d`: the source center nearest to the
/// mapped destination center, exact ties going to the lower index.
pub(crate) fn nearest_index(d: usize, src: usize, dst: usize) -> usize {
    let num = (2 * d as u64 + 1) * src as u64 - 1;
    (num / (2 * dst as u64)) as usize
}

/// Nearest-neighbour resize for masks; never invents values.
pub fn resize_nearest(mask: &BinaryMask, target: Size2D) -> BinaryMask {
    let src = mask.size();
    if src == target {
        return mask.clone();
    }
    let xs: Vec<usize> = (0..target.width).map(|d| nearest_index(d, src.width, target.width)).collect();
    let ys: Vec<usize> = (0..target.height).map(|d| nearest_index(d, src.height, target.height)).collect();
    BinaryMask::from_fn(target, |x, y| mask.get(xs[x], ys[y]))
}

/// Round-trip outcome for one condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecimationRow {
    pub condition: String,
    pub processed_size: Size2D,
    /// Fraction of each stratum still foreground after the round trip;
    /// `None` when the stratum is empty.
    pub retention: PerStratum<Option<f64>>,
    pub pixels_lost: PerStratum<u64>,
    pub stratum_pixels: PerStratum<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecimationReport {
    pub native_size: Size2D,
    pub rows: Vec<DecimationRow>,
}

/// Nearest-neighbour down to each processed size and back to native, then
/// measure how much of every width stratum survives.
pub fn decimation_audit(
    gt: &BinaryMask,
    labels: &StratumLabels,
    conditions: &[ConditionSpec],
) -> Result<DecimationReport> {
    let native = gt.size();
    ensure_same_size(native, labels.size())?;
    for (index, (&label, &v)) in labels.labels().iter().zip(gt.data()).enumerate() {
        if label != Stratum::Background && v == 0 {
            return Err(Error::LabelMismatch { index });
        }
    }
    let totals = labels.counts();
    let rows = condition_sizes(native, conditions)?
        .into_iter()
        .map(|(condition, processed_size)| {
            let round_trip = resize_nearest(&resize_nearest(gt, processed_size), native);
            let mut kept = PerStratum::<u64>::default();
            for (&label, &v) in labels.labels().iter().zip(round_trip.data()) {
                if let Some(k) = kept.get_mut(label) {
                    *k += v as u64;
                }
            }
            DecimationRow {
                condition,
                processed_size,
                retention: kept.zip(totals).map(|(k, n)| (n > 0).then(|| k as f64 / n as f64)),
                pixels_lost: kept.zip(totals).map(|(k, n)| n - k),
                stratum_pixels: totals,
            }
        })
        .collect();
    Ok(DecimationReport { native_size: native, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stratify::{stratify_mask, StratumThresholds};
    use proptest::prelude::*;

    fn size(w: usize, h: usize) -> Size2D {
        Size2D::new(w, h).unwrap()
    }

    fn sizes_for(dataset: &str) -> Vec<Size2D> {
        let native = PAPER_DATASETS.iter().find(|(n, _)| *n == dataset).unwrap().1;
        condition_sizes(native, &paper_table2(dataset)).unwrap().into_iter().map(|(_, s)| s).collect()
    }

    #[test]
    fn table2_spot_checks() {
        assert_eq!(sizes_for("DRIVE")[2], size(282, 292));
        assert_eq!(sizes_for("STARE")[1], size(525, 453));
        assert_eq!(sizes_for("HRF")[3], size(876, 584));
        assert_eq!(sizes_for("FIVES")[4], size(256, 256));
    }

    #[test]
    fn tiny_scale_is_rejected() {
        let c = ConditionSpec::scale("tiny", 0.1).unwrap();
        assert!(condition_sizes(size(5, 50), &[c]).is_err());
        assert!(ConditionSpec::scale("zero", 0.0).is_err());
        assert!(ConditionSpec::scale("up", 1.5).is_err());
        assert!(ConditionSpec::explicit("e", 0, 4).is_err());
    }

    #[test]
    fn condition_json_forms() {
        let parsed: Vec<ConditionSpec> =
            serde_json::from_str(r#"[{"name": "A", "scale": 0.5}, {"name": "B", "width": 64, "height": 32}]"#).unwrap();
        assert_eq!(parsed[0].rule, ConditionRule::ScaleFactor(0.5));
        assert_eq!(parsed[1].rule, ConditionRule::ExplicitSize(size(64, 32)));
        assert!(serde_json::from_str::<ConditionSpec>(r#"{"name": "C", "scale": 0.5, "width": 3}"#).is_err());
        assert!(serde_json::from_str::<ConditionSpec>(r#"{"name": "C", "scale": 2.0}"#).is_err());
    }

    #[test]
    fn bilinear_hand_evaluated_upscale() {
        let p = ProbabilityMap::new(size(2, 1), vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&p, size(4, 1));
        assert_eq!(out.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_constant_and_identity() {
        let p = ProbabilityMap::constant(size(7, 5), 0.3).unwrap();
        for target in [size(3, 2), size(13, 9), size(1, 1)] {
            assert!(resize_bilinear(&p, target).data().iter().all(|&v| v == 0.3));
        }
        let q = ProbabilityMap::new(size(3, 1), vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(resize_bilinear(&q, q.size()), q);
    }

    #[test]
    fn nearest_hand_evaluated_downscale() {
        let m = BinaryMask::new(size(4, 1), vec![1, 0, 0, 1]).unwrap();
        assert_eq!(resize_nearest(&m, size(2, 1)).data(), &[1, 0]);
        let ones = BinaryMask::ones(size(5, 3));
        assert_eq!(resize_nearest(&ones, size(11, 2)).count_ones(), 22);
        let up = resize_nearest(&BinaryMask::new(size(2, 1), vec![1, 0]).unwrap(), size(4, 1));
        assert_eq!(up.data(), &[1, 1, 0, 0]);
    }

    #[test]
    fn decimation_identity_and_empty() {
        let gt = BinaryMask::from_fn(size(40, 40), |_, y| (10..25).contains(&y));
        let labels = stratify_mask(&gt, &StratumThresholds::default()).unwrap();
        let r1 = ConditionSpec::scale("R1", 1.0).unwrap();
        let report = decimation_audit(&gt, &labels, std::slice::from_ref(&r1)).unwrap();
        assert_eq!(report.rows[0].retention, PerStratum::new(Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(report.rows[0].pixels_lost, PerStratum::new(0, 0, 0));

        let empty = BinaryMask::zeros(size(16, 16));
        let labels = stratify_mask(&empty, &StratumThresholds::default()).unwrap();
        let r4 = ConditionSpec::scale("R4", 0.25).unwrap();
        let report = decimation_audit(&empty, &labels, &[r1, r4]).unwrap();
        for row in report.rows {
            assert_eq!(row.retention, PerStratum::new(None, None, None));
        }
    }

    #[test]
    fn decimation_one_pixel_band_vanishes_at_quarter_scale() {
        // sampled rows at scale 0.25 are 1, 5, 9, ...; row 10 is never sampled
        let gt = BinaryMask::from_fn(size(32, 32), |_, y| y == 10);
        let labels = stratify_mask(&gt, &StratumThresholds::default()).unwrap();
        let r4 = ConditionSpec::scale("R4", 0.25).unwrap();
        let row = &decimation_audit(&gt, &labels, &[r4]).unwrap().rows[0];
        assert_eq!(row.retention.thin, Some(0.0));
        assert_eq!(row.pixels_lost.thin, 32);
    }

    #[test]
    fn decimation_rejects_inconsistent_labels() {
        let gt = BinaryMask::from_fn(size(8, 8), |_, y| y == 3);
        let labels = stratify_mask(&gt, &StratumThresholds::default()).unwrap();
        let other = BinaryMask::zeros(size(8, 8));
        let r1 = ConditionSpec::scale("R1", 1.0).unwrap();
        assert!(matches!(decimation_audit(&other, &labels, &[r1]), Err(Error::LabelMismatch { .. })));
    }

    fn arb_prob() -> impl Strategy<Value = ProbabilityMap> {
        (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=1.0, w * h)
                .prop_map(move |v| ProbabilityMap::new(size(w, h), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn bilinear_stays_within_input_range(p in arb_prob(), w in 1usize..20, h in 1usize..20) {
            let lo = p.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = resize_bilinear(&p, size(w, h));
            prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn nearest_value_set_is_preserved(w in 1usize..12, h in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144),
                                          tw in 1usize..30, th in 1usize..30) {
            let m = BinaryMask::from_fn(size(w, h), |x, y| bits[y * 12 + x]);
            let out = resize_nearest(&m, size(tw, th));
            if m.count_ones() == 0 {
                prop_assert_eq!(out.count_ones(), 0);
            }
            if m.count_ones() == w * h {
                prop_assert_eq!(out.count_ones(), tw * th);
            }
            prop_assert_eq!(resize_nearest(&m, m.size()), m);
        }

        #[test]
        fn nearest_index_is_nearest_center(src in 1usize..60, dst in 1usize..60) {
            for d in 0..dst {
                let i = nearest_index(d, src, dst);
                prop_assert!(i < src);
                // exact rational distance comparison, scaled by 2*dst
                let c2 = (2 * d as i64 + 1) * src as i64 - dst as i64;
                let dist = |j: i64| (c2 - 2 * dst as i64 * j).abs();
                let best = (0..src as i64).map(dist).min().unwrap();
                prop_assert_eq!(dist(i as i64), best);
                if i > 0 {
                    prop_assert!(dist(i as i64 - 1) > best);
                }
            }
        }
    }
}
