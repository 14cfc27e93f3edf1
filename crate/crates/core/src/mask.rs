//! Raster types, mask/probability IO, thresholding and dataset manifests.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raster dimensions in pixels. Both sides are strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Size2D {
    pub width: usize,
    pub height: usize,
}

impl Size2D {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSize { width, height });
        }
        Ok(Size2D { width, height })
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn transposed(&self) -> Size2D {
        Size2D { width: self.height, height: self.width }
    }

    fn validate(&self) -> Result<()> {
        Size2D::new(self.width, self.height).map(|_| ())
    }
}

impl fmt::Display for Size2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

pub(crate) fn ensure_same_size(expected: Size2D, actual: Size2D) -> Result<()> {
    if expected != actual {
        return Err(Error::SizeMismatch { expected, actual });
    }
    Ok(())
}

/// Row-major binary raster holding exactly 0 or 1 per pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    size: Size2D,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(size: Size2D, data: Vec<u8>) -> Result<Self> {
        size.validate()?;
        if data.len() != size.area() {
            return Err(Error::DataLength { expected: size.area(), actual: data.len() });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryValue { index, value });
        }
        Ok(BinaryMask { size, data })
    }

    pub fn zeros(size: Size2D) -> Self {
        BinaryMask { size, data: vec![0; size.area()] }
    }

    pub fn ones(size: Size2D) -> Self {
        BinaryMask { size, data: vec![1; size.area()] }
    }

    pub fn from_fn(size: Size2D, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(size.area());
        for y in 0..size.height {
            for x in 0..size.width {
                data.push(f(x, y) as u8);
            }
        }
        BinaryMask { size, data }
    }

    pub fn size(&self) -> Size2D {
        self.size
    }

    pub fn width(&self) -> usize {
        self.size.width
    }

    pub fn height(&self) -> usize {
        self.size.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.size.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn transpose(&self) -> BinaryMask {
        let width = self.size.width;
        BinaryMask::from_fn(self.size.transposed(), |x, y| self.data[x * width + y] == 1)
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.size.width as u32, self.size.height as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }
}

/// Row-major raster of probabilities in `[0, 1]`, typically a sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    size: Size2D,
    data: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(size: Size2D, data: Vec<f64>) -> Result<Self> {
        size.validate()?;
        if data.len() != size.area() {
            return Err(Error::DataLength { expected: size.area(), actual: data.len() });
        }
        if let Some((index, &value)) =
            data.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidProbability { index, value });
        }
        Ok(ProbabilityMap { size, data })
    }

    pub fn constant(size: Size2D, value: f64) -> Result<Self> {
        ProbabilityMap::new(size, vec![value; size.area()])
    }

    pub fn size(&self) -> Size2D {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.size.width + x]
    }

    /// Values as 0.0/1.0, for running the bilinear kernel on a mask.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        ProbabilityMap { size: mask.size(), data: mask.data().iter().map(|&v| v as f64).collect() }
    }

    /// Construct without the range check; callers guarantee every value is a
    /// convex combination of valid probabilities.
    pub(crate) fn from_raw(size: Size2D, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), size.area());
        ProbabilityMap { size, data }
    }
}

/// Threshold a probability map. Inclusive: `p >= threshold` is foreground.
pub fn binarize(p: &ProbabilityMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    let data = p.data.iter().map(|&v| (v >= threshold) as u8).collect();
    Ok(BinaryMask { size: p.size, data })
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn gray_from_rgb<const C: usize>(
    path: &Path,
    width: u32,
    height: u32,
    raw: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity((width * height) as usize);
    for (i, px) in raw.chunks_exact(C).enumerate() {
        if px[0] != px[1] || px[1] != px[2] {
            let i = i as u32;
            return Err(Error::NonGrayscaleMask { path: path.to_path_buf(), x: i % width, y: i / width });
        }
        out.push(px[0]);
    }
    Ok(out)
}

/// 8-bit intensities of a grayscale-valued raster (alpha ignored).
fn gray8(path: &Path, img: DynamicImage) -> Result<(Size2D, Vec<u8>)> {
    let (w, h) = (img.width(), img.height());
    let size = Size2D::new(w as usize, h as usize)?;
    let values = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.into_raw().chunks_exact(2).map(|p| p[0]).collect(),
        DynamicImage::ImageRgb8(buf) => gray_from_rgb::<3>(path, w, h, buf.as_raw())?,
        DynamicImage::ImageRgba8(buf) => gray_from_rgb::<4>(path, w, h, buf.as_raw())?,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    Ok((size, values))
}

/// Load a binary mask: intensities above 127 are foreground.
///
/// RGB input is accepted only when every pixel has equal channels.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let (size, values) = gray8(path, open_image(path)?)?;
    let data = values.into_iter().map(|v| (v > 127) as u8).collect();
    Ok(BinaryMask { size, data })
}

/// Write a mask as 8-bit grayscale (0 / 255); format follows the extension.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask.to_gray_image()
        .save(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Load a probability map from an 8- or 16-bit grayscale raster, mapping
/// each value to `value / maxval`.
pub fn load_probability_map(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let img = open_image(path)?;
    let size = Size2D::new(img.width() as usize, img.height() as usize)?;
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(buf) => {
            buf.into_raw().chunks_exact(2).map(|p| p[0] as f64 / 65535.0).collect()
        }
        other => gray8(path, other)?.1.into_iter().map(|v| v as f64 / 255.0).collect(),
    };
    Ok(ProbabilityMap { size, data })
}

/// Where a manifest entry's prediction lives: one file for every condition,
/// or one file per condition name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictionSource {
    Single(PathBuf),
    PerCondition(BTreeMap<String, PathBuf>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub gt_mask_path: PathBuf,
    pub prediction: Option<PredictionSource>,
    pub fov_mask_path: Option<PathBuf>,
    pub fold_id: usize,
}

/// A validated dataset: entries at one shared native size, folds `0..F`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub native_size: Size2D,
    pub entries: Vec<ManifestEntry>,
    /// Root for `<pred_root>/<condition>/<image_id>.png` lookups.
    pub pred_root: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    dataset: String,
    native_size: Size2D,
    #[serde(default)]
    pred_root: Option<PathBuf>,
    entries: Vec<RawEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    gt: PathBuf,
    #[serde(default)]
    pred: Option<PredictionSource>,
    #[serde(default)]
    fov: Option<PathBuf>,
    fold: usize,
}

impl DatasetManifest {
    /// Parse and check the structural invariants. Relative paths are
    /// resolved against `base_dir`. File contents are not touched.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawManifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        if raw.dataset.trim().is_empty() {
            return Err(Error::Manifest("empty dataset name".into()));
        }
        raw.native_size.validate()?;
        if raw.entries.is_empty() {
            return Err(Error::Manifest("empty manifest".into()));
        }
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let check_path = |id: &str, p: &Path| {
            if p.as_os_str().is_empty() {
                Err(Error::Manifest(format!("entry {id}: empty path")))
            } else {
                Ok(())
            }
        };

        let mut seen = HashSet::new();
        let mut folds = BTreeSet::new();
        let mut entries = Vec::with_capacity(raw.entries.len());
        for e in raw.entries {
            if e.id.is_empty() {
                return Err(Error::Manifest("entry with empty id".into()));
            }
            if !seen.insert(e.id.clone()) {
                return Err(Error::Manifest(format!("duplicate image_id {}", e.id)));
            }
            check_path(&e.id, &e.gt)?;
            if let Some(fov) = &e.fov {
                check_path(&e.id, fov)?;
            }
            let prediction = match e.pred {
                None => None,
                Some(PredictionSource::Single(p)) => {
                    check_path(&e.id, &p)?;
                    Some(PredictionSource::Single(resolve(&p)))
                }
                Some(PredictionSource::PerCondition(map)) => {
                    let mut out = BTreeMap::new();
                    for (cond, p) in map {
                        check_path(&e.id, &p)?;
                        out.insert(cond, resolve(&p));
                    }
                    Some(PredictionSource::PerCondition(out))
                }
            };
            folds.insert(e.fold);
            entries.push(ManifestEntry {
                gt_mask_path: resolve(&e.gt),
                fov_mask_path: e.fov.as_deref().map(resolve),
                image_id: e.id,
                prediction,
                fold_id: e.fold,
            });
        }
        if folds.iter().copied().ne(0..folds.len()) {
            return Err(Error::Manifest(format!("non-contiguous folds {folds:?}")));
        }
        Ok(DatasetManifest {
            dataset_name: raw.dataset,
            native_size: raw.native_size,
            entries,
            pred_root: raw.pred_root.as_deref().map(resolve),
        })
    }

    pub fn fold_count(&self) -> usize {
        self.entries.iter().map(|e| e.fold_id + 1).max().unwrap_or(0)
    }

    pub fn fold_map(&self) -> BTreeMap<String, usize> {
        self.entries.iter().map(|e| (e.image_id.clone(), e.fold_id)).collect()
    }

    /// Prediction path for one entry under one condition. An explicit
    /// `pred` in the manifest wins over the `<root>/<condition>/<id>.png`
    /// convention.
    pub fn prediction_path(
        &self,
        entry: &ManifestEntry,
        condition: &str,
        root_override: Option<&Path>,
    ) -> Option<PathBuf> {
        match &entry.prediction {
            Some(PredictionSource::Single(p)) => return Some(p.clone()),
            Some(PredictionSource::PerCondition(map)) => {
                if let Some(p) = map.get(condition) {
                    return Some(p.clone());
                }
            }
            None => {}
        }
        let root = root_override.or(self.pred_root.as_deref())?;
        Some(root.join(condition).join(format!("{}.png", entry.image_id)))
    }

    fn check_native_sizes(&self) -> Result<()> {
        for entry in &self.entries {
            let files = std::iter::once(&entry.gt_mask_path).chain(entry.fov_mask_path.as_ref());
            for path in files {
                let (w, h) = image::image_dimensions(path)
                    .map_err(|source| Error::Image { path: path.clone(), source })?;
                let actual = Size2D { width: w as usize, height: h as usize };
                if actual != self.native_size {
                    return Err(Error::Manifest(format!(
                        "native-size mismatch for {}: {} is {actual}, dataset declares {}",
                        entry.image_id,
                        path.display(),
                        self.native_size
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Read and validate a manifest, including that every ground-truth and FOV
/// raster matches the declared native size.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = DatasetManifest::parse(&text, base)?;
    manifest.check_native_sizes()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb, RgbImage};

    fn size(w: usize, h: usize) -> Size2D {
        Size2D::new(w, h).unwrap()
    }

    #[test]
    fn rejects_non_binary_and_bad_length() {
        assert!(matches!(BinaryMask::new(size(2, 1), vec![0, 2]), Err(Error::NonBinaryValue { index: 1, .. })));
        assert!(matches!(BinaryMask::new(size(2, 2), vec![0, 1]), Err(Error::DataLength { .. })));
        assert!(Size2D::new(0, 3).is_err());
    }

    #[test]
    fn probability_map_rejects_non_finite() {
        assert!(ProbabilityMap::new(size(2, 1), vec![0.5, f64::NAN]).is_err());
        assert!(ProbabilityMap::new(size(2, 1), vec![0.5, 1.5]).is_err());
        assert!(ProbabilityMap::new(size(2, 1), vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn binarize_is_inclusive_at_threshold() {
        let p = ProbabilityMap::new(size(3, 1), vec![0.49, 0.50, 0.51]).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().data(), &[0, 1, 1]);
        let p = ProbabilityMap::new(size(2, 1), vec![0.2, 0.8]).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().data(), &[0, 1]);
        let p = ProbabilityMap::constant(size(3, 3), 0.0).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().count_ones(), 0);
    }

    #[test]
    fn binarize_rejects_out_of_range_threshold() {
        let p = ProbabilityMap::constant(size(1, 1), 0.3).unwrap();
        for t in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(binarize(&p, t).is_err());
        }
    }

    #[test]
    fn transpose_swaps_axes() {
        let m = BinaryMask::new(size(3, 2), vec![1, 0, 0, 0, 0, 1]).unwrap();
        let t = m.transpose();
        assert_eq!(t.size(), size(2, 3));
        assert_eq!(t.data(), &[1, 0, 0, 0, 0, 1]);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn load_saturated_and_empty_masks() {
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.png");
        GrayImage::from_pixel(4, 4, Luma([255])).save(&full).unwrap();
        let m = load_mask(&full).unwrap();
        assert_eq!(m.count_ones(), 16);

        let empty = dir.path().join("empty.pgm");
        GrayImage::from_pixel(4, 4, Luma([0])).save(&empty).unwrap();
        assert_eq!(load_mask(&empty).unwrap().count_ones(), 0);
    }

    #[test]
    fn load_checkerboard_maps_pixels_directly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("check.png");
        GrayImage::from_fn(2, 2, |x, y| Luma([if (x + y) % 2 == 0 { 255 } else { 0 }])).save(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap().data(), &[1, 0, 0, 1]);
    }

    #[test]
    fn load_rgb_mask_requires_equal_channels() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("gray_rgb.png");
        RgbImage::from_fn(3, 1, |x, _| if x == 1 { Rgb([200, 200, 200]) } else { Rgb([10, 10, 10]) })
            .save(&ok)
            .unwrap();
        assert_eq!(load_mask(&ok).unwrap().data(), &[0, 1, 0]);

        let bad = dir.path().join("color.png");
        RgbImage::from_fn(3, 1, |x, _| if x == 2 { Rgb([255, 0, 0]) } else { Rgb([0, 0, 0]) })
            .save(&bad)
            .unwrap();
        assert!(matches!(load_mask(&bad), Err(Error::NonGrayscaleMask { x: 2, y: 0, .. })));
    }

    #[test]
    fn load_missing_file_is_error() {
        assert!(matches!(load_mask("/nonexistent/mask.png"), Err(Error::Io { .. })));
    }

    #[test]
    fn probability_map_scales_by_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("p8.png");
        GrayImage::from_fn(2, 1, |x, _| Luma([if x == 0 { 0 } else { 255 }])).save(&p8).unwrap();
        assert_eq!(load_probability_map(&p8).unwrap().data(), &[0.0, 1.0]);

        let p16 = dir.path().join("p16.png");
        image::ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(2, 1, |x, _| Luma([if x == 0 { 32768 } else { 65535 }]))
            .save(&p16)
            .unwrap();
        let m = load_probability_map(&p16).unwrap();
        assert!((m.data()[0] - 32768.0 / 65535.0).abs() < 1e-15);
        assert_eq!(m.data()[1], 1.0);
    }

    fn manifest_json(folds: &[usize]) -> String {
        let entries: Vec<String> = folds
            .iter()
            .enumerate()
            .map(|(i, f)| format!(r#"{{"id": "{:02}", "gt": "gt/{:02}.png", "fold": {f}}}"#, i + 1, i + 1))
            .collect();
        format!(
            r#"{{"dataset": "DRIVE", "native_size": {{"width": 565, "height": 584}}, "entries": [{}]}}"#,
            entries.join(",")
        )
    }

    #[test]
    fn manifest_structural_errors() {
        let base = Path::new("/data");
        let err = DatasetManifest::parse(&manifest_json(&[0, 2]), base).unwrap_err();
        assert!(err.to_string().contains("non-contiguous folds"), "{err}");
        let err = DatasetManifest::parse(&manifest_json(&[]), base).unwrap_err();
        assert!(err.to_string().contains("empty manifest"), "{err}");
        let dup = r#"{"dataset": "X", "native_size": {"width": 2, "height": 2},
            "entries": [{"id": "a", "gt": "a.png", "fold": 0}, {"id": "a", "gt": "b.png", "fold": 0}]}"#;
        assert!(DatasetManifest::parse(dup, base).unwrap_err().to_string().contains("duplicate"));
        let missing = r#"{"dataset": "X", "native_size": {"width": 2, "height": 2}, "entries": [{"id": "a", "fold": 0}]}"#;
        assert!(matches!(DatasetManifest::parse(missing, base), Err(Error::Manifest(_))));
    }

    #[test]
    fn manifest_drive_layout_with_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("gt")).unwrap();
        for i in 1..=20 {
            GrayImage::new(565, 584).save(dir.path().join(format!("gt/{i:02}.png"))).unwrap();
        }
        let folds: Vec<usize> = (0..20).map(|i| i % 5).collect();
        let path = dir.path().join("drive.json");
        std::fs::write(&path, manifest_json(&folds)).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.entries.len(), 20);
        assert_eq!(m.fold_count(), 5);
        assert_eq!(m.entries[3].gt_mask_path, dir.path().join("gt/04.png"));

        // one file at the wrong size
        GrayImage::new(564, 584).save(dir.path().join("gt/07.png")).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("native-size mismatch"), "{err}");
    }

    #[test]
    fn prediction_path_resolution() {
        let text = r#"{"dataset": "X", "native_size": {"width": 2, "height": 2}, "pred_root": "preds",
            "entries": [
                {"id": "a", "gt": "a.png", "fold": 0},
                {"id": "b", "gt": "b.png", "fold": 0, "pred": "custom/b.png"},
                {"id": "c", "gt": "c.png", "fold": 0, "pred": {"R2": "r2/c.png"}}
            ]}"#;
        let m = DatasetManifest::parse(text, Path::new("/d")).unwrap();
        let p = |i: usize, c: &str| m.prediction_path(&m.entries[i], c, None).unwrap();
        assert_eq!(p(0, "R3"), PathBuf::from("/d/preds/R3/a.png"));
        assert_eq!(p(1, "R3"), PathBuf::from("/d/custom/b.png"));
        assert_eq!(p(2, "R2"), PathBuf::from("/d/r2/c.png"));
        assert_eq!(p(2, "R1"), PathBuf::from("/d/preds/R1/c.png"));
        let over = m.prediction_path(&m.entries[0], "R1", Some(Path::new("/elsewhere"))).unwrap();
        assert_eq!(over, PathBuf::from("/elsewhere/R1/a.png"));
    }
}
