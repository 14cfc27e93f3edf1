//! Assignment of vessel pixels to thin / medium / thick width strata.

use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edt::{euclidean_distance_transform, DistanceMap};
use crate::error::{Error, Result};
use crate::mask::{ensure_same_size, BinaryMask, Size2D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Stratum {
    Background = 0,
    Thin = 1,
    Medium = 2,
    Thick = 3,
}

/// One value per vessel stratum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerStratum<T> {
    pub thin: T,
    pub medium: T,
    pub thick: T,
}

impl<T> PerStratum<T> {
    pub fn new(thin: T, medium: T, thick: T) -> Self {
        PerStratum { thin, medium, thick }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> PerStratum<U> {
        PerStratum { thin: f(self.thin), medium: f(self.medium), thick: f(self.thick) }
    }

    pub fn zip<U>(self, other: PerStratum<U>) -> PerStratum<(T, U)> {
        PerStratum {
            thin: (self.thin, other.thin),
            medium: (self.medium, other.medium),
            thick: (self.thick, other.thick),
        }
    }

    pub fn get(&self, stratum: Stratum) -> Option<&T> {
        match stratum {
            Stratum::Background => None,
            Stratum::Thin => Some(&self.thin),
            Stratum::Medium => Some(&self.medium),
            Stratum::Thick => Some(&self.thick),
        }
    }

    pub fn get_mut(&mut self, stratum: Stratum) -> Option<&mut T> {
        match stratum {
            Stratum::Background => None,
            Stratum::Thin => Some(&mut self.thin),
            Stratum::Medium => Some(&mut self.medium),
            Stratum::Thick => Some(&mut self.thick),
        }
    }

    /// Values in thin, medium, thick order.
    pub fn to_array(self) -> [T; 3] {
        [self.thin, self.medium, self.thick]
    }
}

impl PerStratum<u64> {
    pub fn total(&self) -> u64 {
        self.thin + self.medium + self.thick
    }
}

/// Half-width cut points. `d < thin_below` is thin, `d > thick_above` is
/// thick, anything in between (both ends inclusive) is medium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumThresholds {
    thin_below: f64,
    thick_above: f64,
}

impl Default for StratumThresholds {
    fn default() -> Self {
        StratumThresholds { thin_below: 3.0, thick_above: 7.0 }
    }
}

impl StratumThresholds {
    pub fn new(thin_below: f64, thick_above: f64) -> Result<Self> {
        if !(thin_below > 0.0 && thin_below <= thick_above) {
            return Err(Error::InvalidStrata { thin_below, thick_above });
        }
        Ok(StratumThresholds { thin_below, thick_above })
    }

    pub fn thin_below(&self) -> f64 {
        self.thin_below
    }

    pub fn thick_above(&self) -> f64 {
        self.thick_above
    }

    pub fn classify(&self, half_width: f64) -> Stratum {
        if half_width < self.thin_below {
            Stratum::Thin
        } else if half_width > self.thick_above {
            Stratum::Thick
        } else {
            Stratum::Medium
        }
    }
}

/// Per-pixel stratum assignment; non-background exactly on vessel pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StratumLabels {
    size: Size2D,
    labels: Vec<Stratum>,
}

impl StratumLabels {
    pub fn size(&self) -> Size2D {
        self.size
    }

    pub fn labels(&self) -> &[Stratum] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Stratum {
        self.labels[y * self.size.width + x]
    }

    /// Pixel count per stratum.
    pub fn counts(&self) -> PerStratum<u64> {
        let mut counts = PerStratum::<u64>::default();
        for &label in &self.labels {
            if let Some(c) = counts.get_mut(label) {
                *c += 1;
            }
        }
        counts
    }

    /// Write as an indexed PNG: background black, thin red, medium green,
    /// thick blue.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.size.width as u32, self.size.height as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(vec![0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0, 255]);
        let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
        let mut writer = encoder.write_header().map_err(to_io)?;
        let bytes: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        writer.write_image_data(&bytes).map_err(to_io)?;
        writer.finish().map_err(to_io)
    }
}

/// Label every ground-truth vessel pixel by its own distance value.
pub fn stratify(dmap: &DistanceMap, gt: &BinaryMask, thresholds: &StratumThresholds) -> Result<StratumLabels> {
    ensure_same_size(gt.size(), dmap.size())?;
    let labels = gt
        .data()
        .iter()
        .zip(dmap.distances())
        .map(|(&v, &d)| if v == 1 { thresholds.classify(d) } else { Stratum::Background })
        .collect();
    Ok(StratumLabels { size: gt.size(), labels })
}

/// Distance transform followed by [`stratify`].
pub fn stratify_mask(gt: &BinaryMask, thresholds: &StratumThresholds) -> Result<StratumLabels> {
    let dmap = euclidean_distance_transform(gt)?;
    stratify(&dmap, gt, thresholds)
}

pub fn stratum_counts(labels: &StratumLabels) -> PerStratum<u64> {
    labels.counts()
}
