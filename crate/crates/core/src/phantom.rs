//! Synthetic vessel phantoms with known widths.
//!
//! All geometry is integer arithmetic, so a given spec rasterizes to the
//! same bytes on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Size2D};
use crate::stratify::{stratify_mask, StratumLabels, StratumThresholds};

/// Bumped whenever a suite member changes.
pub const SUITE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Horizontal band spanning the full canvas width, vertically centered.
    Band { height: usize },
    /// Filled disk centered on the canvas: `dx^2 + dy^2 <= radius^2`.
    Disk { radius: usize },
    /// Annulus `(radius - thickness)^2 < dx^2 + dy^2 <= radius^2`.
    Ring { radius: usize, thickness: usize },
    /// Binary tree grown upward from the bottom center. Every segment is a
    /// Bresenham line thickened across its minor axis to an exact width.
    /// Children are `taper_percent` as wide and three quarters as long.
    BranchingTree { root_width: usize, trunk_length: usize, depth: usize, taper_percent: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    pub canvas: Size2D,
}

impl PhantomSpec {
    fn margin(&self) -> usize {
        match self.kind {
            PhantomKind::Band { height } => height,
            PhantomKind::Disk { .. } => 1,
            PhantomKind::Ring { thickness, .. } => thickness,
            PhantomKind::BranchingTree { root_width, .. } => root_width,
        }
    }

    /// Peak distance-transform value implied by the geometry.
    pub fn predicted_peak(&self) -> f64 {
        match self.kind {
            PhantomKind::Band { height } => height.div_ceil(2) as f64,
            PhantomKind::Disk { radius } => radius as f64,
            PhantomKind::Ring { thickness, .. } => thickness.div_ceil(2) as f64,
            PhantomKind::BranchingTree { root_width, .. } => root_width.div_ceil(2) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub mask: BinaryMask,
    /// Nominal half-width per pixel from the construction geometry; 0 on
    /// background.
    pub nominal_half_width: Vec<f64>,
}

struct Canvas {
    size: Size2D,
    margin: usize,
    mask: Vec<u8>,
    nominal: Vec<f64>,
    overflow: bool,
}

impl Canvas {
    fn new(size: Size2D, margin: usize) -> Self {
        Canvas { size, margin, mask: vec![0; size.area()], nominal: vec![0.0; size.area()], overflow: false }
    }

    fn inside(&self, x: i64, y: i64) -> bool {
        let m = self.margin as i64;
        x >= m && y >= m && x < self.size.width as i64 - m && y < self.size.height as i64 - m
    }

    fn paint(&mut self, x: i64, y: i64, half_width: f64) {
        if !self.inside(x, y) {
            self.overflow = true;
            return;
        }
        let i = y as usize * self.size.width + x as usize;
        self.mask[i] = 1;
        self.nominal[i] = self.nominal[i].max(half_width);
    }

    /// Bresenham line from `a` to `b`, `width` pixels across its minor axis.
    fn thick_segment(&mut self, a: (i64, i64), b: (i64, i64), width: usize) {
        let (mut x, mut y) = a;
        let (dx, dy) = ((b.0 - a.0).abs(), -(b.1 - a.1).abs());
        let (sx, sy) = (if a.0 < b.0 { 1 } else { -1 }, if a.1 < b.1 { 1 } else { -1 });
        let x_major = dx >= -dy;
        let lo = -((width as i64 - 1) / 2);
        let hi = width as i64 / 2;
        let half = width.div_ceil(2) as f64;
        let mut err = dx + dy;
        loop {
            for o in lo..=hi {
                if x_major {
                    self.paint(x, y + o, half);
                } else {
                    self.paint(x + o, y, half);
                }
            }
            if (x, y) == b {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

fn radial_distance(d2: i64) -> f64 {
    (d2 as f64).sqrt()
}

/// Rasterize a phantom. Fails when geometry is degenerate or the structure
/// does not keep its background margin inside the canvas.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    let size = spec.canvas;
    if size.width == 0 || size.height == 0 {
        return Err(Error::Phantom("empty canvas".into()));
    }
    let mut canvas = Canvas::new(size, spec.margin());
    let (cx, cy) = ((size.width / 2) as i64, (size.height / 2) as i64);
    match spec.kind {
        PhantomKind::Band { height } => {
            if height == 0 {
                return Err(Error::Phantom("band height must be positive".into()));
            }
            if size.height < 3 * height {
                return Err(Error::Phantom(format!("band of height {height} exceeds canvas {size}")));
            }
            let top = (size.height - height) / 2;
            for i in 0..height {
                let y = top + i;
                let half = (i + 1).min(height - i) as f64;
                for x in 0..size.width {
                    let idx = y * size.width + x;
                    canvas.mask[idx] = 1;
                    canvas.nominal[idx] = half;
                }
            }
        }
        PhantomKind::Disk { radius } => {
            if radius == 0 {
                return Err(Error::Phantom("disk radius must be positive".into()));
            }
            let r = radius as i64;
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    let d2 = (x - cx).pow(2) + (y - cy).pow(2);
                    if d2 <= r * r {
                        canvas.paint(x, y, r as f64 + 1.0 - radial_distance(d2));
                    }
                }
            }
        }
        PhantomKind::Ring { radius, thickness } => {
            if thickness == 0 || thickness > radius {
                return Err(Error::Phantom("ring needs 0 < thickness <= radius".into()));
            }
            let (r, inner) = (radius as i64, (radius - thickness) as i64);
            for y in cy - r..=cy + r {
                for x in cx - r..=cx + r {
                    let d2 = (x - cx).pow(2) + (y - cy).pow(2);
                    if d2 > inner * inner && d2 <= r * r {
                        let rho = radial_distance(d2);
                        canvas.paint(x, y, (rho - inner as f64).min(r as f64 + 1.0 - rho));
                    }
                }
            }
        }
        PhantomKind::BranchingTree { root_width, trunk_length, depth, taper_percent, seed } => {
            if root_width == 0 || trunk_length < 2 || taper_percent == 0 || taper_percent > 100 {
                return Err(Error::Phantom("tree needs positive width, trunk >= 2 and taper in 1..=100".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = (cx, (size.height - 1 - root_width) as i64);
            grow(&mut canvas, &mut rng, start, (0, -(trunk_length as i64)), root_width, depth, taper_percent);
        }
    }
    if canvas.overflow {
        return Err(Error::Phantom(format!("phantom exceeds canvas {size} with margin {}", spec.margin())));
    }
    let mask = BinaryMask::new(size, canvas.mask)?;
    if mask.count_ones() == 0 {
        return Err(Error::Phantom("phantom rasterized to nothing".into()));
    }
    Ok(Phantom { mask, nominal_half_width: canvas.nominal })
}

fn grow(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    from: (i64, i64),
    offset: (i64, i64),
    width: usize,
    depth: usize,
    taper_percent: usize,
) {
    let to = (from.0 + offset.0, from.1 + offset.1);
    canvas.thick_segment(from, to, width);
    if depth == 0 {
        return;
    }
    let dy = offset.1 * 3 / 4;
    if dy.abs() < 2 {
        return;
    }
    let child_width = ((width * taper_percent + 50) / 100).max(1);
    let base_dx = offset.0 * 3 / 4;
    let reach = dy.abs();
    for side in [-1i64, 1] {
        let spread = rng.random_range(reach / 4..=reach / 2);
        grow(canvas, rng, to, (base_dx + side * spread, dy), child_width, depth - 1, taper_percent);
    }
}

/// A member of the fixed phantom suite.
#[derive(Clone, Debug)]
pub struct SuiteMember {
    pub name: String,
    pub spec: PhantomSpec,
    pub mask: BinaryMask,
    pub labels: StratumLabels,
}

pub const SUITE_CANVAS: Size2D = Size2D { width: 128, height: 128 };

/// Specs of the standard suite, in order. Band heights 1 and 2 are thin
/// throughout, 5 and 9 have medium centerlines and 15 has a thick
/// centerline (peak 8).
pub fn standard_specs() -> Vec<(String, PhantomSpec)> {
    let canvas = SUITE_CANVAS;
    let mut specs: Vec<(String, PhantomSpec)> = [1usize, 2, 5, 9, 15]
        .into_iter()
        .map(|h| (format!("band-w{h:02}"), PhantomSpec { kind: PhantomKind::Band { height: h }, canvas }))
        .collect();
    specs.push(("disk-r10".into(), PhantomSpec { kind: PhantomKind::Disk { radius: 10 }, canvas }));
    specs.push(("ring-r40-t6".into(), PhantomSpec { kind: PhantomKind::Ring { radius: 40, thickness: 6 }, canvas }));
    specs.push((
        "tree-s42".into(),
        PhantomSpec {
            kind: PhantomKind::BranchingTree { root_width: 9, trunk_length: 30, depth: 4, taper_percent: 60, seed: 42 },
            canvas,
        },
    ));
    specs
}

/// The standard suite with default strata (thin below 3, thick above 7).
pub fn standard_suite() -> Vec<SuiteMember> {
    let thresholds = StratumThresholds::default();
    standard_specs()
        .into_iter()
        .map(|(name, spec)| {
            let phantom = generate(&spec).expect("standard suite specs fit their canvas");
            let labels = stratify_mask(&phantom.mask, &thresholds).expect("phantoms keep a background margin");
            SuiteMember { name, spec, mask: phantom.mask, labels }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edt::euclidean_distance_transform;
    use crate::stratify::Stratum;

    fn canvas(w: usize, h: usize) -> Size2D {
        Size2D::new(w, h).unwrap()
    }

    fn peak(mask: &BinaryMask) -> f64 {
        euclidean_distance_transform(mask).unwrap().distances().iter().cloned().fold(0.0, f64::max)
    }

    #[test]
    fn band_peaks_are_exact() {
        for h in 1..=17 {
            let spec = PhantomSpec { kind: PhantomKind::Band { height: h }, canvas: canvas(40, 60) };
            let p = generate(&spec).unwrap();
            assert_eq!(peak(&p.mask), spec.predicted_peak(), "height {h}");
            // nominal map equals the transform everywhere for bands
            let d = euclidean_distance_transform(&p.mask).unwrap();
            assert_eq!(d.distances(), p.nominal_half_width.as_slice());
        }
    }

    #[test]
    fn band_height_five_has_medium_centerline() {
        let spec = PhantomSpec { kind: PhantomKind::Band { height: 5 }, canvas: canvas(20, 21) };
        let p = generate(&spec).unwrap();
        let labels = stratify_mask(&p.mask, &StratumThresholds::default()).unwrap();
        assert_eq!(labels.get(10, 10), Stratum::Medium);
        assert_eq!(peak(&p.mask), 3.0);
    }

    #[test]
    fn band_height_one_is_all_thin() {
        let spec = PhantomSpec { kind: PhantomKind::Band { height: 1 }, canvas: canvas(20, 9) };
        let p = generate(&spec).unwrap();
        let labels = stratify_mask(&p.mask, &StratumThresholds::default()).unwrap();
        let c = labels.counts();
        assert_eq!((c.thin, c.medium, c.thick), (20, 0, 0));
    }

    #[test]
    fn disk_peaks_within_one_pixel() {
        for r in 1..=20 {
            let spec = PhantomSpec { kind: PhantomKind::Disk { radius: r }, canvas: canvas(2 * r + 5, 2 * r + 5) };
            let p = generate(&spec).unwrap();
            assert!((peak(&p.mask) - r as f64).abs() <= 1.0, "radius {r}");
            let d = euclidean_distance_transform(&p.mask).unwrap();
            for (actual, nominal) in d.distances().iter().zip(&p.nominal_half_width) {
                assert!((actual - nominal).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn oversized_phantoms_are_rejected() {
        let band = PhantomSpec { kind: PhantomKind::Band { height: 10 }, canvas: canvas(20, 25) };
        assert!(matches!(generate(&band), Err(Error::Phantom(_))));
        let disk = PhantomSpec { kind: PhantomKind::Disk { radius: 10 }, canvas: canvas(21, 21) };
        assert!(matches!(generate(&disk), Err(Error::Phantom(_))));
        let ring = PhantomSpec { kind: PhantomKind::Ring { radius: 3, thickness: 4 }, canvas: canvas(20, 20) };
        assert!(generate(&ring).is_err());
        let tree = PhantomSpec {
            kind: PhantomKind::BranchingTree { root_width: 5, trunk_length: 40, depth: 3, taper_percent: 70, seed: 1 },
            canvas: canvas(30, 30),
        };
        assert!(generate(&tree).is_err());
    }

    #[test]
    fn tree_is_deterministic() {
        let spec = standard_specs().into_iter().find(|(n, _)| n == "tree-s42").unwrap().1;
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.mask, b.mask);
        let other_seed = PhantomSpec {
            kind: match spec.kind {
                PhantomKind::BranchingTree { root_width, trunk_length, depth, taper_percent, .. } => {
                    PhantomKind::BranchingTree { root_width, trunk_length, depth, taper_percent, seed: 43 }
                }
                k => k,
            },
            ..spec
        };
        assert_ne!(generate(&other_seed).unwrap().mask, a.mask);
    }

    #[test]
    fn thick_segment_has_exact_cross_section() {
        let mut c = Canvas::new(canvas(40, 40), 0);
        c.thick_segment((5, 10), (30, 18), 4);
        // x-major: every column along the line holds exactly 4 pixels
        for x in 5..=30 {
            let column: usize = (0..40).map(|y| c.mask[y * 40 + x] as usize).sum();
            assert_eq!(column, 4, "column {x}");
        }
    }

    #[test]
    fn suite_is_stable_and_partitioned() {
        let a = standard_suite();
        let b = standard_suite();
        let names: Vec<&str> = a.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(
            names,
            ["band-w01", "band-w02", "band-w05", "band-w09", "band-w15", "disk-r10", "ring-r40-t6", "tree-s42"]
        );
        for (m, n) in a.iter().zip(&b) {
            assert_eq!(m.mask, n.mask);
            assert_eq!(m.labels.counts().total(), m.mask.count_ones() as u64);
            assert_eq!(m.mask.size(), SUITE_CANVAS);
        }
        let w15 = a.iter().find(|m| m.name == "band-w15").unwrap();
        assert!(w15.labels.counts().thick > 0);
        let w09 = a.iter().find(|m| m.name == "band-w09").unwrap();
        assert_eq!(w09.labels.counts().thick, 0);
    }
}
