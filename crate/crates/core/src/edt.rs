//! Exact Euclidean distance transform.
//!
//! Each foreground pixel receives the distance between its center and the
//! center of the nearest in-image background pixel. Pixels outside the
//! raster are not treated as background. Distances are computed as exact
//! integer squared distances with the separable lower-envelope-of-parabolas
//! method (one pass down the columns, one across the rows); the floating
//! point map is derived from those integers.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Size2D};

const UNREACHED: u64 = u64::MAX;

/// Per-pixel distance to the nearest background pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap {
    size: Size2D,
    squared: Vec<u64>,
    distance: Vec<f64>,
}

impl DistanceMap {
    fn from_squared(size: Size2D, squared: Vec<u64>) -> Self {
        let distance = squared.iter().map(|&s| (s as f64).sqrt()).collect();
        DistanceMap { size, squared, distance }
    }

    pub fn size(&self) -> Size2D {
        self.size
    }

    /// Exact squared distances; the canonical output.
    pub fn squared(&self) -> &[u64] {
        &self.squared
    }

    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.distance[y * self.size.width + x]
    }

    pub fn squared_at(&self, x: usize, y: usize) -> u64 {
        self.squared[y * self.size.width + x]
    }

    pub fn max_squared(&self) -> u64 {
        self.squared.iter().copied().max().unwrap_or(0)
    }

    /// Dump as `EDTF32 <width> <height>\n` followed by little-endian f32
    /// values in row-major order.
    pub fn write_f32_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = format!("EDTF32 {} {}\n", self.size.width, self.size.height).into_bytes();
        buf.reserve(self.distance.len() * 4);
        for &d in &self.distance {
            buf.extend_from_slice(&(d as f32).to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }
}

/// Read back a dump written by [`DistanceMap::write_f32_dump`].
pub fn read_f32_dump(path: impl AsRef<Path>) -> Result<(Size2D, Vec<f32>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()));
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not utf-8"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [magic, w, h] = fields[..] else { return Err(bad("malformed header")) };
    if magic != "EDTF32" {
        return Err(bad("bad magic"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let size = Size2D::new(parse(w)?, parse(h)?)?;
    let body = &bytes[nl + 1..];
    if body.len() != size.area() * 4 {
        return Err(bad("payload length does not match header"));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((size, values))
}

/// Compute the exact Euclidean distance transform of `mask`.
///
/// Fails with [`Error::NoBackground`] when the mask has no 0 pixel.
pub fn euclidean_distance_transform(mask: &BinaryMask) -> Result<DistanceMap> {
    let Size2D { width, height } = mask.size();
    let data = mask.data();
    if !data.contains(&0) {
        return Err(Error::NoBackground);
    }

    // Column pass: squared vertical distance to the nearest background in
    // the same column, or UNREACHED when the column has none.
    let mut cols = vec![UNREACHED; width * height];
    for x in 0..width {
        let mut last: Option<usize> = None;
        for y in 0..height {
            if data[y * width + x] == 0 {
                last = Some(y);
            }
            if let Some(b) = last {
                let d = (y - b) as u64;
                cols[y * width + x] = d * d;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..height).rev() {
            if data[y * width + x] == 0 {
                next = Some(y);
            }
            if let Some(b) = next {
                let d = (b - y) as u64;
                let cell = &mut cols[y * width + x];
                *cell = (*cell).min(d * d);
            }
        }
    }

    // Row pass: lower envelope of the parabolas rooted at every reachable
    // column sample.
    let mut squared = vec![0u64; width * height];
    squared
        .par_chunks_mut(width)
        .zip(cols.par_chunks(width))
        .for_each_init(
            || Envelope::with_capacity(width),
            |env, (out, f)| env.transform_row(f, out),
        );

    Ok(DistanceMap::from_squared(mask.size(), squared))
}

/// Boundary of an envelope segment: exact rational `num / den`, `den > 0`.
#[derive(Clone, Copy, Debug)]
enum Bound {
    NegInf,
    At { num: i128, den: i128 },
    PosInf,
}

impl Bound {
    /// `self >= num / den`.
    fn ge(self, num: i128, den: i128) -> bool {
        match self {
            Bound::NegInf => false,
            Bound::PosInf => true,
            Bound::At { num: a, den: b } => a * den >= num * b,
        }
    }

    /// `self < p` for an integer position.
    fn lt_int(self, p: i128) -> bool {
        match self {
            Bound::NegInf => true,
            Bound::PosInf => false,
            Bound::At { num, den } => num < p * den,
        }
    }
}

struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<Bound>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope { sites: Vec::with_capacity(n), bounds: Vec::with_capacity(n + 1) }
    }

    /// `out[p] = min_q f[q] + (p - q)^2` over sites with finite `f[q]`.
    fn transform_row(&mut self, f: &[u64], out: &mut [u64]) {
        self.sites.clear();
        self.bounds.clear();
        let key = |q: usize| f[q] as i128 + (q as i128) * (q as i128);

        for q in (0..f.len()).filter(|&q| f[q] != UNREACHED) {
            loop {
                let Some(&v) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(Bound::NegInf);
                    break;
                };
                let num = key(q) - key(v);
                let den = 2 * (q as i128 - v as i128);
                let k = self.sites.len() - 1;
                if k > 0 && self.bounds[k].ge(num, den) {
                    self.sites.pop();
                    self.bounds.pop();
                    continue;
                }
                self.sites.push(q);
                self.bounds.push(Bound::At { num, den });
                break;
            }
        }
        if self.sites.is_empty() {
            out.fill(UNREACHED);
            return;
        }
        self.bounds.push(Bound::PosInf);

        let mut k = 0;
        for (p, slot) in out.iter_mut().enumerate() {
            while self.bounds[k + 1].lt_int(p as i128) {
                k += 1;
            }
            let v = self.sites[k];
            let dx = p.abs_diff(v) as u64;
            *slot = dx * dx + f[v];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(mask: &BinaryMask) -> Vec<u64> {
        let Size2D { width, height } = mask.size();
        let bg: Vec<(i64, i64)> = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .filter(|&(x, y)| !mask.get(x, y))
            .map(|(x, y)| (x as i64, y as i64))
            .collect();
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let best = bg.iter().map(|&(bx, by)| ((bx - x).pow(2) + (by - y).pow(2)) as u64).min();
                out.push(best.unwrap());
            }
        }
        out
    }

    fn size(w: usize, h: usize) -> Size2D {
        Size2D::new(w, h).unwrap()
    }

    #[test]
    fn single_pixel_has_distance_one() {
        let m = BinaryMask::from_fn(size(3, 3), |x, y| x == 1 && y == 1);
        let d = euclidean_distance_transform(&m).unwrap();
        assert_eq!(d.squared(), &[0, 0, 0, 0, 1, 0, 0, 0, 0]);
        assert_eq!(d.get(1, 1), 1.0);
    }

    #[test]
    fn band_cross_section() {
        let m = BinaryMask::from_fn(size(40, 9), |_, y| (2..7).contains(&y));
        let d = euclidean_distance_transform(&m).unwrap();
        assert_eq!(d.squared(), brute_force(&m).as_slice());
        let column: Vec<f64> = (2..7).map(|y| d.get(20, y)).collect();
        assert_eq!(column, vec![1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn no_background_is_error() {
        let m = BinaryMask::ones(size(4, 4));
        assert!(matches!(euclidean_distance_transform(&m), Err(Error::NoBackground)));
    }

    #[test]
    fn border_is_not_background() {
        // a lone background pixel in the corner is the only reference
        let m = BinaryMask::from_fn(size(5, 4), |x, y| !(x == 0 && y == 0));
        let d = euclidean_distance_transform(&m).unwrap();
        assert_eq!(d.squared_at(4, 3), 16 + 9);
        assert_eq!(d.squared(), brute_force(&m).as_slice());
    }

    #[test]
    fn random_masks_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let w = rng.random_range(1..20);
            let h = rng.random_range(1..20);
            let density: f64 = rng.random_range(0.3..0.99);
            let mut m = BinaryMask::from_fn(size(w, h), |_, _| rng.random_bool(density));
            if m.count_ones() == w * h {
                m = BinaryMask::from_fn(size(w, h), |x, y| x + y > 0);
            }
            let d = euclidean_distance_transform(&m).unwrap();
            assert_eq!(d.squared(), brute_force(&m).as_slice());
        }
    }

    #[test]
    fn dump_round_trip() {
        let m = BinaryMask::from_fn(size(6, 5), |x, y| (1..5).contains(&x) && (1..4).contains(&y));
        let d = euclidean_distance_transform(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.edt");
        d.write_f32_dump(&path).unwrap();
        let (s, values) = read_f32_dump(&path).unwrap();
        assert_eq!(s, d.size());
        let expected: Vec<f32> = d.distances().iter().map(|&v| v as f32).collect();
        assert_eq!(values, expected);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..14, 1usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop::bool::weighted(0.7), w * h).prop_map(move |bits| {
                let mut data: Vec<u8> = bits.into_iter().map(u8::from).collect();
                data[0] = 0;
                BinaryMask::new(size(w, h), data).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn transpose_equivariance(m in arb_mask()) {
            let d = euclidean_distance_transform(&m).unwrap();
            let dt = euclidean_distance_transform(&m.transpose()).unwrap();
            let w = m.width();
            for y in 0..m.height() {
                for x in 0..w {
                    prop_assert_eq!(d.squared_at(x, y), dt.squared_at(y, x));
                }
            }
        }

        #[test]
        fn lipschitz_on_eight_neighbors(m in arb_mask()) {
            let d = euclidean_distance_transform(&m).unwrap();
            let Size2D { width, height } = m.size();
            for y in 0..height {
                for x in 0..width {
                    for (dx, dy) in [(1i64, 0i64), (0, 1), (1, 1), (1, -1)] {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                            continue;
                        }
                        let step = ((dx * dx + dy * dy) as f64).sqrt();
                        let diff = (d.get(x, y) - d.get(nx as usize, ny as usize)).abs();
                        prop_assert!(diff <= step + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn invariants_hold(m in arb_mask()) {
            let d = euclidean_distance_transform(&m).unwrap();
            let Size2D { width, height } = m.size();
            for y in 0..height {
                for x in 0..width {
                    let s = d.squared_at(x, y);
                    if !m.get(x, y) {
                        prop_assert_eq!(s, 0);
                        continue;
                    }
                    let touches_bg = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dx, dy)| {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        nx >= 0 && ny >= 0 && nx < width as i64 && ny < height as i64
                            && !m.get(nx as usize, ny as usize)
                    });
                    if touches_bg {
                        prop_assert_eq!(s, 1);
                    }
                    prop_assert!(s >= 1);
                }
            }
        }

        #[test]
        fn translation_equivariance(w in 1usize..8, h in 1usize..8, bits in proptest::collection::vec(any::<bool>(), 64),
                                    ox in 0usize..5, oy in 0usize..5) {
            let margin = 8;
            let blob = |x: usize, y: usize| x < w && y < h && bits[y * 8 + x];
            let a = BinaryMask::from_fn(size(w + 2 * margin, h + 2 * margin), |x, y| {
                x >= margin && y >= margin && blob(x - margin, y - margin)
            });
            let b = BinaryMask::from_fn(size(w + 2 * margin + ox, h + 2 * margin + oy), |x, y| {
                x >= margin + ox && y >= margin + oy && blob(x - margin - ox, y - margin - oy)
            });
            let da = euclidean_distance_transform(&a).unwrap();
            let db = euclidean_distance_transform(&b).unwrap();
            for y in 0..a.height() {
                for x in 0..a.width() {
                    prop_assert_eq!(da.squared_at(x, y), db.squared_at(x + ox, y + oy));
                }
            }
        }
    }
}
