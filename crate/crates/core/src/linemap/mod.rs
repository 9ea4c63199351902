//! From photos to generator conditions.
//!
//! photo → [`detect_edges`] → [`ProbEdgeMap`] → [`extract_linemap`] →
//! [`LineMap`] → [`distance_field`] → [`DistanceField`] →
//! [`build_condition_pyramid`] → [`ConditionPyramid`].

mod edt;
pub mod morph;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng::{derive, Stream};

pub const DEFAULT_L_MIN: usize = 10;
pub const MIN_PHOTO_SIDE: usize = 16;

/// Per-pixel edge probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbEdgeMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ProbEdgeMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("edge map", format!("{height}x{width} needs {} values, got {}", height * width, values.len())));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("edge probabilities must lie in [0, 1]"));
        }
        Ok(ProbEdgeMap { height, width, values })
    }
}

/// Binary line drawing; `true` marks a line pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineMap {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl LineMap {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::shape("line map", format!("{height}x{width} needs {} cells, got {}", height * width, mask.len())));
        }
        Ok(LineMap { height, width, mask })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        LineMap { height, width, mask: vec![false; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.mask[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Unsigned Euclidean distance (in pixels) to the nearest line pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl DistanceField {
    /// Image diagonal; the value used everywhere when there are no lines and
    /// the divisor that maps distances into `[0, 1]`.
    pub fn d_max(&self) -> f64 {
        libm::sqrt((self.height * self.height + self.width * self.width) as f64)
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub scale: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Normalized distance field at several resolutions, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPyramid {
    pub levels: Vec<PyramidLevel>,
}

impl ConditionPyramid {
    pub fn level(&self, scale: usize) -> Option<&PyramidLevel> {
        self.levels.iter().find(|l| l.scale == scale)
    }

    pub fn finest(&self) -> Option<&PyramidLevel> {
        self.levels.last()
    }
}

/// Source of edge probabilities for a photo.
pub trait EdgeDetector {
    fn detect(&self, photo: &RgbImage) -> Result<ProbEdgeMap>;
}

/// Smoothed Sobel gradient magnitude, see [`detect_edges`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientDetector;

impl EdgeDetector for GradientDetector {
    fn detect(&self, photo: &RgbImage) -> Result<ProbEdgeMap> {
        detect_edges(photo)
    }
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn filter3(src: &[f64], h: usize, w: usize, ky: [f64; 3], kx: [f64; 3]) -> Vec<f64> {
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..3).map(|k| kx[k] * src[y * w + clamp_index(x as isize + k as isize - 1, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..3).map(|k| ky[k] * tmp[clamp_index(y as isize + k as isize - 1, h) * w + x]).sum();
        }
    }
    out
}

/// Luma, a `[1 2 1]/4` blur in each direction, Sobel gradient magnitude
/// with replicated borders, then division by the maximum.
pub fn detect_edges(photo: &RgbImage) -> Result<ProbEdgeMap> {
    let (h, w) = (photo.height, photo.width);
    if photo.is_empty() {
        return Err(Error::invalid("cannot detect edges in an empty image"));
    }
    if h < MIN_PHOTO_SIDE || w < MIN_PHOTO_SIDE {
        return Err(Error::invalid(format!("photo is {h}x{w}, edge detection needs at least {MIN_PHOTO_SIDE}x{MIN_PHOTO_SIDE}")));
    }
    let blur = [0.25, 0.5, 0.25];
    let smooth = filter3(&photo.luma(), h, w, blur, blur);
    let gx = filter3(&smooth, h, w, [1.0, 2.0, 1.0], [-1.0, 0.0, 1.0]);
    let gy = filter3(&smooth, h, w, [-1.0, 0.0, 1.0], [1.0, 2.0, 1.0]);
    let mut mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| libm::sqrt(a * a + b * b)).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max > 1e-12 {
        mag.iter_mut().for_each(|v| *v = (*v / max).min(1.0));
    } else {
        mag.fill(0.0);
    }
    ProbEdgeMap::new(h, w, mag)
}

/// Pixels with probability strictly above `tau`.
pub fn threshold(p: &ProbEdgeMap, tau: f64) -> LineMap {
    LineMap { height: p.height, width: p.width, mask: p.values.iter().map(|&v| v > tau).collect() }
}

/// Threshold at `tau`, one 2×2 opening, thinning to single-pixel width, then
/// removal of 8-connected pieces with fewer than `l_min` pixels.
pub fn extract_linemap(p: &ProbEdgeMap, tau: f64, l_min: usize) -> Result<LineMap> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    if l_min == 0 {
        return Err(Error::invalid("l_min must be at least 1"));
    }
    let (h, w) = (p.height, p.width);
    let raw = threshold(p, tau);
    let opened = morph::open2x2(&raw.mask, h, w);
    let thin = morph::thin(&opened, h, w);
    Ok(LineMap { height: h, width: w, mask: morph::remove_small_components(&thin, h, w, l_min) })
}

/// Exact Euclidean distance transform; an empty map yields `d_max`
/// everywhere.
pub fn distance_field(lines: &LineMap) -> DistanceField {
    let (h, w) = (lines.height, lines.width);
    let mut field = DistanceField { height: h, width: w, values: Vec::new() };
    if lines.count() == 0 {
        field.values = vec![field.d_max(); h * w];
    } else {
        field.values = edt::squared_distances(&lines.mask, h, w).into_iter().map(libm::sqrt).collect();
    }
    field
}

/// Average-pools `field / d_max` by each scale. Levels are ordered from the
/// largest scale (coarsest) to the smallest.
pub fn build_condition_pyramid(field: &DistanceField, scales: &[usize]) -> Result<ConditionPyramid> {
    let (h, w) = (field.height, field.width);
    let mut sorted = scales.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.dedup();
    if sorted.is_empty() {
        return Err(Error::invalid("condition pyramid needs at least one scale"));
    }
    let d_max = field.d_max();
    let base: Vec<f64> = field.values.iter().map(|v| (v / d_max).clamp(0.0, 1.0)).collect();
    let mut levels = Vec::with_capacity(sorted.len());
    for s in sorted {
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::invalid(format!("scale {s} does not divide the {h}x{w} field")));
        }
        let (lh, lw) = (h / s, w / s);
        let norm = 1.0 / (s * s) as f64;
        let mut values = vec![0.0; lh * lw];
        for y in 0..lh {
            for x in 0..lw {
                let mut acc = 0.0;
                for dy in 0..s {
                    for dx in 0..s {
                        acc += base[(y * s + dy) * w + x * s + dx];
                    }
                }
                values[y * lw + x] = acc * norm;
            }
        }
        levels.push(PyramidLevel { scale: s, height: lh, width: lw, values });
    }
    Ok(ConditionPyramid { levels })
}

/// Line map of a photo, its distance field and condition pyramid.
pub fn condition_from_photo(
    photo: &RgbImage,
    detector: &dyn EdgeDetector,
    tau: f64,
    l_min: usize,
    scales: &[usize],
) -> Result<(LineMap, DistanceField, ConditionPyramid)> {
    let lines = extract_linemap(&detector.detect(photo)?, tau, l_min)?;
    let field = distance_field(&lines);
    let pyramid = build_condition_pyramid(&field, scales)?;
    Ok((lines, field, pyramid))
}

/// Deterministic shuffled partition of `0..n`. The train side gets
/// `round(n·ratio)` items, kept within `1..n` so neither side is empty.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 items to split, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive(seed, Stream::Dataset, n as u64));
    let n_train = (libm::round(n as f64 * ratio) as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> LineMap {
        let h = rows.len();
        let w = rows[0].len();
        LineMap::new(h, w, rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect()).unwrap()
    }

    fn prob(lines: &LineMap) -> ProbEdgeMap {
        ProbEdgeMap::new(lines.height, lines.width, lines.mask.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect()).unwrap()
    }

    #[test]
    fn constant_photo_has_no_edges() {
        let p = detect_edges(&RgbImage::filled(20, 20, [0.3, 0.6, 0.1])).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_peaks_at_step() {
        let mut img = RgbImage::filled(16, 20, [0.0; 3]);
        for y in 0..16 {
            for x in 10..20 {
                img.set_pixel(y, x, [1.0; 3]);
            }
        }
        let p = detect_edges(&img).unwrap();
        for y in 0..16 {
            let row = &p.values[y * 20..(y + 1) * 20];
            assert!((row[9] - 1.0).abs() < 1e-12 && (row[10] - 1.0).abs() < 1e-12);
            assert!(row[..8].iter().chain(&row[12..]).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn small_and_empty_photos_rejected() {
        assert!(detect_edges(&RgbImage::filled(0, 0, [0.0; 3])).is_err());
        assert!(detect_edges(&RgbImage::filled(8, 32, [0.0; 3])).is_err());
    }

    #[test]
    fn threshold_kills_everything() {
        let p = ProbEdgeMap::new(4, 4, vec![0.2; 16]).unwrap();
        assert_eq!(extract_linemap(&p, 0.5, 1).unwrap().count(), 0);
    }

    #[test]
    fn two_pixel_bar_thins_to_full_length_line() {
        let bar = grid(&["......", "......", ".####.", ".####.", "......", "......"]);
        let out = extract_linemap(&prob(&bar), 0.5, 1).unwrap();
        // One row of four pixels, spanning the bar's full length.
        assert_eq!(out.count(), 4);
        let rows: Vec<usize> = (0..6).filter(|&y| (0..6).any(|x| out.get(y, x))).collect();
        assert_eq!(rows.len(), 1);
        assert!(rows[0] == 2 || rows[0] == 3);
        assert!((1..5).all(|x| out.get(rows[0], x)));

        let vbar = grid(&["......", "..##..", "..##..", "..##..", "..##..", "......"]);
        let out = extract_linemap(&prob(&vbar), 0.5, 1).unwrap();
        assert_eq!(out.count(), 4);
        let cols: Vec<usize> = (0..6).filter(|&x| (0..6).any(|y| out.get(y, x))).collect();
        assert_eq!(cols.len(), 1);
        assert!((1..5).all(|y| out.get(y, cols[0])));
    }

    #[test]
    fn short_fragment_removed() {
        let frag = grid(&["......", "..##..", "..##..", "......"]);
        let out = extract_linemap(&prob(&frag), 0.5, 5).unwrap();
        assert_eq!(out.count(), 0);
    }

    #[test]
    fn distance_examples() {
        let mut l = LineMap::empty(6, 6);
        l.set(0, 0, true);
        let d = distance_field(&l);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(3, 4), 5.0);
        let e = distance_field(&LineMap::empty(3, 4));
        assert!(e.values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn pyramid_shapes_and_identity() {
        let mut l = LineMap::empty(16, 16);
        l.set(5, 7, true);
        let f = distance_field(&l);
        let p = build_condition_pyramid(&f, &[1, 2, 4, 8]).unwrap();
        let sides: Vec<usize> = p.levels.iter().map(|l| l.height).collect();
        assert_eq!(sides, vec![2, 4, 8, 16]);
        let fine = p.level(1).unwrap();
        for (a, b) in fine.values.iter().zip(&f.values) {
            assert_eq!(*a, b / f.d_max());
        }
        assert!(build_condition_pyramid(&f, &[3]).is_err());
    }

    #[test]
    fn constant_field_pools_to_constant() {
        let f = DistanceField { height: 8, width: 8, values: vec![2.5; 64] };
        let p = build_condition_pyramid(&f, &[4]).unwrap();
        let expect = 2.5 / f.d_max();
        assert!(p.levels[0].values.iter().all(|v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn split_partition() {
        let (tr, te) = split_indices(30000, 0.8, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (24000, 6000));
        let (tr2, _) = split_indices(30000, 0.8, 7).unwrap();
        assert_eq!(tr, tr2);
        let mut all: Vec<usize> = tr.iter().chain(&te).cloned().collect();
        all.sort();
        assert_eq!(all, (0..30000).collect::<Vec<_>>());
        assert!(split_indices(1, 0.5, 0).is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
    }
}
