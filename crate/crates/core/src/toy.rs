//! Procedural shapes for desk-scale experiments.
//!
//! Each sample is a filled, class-coloured circle, square or triangle on a
//! light background, with a smaller concentric copy drawn in a lighter shade.
//! The outline is a strong edge and the inner copy a weak one, so raising
//! `tau` drops the inner detail from the line map while the outline stays.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::image::RgbImage;
use crate::linemap::{build_condition_pyramid, condition_from_photo, ConditionPyramid, DistanceField, GradientDetector, LineMap};
use crate::rng::{derive, Stream};

pub const N_CLASSES: usize = 3;
const BACKGROUND: [f64; 3] = [0.94, 0.93, 0.90];
const INNER_SCALE: f64 = 0.5;
const INNER_LIGHTEN: f64 = 0.22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; N_CLASSES] = [ShapeClass::Circle, ShapeClass::Square, ShapeClass::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    fn base_color(self) -> [f64; 3] {
        match self {
            ShapeClass::Circle => [0.80, 0.16, 0.14],
            ShapeClass::Square => [0.12, 0.55, 0.20],
            ShapeClass::Triangle => [0.18, 0.24, 0.82],
        }
    }

    /// Whether the offset `(dy, dx)` from the centre lies inside a shape of
    /// circumradius `r`.
    fn contains(self, dy: f64, dx: f64, r: f64) -> bool {
        match self {
            ShapeClass::Circle => dy * dy + dx * dx <= r * r,
            ShapeClass::Square => dy.abs() <= 0.8 * r && dx.abs() <= 0.8 * r,
            ShapeClass::Triangle => {
                // Apex up; base at dy = r/2, apex at dy = -r.
                let t = (dy + r) / (1.5 * r);
                (0.0..=1.0).contains(&t) && dx.abs() <= t * r * 0.866_025_403_784_438_6
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyShape {
    pub class: ShapeClass,
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
    pub color: [f64; 3],
}

impl ToyShape {
    pub fn random<R: Rng + ?Sized>(side: usize, rng: &mut R) -> ToyShape {
        let class = ShapeClass::ALL[rng.random_range(0..N_CLASSES)];
        let s = side as f64;
        let radius = s * rng.random_range(0.26..0.38);
        let margin = radius + 1.0;
        let cy = rng.random_range(margin..(s - margin).max(margin + 1e-9));
        let cx = rng.random_range(margin..(s - margin).max(margin + 1e-9));
        let mut color = class.base_color();
        for c in &mut color {
            *c = (*c + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
        ToyShape { class, cy, cx, radius, color }
    }

    pub fn render(&self, side: usize) -> RgbImage {
        let mut img = RgbImage::filled(side, side, BACKGROUND);
        let inner = self.color.map(|c| (c + INNER_LIGHTEN).min(1.0));
        for y in 0..side {
            for x in 0..side {
                let (dy, dx) = (y as f64 + 0.5 - self.cy, x as f64 + 0.5 - self.cx);
                if self.class.contains(dy, dx, INNER_SCALE * self.radius) {
                    img.set_pixel(y, x, inner);
                } else if self.class.contains(dy, dx, self.radius) {
                    img.set_pixel(y, x, self.color);
                }
            }
        }
        img
    }
}

#[derive(Debug, Clone)]
pub struct ToySample {
    pub shape: ToyShape,
    pub photo: RgbImage,
    pub tau: f64,
    pub lines: LineMap,
    pub field: DistanceField,
    pub pyramid: ConditionPyramid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub side: usize,
    pub count: usize,
    /// Each sample draws its threshold uniformly from `[lo, hi]`.
    pub tau: (f64, f64),
    pub l_min: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { side: 32, count: 64, tau: (0.3, 0.3), l_min: 4, seed: 0 }
    }
}

/// Condition for `photo` at threshold `tau`.
pub fn toy_condition(photo: &RgbImage, tau: f64, l_min: usize, scales: &[usize]) -> Result<(LineMap, DistanceField, ConditionPyramid)> {
    condition_from_photo(photo, &GradientDetector, tau, l_min, scales)
}

pub fn toy_dataset(config: &ToyConfig, scales: &[usize]) -> Result<Vec<ToySample>> {
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let mut rng = derive(config.seed, Stream::Toy, i as u64);
        let shape = ToyShape::random(config.side, &mut rng);
        let (lo, hi) = config.tau;
        let tau = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let photo = shape.render(config.side);
        let (lines, field, pyramid) = toy_condition(&photo, tau, config.l_min, scales)?;
        out.push(ToySample { shape, photo, tau, lines, field, pyramid });
    }
    Ok(out)
}

/// Rebuilds a sample's condition at another threshold.
pub fn with_tau(sample: &ToySample, tau: f64, l_min: usize, scales: &[usize]) -> Result<ToySample> {
    let (lines, field, pyramid) = toy_condition(&sample.photo, tau, l_min, scales)?;
    Ok(ToySample { tau, lines, field, pyramid, ..sample.clone() })
}

/// Condition pyramid with no lines at all.
pub fn blank_pyramid(side: usize, scales: &[usize]) -> Result<ConditionPyramid> {
    build_condition_pyramid(&crate::linemap::distance_field(&LineMap::empty(side, side)), scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linemap::threshold;

    #[test]
    fn deterministic_dataset() {
        let c = ToyConfig { count: 4, ..Default::default() };
        let a = toy_dataset(&c, &[1, 2]).unwrap();
        let b = toy_dataset(&c, &[1, 2]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.photo, y.photo);
            assert_eq!(x.pyramid, y.pyramid);
        }
    }

    #[test]
    fn outline_survives_high_tau_and_detail_does_not() {
        let c = ToyConfig { count: 12, ..Default::default() };
        for s in toy_dataset(&c, &[1]).unwrap() {
            let low = toy_condition(&s.photo, 0.2, 4, &[1]).unwrap().0;
            let high = toy_condition(&s.photo, 0.6, 4, &[1]).unwrap().0;
            assert!(high.count() > 10, "outline lost for {:?}", s.shape.class);
            assert!(low.count() > high.count(), "{:?}: {} vs {}", s.shape.class, low.count(), high.count());
        }
    }

    #[test]
    fn thresholds_nest() {
        let c = ToyConfig { count: 3, ..Default::default() };
        for s in toy_dataset(&c, &[1]).unwrap() {
            let p = crate::linemap::detect_edges(&s.photo).unwrap();
            let a = threshold(&p, 0.2);
            let b = threshold(&p, 0.6);
            assert!(b.mask.iter().zip(&a.mask).all(|(&hi, &lo)| !hi || lo));
        }
    }
}
