//! Inception score, Fréchet distance and kernel distance over pluggable
//! feature providers.
//!
//! KID is reported as the raw unbiased MMD² estimate (no ×100 scaling).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::adam::AdamState;
use crate::autograd::backward;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::linalg::{psd_sqrt, symmetric_eigen};
use crate::rng::{derive, Stream};
use crate::tensor::Tensor;
use crate::toy::{ToyShape, N_CLASSES};

const SIMPLEX_TOL: f64 = 1e-9;

/// `m × d` row-major features from one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub m: usize,
    pub d: usize,
    pub features: Vec<f64>,
    pub provider_id: String,
}

impl FeatureSet {
    pub fn new(m: usize, d: usize, features: Vec<f64>, provider_id: impl Into<String>) -> Result<Self> {
        if features.len() != m * d || d == 0 {
            return Err(Error::shape("features", format!("{m}x{d} needs {} values, got {}", m * d, features.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(FeatureSet { m, d, features, provider_id: provider_id.into() })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }
}

/// `m × k` class probabilities, rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbSet {
    pub m: usize,
    pub k: usize,
    pub probs: Vec<f64>,
}

impl ClassProbSet {
    pub fn new(m: usize, k: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != m * k || k == 0 {
            return Err(Error::shape("class probabilities", format!("{m}x{k} needs {} values, got {}", m * k, probs.len())));
        }
        for (i, row) in probs.chunks(k).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!("row {i} is not a probability vector (sum {s})")));
            }
        }
        Ok(ClassProbSet { m, k, probs })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }
}

fn check_pair(a: &FeatureSet, b: &FeatureSet, op: &'static str) -> Result<()> {
    if a.d != b.d {
        return Err(Error::shape(op, format!("feature dimensions {} and {} differ", a.d, b.d)));
    }
    if a.m < 2 || b.m < 2 {
        return Err(Error::invalid(format!("{op} needs at least 2 samples per set, got {} and {}", a.m, b.m)));
    }
    if a.features.iter().chain(&b.features).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(op));
    }
    Ok(())
}

/// Sample mean and unbiased covariance.
pub fn mean_cov(f: &FeatureSet) -> (Vec<f64>, Vec<f64>) {
    let (m, d) = (f.m, f.d);
    let mut mu = vec![0.0; d];
    for i in 0..m {
        mu.iter_mut().zip(f.row(i)).for_each(|(a, b)| *a += b);
    }
    mu.iter_mut().for_each(|v| *v /= m as f64);
    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let x: Vec<f64> = f.row(i).iter().zip(&mu).map(|(a, b)| a - b).collect();
        for r in 0..d {
            for c in r..d {
                cov[r * d + c] += x[r] * x[c];
            }
        }
    }
    let norm = 1.0 / (m as f64 - 1.0);
    for r in 0..d {
        for c in r..d {
            let v = cov[r * d + c] * norm;
            cov[r * d + c] = v;
            cov[c * d + r] = v;
        }
    }
    (mu, cov)
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, clamped at zero.
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_pair(a, b, "frechet_distance")?;
    let d = a.d;
    let (mu_a, cov_a) = mean_cov(a);
    let (mu_b, cov_b) = mean_cov(b);
    let shift: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    let tr = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();
    let sa = psd_sqrt(&cov_a, d)?;
    let inner = crate::linalg::matmul(&crate::linalg::matmul(&sa, &cov_b, d, d, d), &sa, d, d, d);
    let eig = symmetric_eigen(&inner, d)?;
    let tr_sqrt: f64 = eig.values.iter().map(|&l| libm::sqrt(l.max(0.0))).sum();
    Ok((shift + tr(&cov_a) + tr(&cov_b) - 2.0 * tr_sqrt).max(0.0))
}

/// `(xᵀy / d + 1)³`.
pub fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len().max(1) as f64;
    let t = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d + 1.0;
    t * t * t
}

/// Unbiased MMD² with the cubic polynomial kernel.
pub fn kid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_pair(a, b, "kid")?;
    let within = |f: &FeatureSet| {
        let mut s = 0.0;
        for i in 0..f.m {
            for j in i + 1..f.m {
                s += polynomial_kernel(f.row(i), f.row(j));
            }
        }
        2.0 * s / (f.m * (f.m - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..a.m {
        for j in 0..b.m {
            cross += polynomial_kernel(a.row(i), b.row(j));
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (a.m * b.m) as f64)
}

/// Mean and population standard deviation over `n_splits` contiguous splits
/// of `exp(E_x KL(p(·|x) ‖ p̄))`.
pub fn inception_score(p: &ClassProbSet, n_splits: usize) -> Result<(f64, f64)> {
    if n_splits == 0 || n_splits > p.m {
        return Err(Error::invalid(format!("n_splits must lie in 1..={}, got {n_splits}", p.m)));
    }
    let mut scores = Vec::with_capacity(n_splits);
    for s in 0..n_splits {
        let (lo, hi) = (s * p.m / n_splits, (s + 1) * p.m / n_splits);
        let n = (hi - lo) as f64;
        let mut marginal = vec![0.0; p.k];
        for i in lo..hi {
            marginal.iter_mut().zip(p.row(i)).for_each(|(a, b)| *a += b / n);
        }
        let mut kl = 0.0;
        for i in lo..hi {
            for (&q, &m) in p.row(i).iter().zip(&marginal) {
                if q > 0.0 {
                    kl += q * (libm::log(q) - libm::log(m));
                }
            }
        }
        scores.push(libm::exp(kl / n));
    }
    let mean = scores.iter().sum::<f64>() / n_splits as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n_splits as f64;
    Ok((mean, libm::sqrt(var)))
}

/// Source of features and class probabilities for a set of images.
pub trait FeatureProvider {
    fn id(&self) -> String;
    fn features(&self, images: &[RgbImage]) -> Result<FeatureSet>;
    fn class_probs(&self, images: &[RgbImage]) -> Result<ClassProbSet>;
}

/// Box-averages an image onto an `s × s` grid, channels planar, values in
/// `[-1, 1]`.
pub fn pooled_pixels(img: &RgbImage, s: usize) -> Result<Vec<f64>> {
    if img.height < s || img.width < s {
        return Err(Error::invalid(format!("image {}x{} is smaller than the {s}x{s} grid", img.height, img.width)));
    }
    let mut out = vec![0.0; 3 * s * s];
    for gy in 0..s {
        let (y0, y1) = (gy * img.height / s, (gy + 1) * img.height / s);
        for gx in 0..s {
            let (x0, x1) = (gx * img.width / s, (gx + 1) * img.width / s);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.pixel(y, x);
                    for c in 0..3 {
                        out[c * s * s + gy * s + gx] += (2.0 * p[c] - 1.0) / n;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Fixed Gaussian projection of 16×16 pooled pixels. Class probabilities
/// come from a second fixed projection to `classes` logits.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    grid: usize,
    proj: Vec<f64>,
    logits: Vec<f64>,
}

impl RandomProjection {
    pub fn new(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::invalid("random projection needs dim >= 1 and at least 2 classes"));
        }
        let grid = 16;
        let n_in = 3 * grid * grid;
        let mut rng = derive(seed, Stream::Provider, 0);
        let scale = 1.0 / libm::sqrt(n_in as f64);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect() };
        let proj = draw(dim * n_in);
        let logits = draw(classes * n_in);
        Ok(RandomProjection { dim, classes, seed, grid, proj, logits })
    }

    fn apply(&self, w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
        (0..rows).map(|r| w[r * x.len()..(r + 1) * x.len()].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

impl FeatureProvider for RandomProjection {
    fn id(&self) -> String {
        format!("random-projection-{}-{}", self.dim, self.seed)
    }

    fn features(&self, images: &[RgbImage]) -> Result<FeatureSet> {
        let mut out = Vec::with_capacity(images.len() * self.dim);
        for img in images {
            out.extend(self.apply(&self.proj, self.dim, &pooled_pixels(img, self.grid)?));
        }
        FeatureSet::new(images.len(), self.dim, out, self.id())
    }

    fn class_probs(&self, images: &[RgbImage]) -> Result<ClassProbSet> {
        let mut out = Vec::with_capacity(images.len() * self.classes);
        for img in images {
            out.extend(softmax(&self.apply(&self.logits, self.classes, &pooled_pixels(img, self.grid)?)));
        }
        ClassProbSet::new(images.len(), self.classes, out)
    }
}

/// One-hidden-layer classifier of the toy shape classes on 8×8 pooled
/// pixels. Features are the hidden activations.
#[derive(Debug, Clone)]
pub struct ToyClassifier {
    pub hidden: usize,
    pub seed: u64,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

const CLASSIFIER_GRID: usize = 8;

impl ToyClassifier {
    /// Trains on `n_train` freshly drawn `side × side` toy shapes.
    pub fn train(side: usize, n_train: usize, epochs: usize, seed: u64) -> Result<Self> {
        let hidden = 32;
        let n_in = 3 * CLASSIFIER_GRID * CLASSIFIER_GRID;
        let mut rng = derive(seed, Stream::Provider, 1);
        let mut init = |r: usize, c: usize| -> Result<Tensor> {
            let s = libm::sqrt(2.0 / r as f64);
            Tensor::param(&[r, c], (0..r * c).map(|_| s * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
        };
        let mut params = [init(n_in, hidden)?, Tensor::param(&[1, hidden], vec![0.0; hidden])?, init(hidden, N_CLASSES)?, Tensor::param(&[1, N_CLASSES], vec![0.0; N_CLASSES])?];
        let mut adam: Vec<AdamState> = params.iter().map(|p| AdamState::with_betas(p.len(), 0.9, 0.999)).collect();

        let mut xs = Vec::with_capacity(n_train * n_in);
        let mut ys = Vec::with_capacity(n_train);
        for i in 0..n_train {
            let mut r = derive(seed, Stream::Provider, 1000 + i as u64);
            let shape = ToyShape::random(side, &mut r);
            xs.extend(pooled_pixels(&shape.render(side), CLASSIFIER_GRID)?);
            ys.push(shape.class.index());
        }
        let batch = 32;
        for _ in 0..epochs {
            for start in (0..n_train).step_by(batch) {
                let end = (start + batch).min(n_train);
                let b = end - start;
                let x = Tensor::new(&[b, n_in], xs[start * n_in..end * n_in].to_vec())?;
                let mut onehot = vec![0.0; b * N_CLASSES];
                for (r, &y) in ys[start..end].iter().enumerate() {
                    onehot[r * N_CLASSES + y] = 1.0;
                }
                let p = Self::forward(&params, &x)?.1;
                let loss = p.log_floor(1e-12).mul(&Tensor::new(&[b, N_CLASSES], onehot)?)?.sum().scale(-1.0 / b as f64);
                let g = backward(&loss)?;
                for (param, state) in params.iter_mut().zip(adam.iter_mut()) {
                    let grad = g.get(param).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; param.len()]);
                    *param = Tensor::param(param.shape(), state.update(param.data(), &grad, 3e-3)?)?;
                }
            }
        }
        let [w1, b1, w2, b2] = params;
        Ok(ToyClassifier { hidden, seed, w1, b1, w2, b2 })
    }

    /// Hidden activations `[b, hidden]` and class probabilities `[b, K]`.
    fn forward(p: &[Tensor; 4], x: &Tensor) -> Result<(Tensor, Tensor)> {
        let b = x.shape()[0];
        let ones = Tensor::full(&[b, 1], 1.0);
        let h = x.matmul(&p[0])?.add(&ones.matmul(&p[1])?)?.relu();
        let logits = h.matmul(&p[2])?.add(&ones.matmul(&p[3])?)?;
        Ok((h, logits.softmax_rows()?))
    }

    fn run(&self, images: &[RgbImage]) -> Result<(Tensor, Tensor)> {
        let n_in = 3 * CLASSIFIER_GRID * CLASSIFIER_GRID;
        let mut xs = Vec::with_capacity(images.len() * n_in);
        for img in images {
            xs.extend(pooled_pixels(img, CLASSIFIER_GRID)?);
        }
        let params = [self.w1.detach(), self.b1.detach(), self.w2.detach(), self.b2.detach()];
        Self::forward(&params, &Tensor::new(&[images.len(), n_in], xs)?)
    }

    /// Fraction of `images` whose most probable class equals `labels`.
    pub fn accuracy(&self, images: &[RgbImage], labels: &[usize]) -> Result<f64> {
        let p = self.class_probs(images)?;
        let hits = (0..p.m)
            .filter(|&i| {
                let row = p.row(i);
                let best = (0..p.k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                best == labels[i]
            })
            .count();
        Ok(hits as f64 / p.m.max(1) as f64)
    }
}

impl FeatureProvider for ToyClassifier {
    fn id(&self) -> String {
        format!("toy-classifier-{}-{}", self.hidden, self.seed)
    }

    fn features(&self, images: &[RgbImage]) -> Result<FeatureSet> {
        let h = self.run(images)?.0;
        FeatureSet::new(images.len(), self.hidden, h.to_vec(), self.id())
    }

    fn class_probs(&self, images: &[RgbImage]) -> Result<ClassProbSet> {
        let p = self.run(images)?.1;
        let mut probs = p.to_vec();
        // Renormalize away last-bit rounding so rows pass the simplex check.
        for row in probs.chunks_mut(N_CLASSES) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        ClassProbSet::new(images.len(), N_CLASSES, probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f64]]) -> FeatureSet {
        let d = rows[0].len();
        FeatureSet::new(rows.len(), d, rows.iter().flat_map(|r| r.iter().cloned()).collect(), "t").unwrap()
    }

    #[test]
    fn fid_identical_is_zero() {
        let a = set(&[&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.2], &[-0.7, 0.9]]);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn fid_mean_shift() {
        let a = set(&[&[-1.0], &[1.0]]);
        let b = set(&[&[0.0], &[2.0]]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_at_origin() {
        assert_eq!(polynomial_kernel(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn is_limits() {
        let p = ClassProbSet::new(4, 2, vec![0.5; 8]).unwrap();
        let (m, s) = inception_score(&p, 2).unwrap();
        assert!((m - 1.0).abs() < 1e-12 && s.abs() < 1e-12);
        let k = 4;
        let eps = 1e-9;
        let mut rows = vec![eps; k * k];
        for i in 0..k {
            rows[i * k + i] = 1.0 - (k as f64 - 1.0) * eps;
        }
        let (m, _) = inception_score(&ClassProbSet::new(k, k, rows).unwrap(), 1).unwrap();
        assert!((m - k as f64).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ClassProbSet::new(1, 2, vec![0.5, 0.6]).is_err());
        let a = set(&[&[1.0], &[2.0]]);
        let b = set(&[&[1.0, 0.0], &[2.0, 0.0]]);
        assert!(frechet_distance(&a, &b).is_err());
        assert!(kid(&a, &set(&[&[1.0]])).is_err());
        assert!(inception_score(&ClassProbSet::new(1, 2, vec![0.5, 0.5]).unwrap(), 2).is_err());
    }

    #[test]
    fn random_projection_shapes() {
        let rp = RandomProjection::new(6, 5, 1).unwrap();
        let imgs = [RgbImage::filled(32, 32, [0.2, 0.4, 0.9]), RgbImage::filled(32, 32, [0.9, 0.1, 0.3])];
        assert_eq!(rp.features(&imgs).unwrap().d, 6);
        assert_eq!(rp.class_probs(&imgs).unwrap().k, 5);
    }

    #[test]
    fn toy_classifier_learns_classes() {
        let clf = ToyClassifier::train(32, 480, 12, 5).unwrap();
        let mut imgs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..90 {
            let s = ToyShape::random(32, &mut derive(77, Stream::Test, i));
            imgs.push(s.render(32));
            labels.push(s.class.index());
        }
        let acc = clf.accuracy(&imgs, &labels).unwrap();
        assert!(acc > 0.9, "accuracy {acc}");
        assert_eq!(clf.features(&imgs).unwrap().d, 32);
    }
}
