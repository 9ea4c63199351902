//! Model code against independent reference implementations.

use csagan_core::csam::Csam;
use csagan_core::layers::{ParamSet, Trainable};
use csagan_core::linemap::{distance_field, LineMap};
use csagan_core::metrics::{frechet_distance, inception_score, kid, ClassProbSet, FeatureSet};
use csagan_core::rng::{derive, Stream};
use csagan_core::spectral::{spectral_normalize_with, SpectralState};
use csagan_core::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn rng(key: u64) -> ChaCha8Rng {
    derive(2024, Stream::Test, key)
}

fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `W · v` for a 1×1 kernel stored `[out, in, 1, 1]`.
fn project(w: &[f64], out: usize, v: &[f64]) -> Vec<f64> {
    let cin = v.len();
    (0..out).map(|o| (0..cin).map(|c| w[o * cin + c] * v[c]).sum()).collect()
}

#[test]
fn attention_matches_double_loop() {
    let mut r = rng(1);
    for (c, h, w) in [(4, 4, 4), (8, 3, 5), (16, 16, 16), (2, 1, 7)] {
        let mut ps = ParamSet::new();
        let m = Csam::new(&mut ps, "a", c, true, &mut r).unwrap();
        ps.set(m.gamma, vec![0.8]).unwrap();
        let wts = ps.materialize(Trainable::None, false).unwrap();
        let a = random_tensor(&[c, h, w], &mut r);
        let x = Tensor::new(&[1, h, w], (0..h * w).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let (out, map) = m.forward_with_map(&wts, &a, &x).unwrap();

        let n = h * w;
        let col = |i: usize| -> Vec<f64> {
            let mut v: Vec<f64> = (0..c).map(|k| a.data()[k * n + i]).collect();
            v.push(x.data()[i]);
            v
        };
        let kc = m.key_channels;
        let f: Vec<Vec<f64>> = (0..n).map(|i| project(wts.get(m.w_f).data(), kc, &col(i))).collect();
        let g: Vec<Vec<f64>> = (0..n).map(|i| project(wts.get(m.w_g).data(), kc, &col(i))).collect();
        let hv: Vec<Vec<f64>> = (0..n).map(|i| project(wts.get(m.w_h).data(), c, &col(i))).collect();
        for j in 0..n {
            let s: Vec<f64> = (0..n).map(|i| f[i].iter().zip(&g[j]).map(|(p, q)| p * q).sum()).collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
            let row_sum: f64 = map.row(j).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
            for i in 0..n {
                let b = (s[i] - mx).exp() / z;
                assert!((map.get(j, i) - b).abs() < 1e-10, "B[{j}][{i}]");
            }
            for k in 0..c {
                let rj: f64 = (0..n).map(|i| map.get(j, i) * hv[i][k]).sum();
                let want = 0.8 * rj + a.data()[k * n + j];
                assert!((out.data()[k * n + j] - want).abs() < 1e-10);
            }
        }
    }
}

fn random_lines(side: usize, density: f64, r: &mut ChaCha8Rng) -> LineMap {
    let mask = (0..side * side).map(|_| r.random_bool(density)).collect();
    LineMap::new(side, side, mask).unwrap()
}

#[test]
fn distance_field_matches_brute_force() {
    let mut r = rng(2);
    for (side, density) in [(17, 0.01), (32, 0.002), (40, 0.1), (23, 0.5)] {
        let lines = random_lines(side, density, &mut r);
        if lines.count() == 0 {
            continue;
        }
        let on: Vec<(f64, f64)> =
            (0..side * side).filter(|&i| lines.mask[i]).map(|i| ((i / side) as f64, (i % side) as f64)).collect();
        let field = distance_field(&lines);
        for y in 0..side {
            for x in 0..side {
                let best = on
                    .iter()
                    .map(|&(py, px)| ((py - y as f64).powi(2) + (px - x as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!((field.get(y, x) - best).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn spectral_estimate_matches_svd() {
    let mut r = rng(3);
    for _ in 0..20 {
        let (rows, cols) = (r.random_range(1..=24), r.random_range(1..=24));
        let w = random_tensor(&[rows, cols], &mut r);
        let state = SpectralState::random(rows, &mut r).unwrap();
        let n = spectral_normalize_with(&w, &state, 200).unwrap();
        let sigma = DMatrix::from_row_slice(rows, cols, w.data()).singular_values().max();
        assert!((n.sigma - sigma).abs() / sigma < 1e-3, "{} vs {sigma}", n.sigma);
        let after = DMatrix::from_row_slice(rows, cols, n.weight.data()).singular_values().max();
        assert!((after - 1.0).abs() < 1e-3);
    }
}

fn nalgebra_fid(a: &FeatureSet, b: &FeatureSet) -> f64 {
    let stats = |f: &FeatureSet| {
        let x = DMatrix::from_row_slice(f.m, f.d, &f.features);
        let mu = x.row_mean();
        let centered = DMatrix::from_fn(f.m, f.d, |i, j| x[(i, j)] - mu[j]);
        let cov = centered.transpose() * &centered / (f.m as f64 - 1.0);
        (mu, cov)
    };
    let (ma, ca) = stats(a);
    let (mb, cb) = stats(b);
    let sqrt_psd = |m: &DMatrix<f64>| {
        let e = SymmetricEigen::new(m.clone());
        let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
        &e.eigenvectors * d * e.eigenvectors.transpose()
    };
    let sb = sqrt_psd(&cb);
    let inner = &sb * &ca * &sb;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    ((ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * tr_sqrt).max(0.0)
}

fn random_features(m: usize, d: usize, shift: f64, r: &mut ChaCha8Rng) -> FeatureSet {
    FeatureSet::new(m, d, (0..m * d).map(|_| r.random_range(-1.0..1.0) + shift).collect(), "test").unwrap()
}

#[test]
fn frechet_distance_matches_nalgebra() {
    let mut r = rng(4);
    for (m, d) in [(12, 3), (40, 8), (9, 12)] {
        let a = random_features(m, d, 0.0, &mut r);
        let b = random_features(m + 5, d, 0.3, &mut r);
        let ours = frechet_distance(&a, &b).unwrap();
        let theirs = nalgebra_fid(&a, &b);
        assert!((ours - theirs).abs() < 1e-8 * theirs.max(1.0), "{ours} vs {theirs}");
    }
}

#[test]
fn kid_matches_triple_loop() {
    let mut r = rng(5);
    for (ma, mb, d) in [(5, 7, 3), (20, 20, 6), (2, 2, 1)] {
        let a = random_features(ma, d, 0.0, &mut r);
        let b = random_features(mb, d, 0.2, &mut r);
        let k = |x: &[f64], y: &[f64]| (x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / d as f64 + 1.0).powi(3);
        let mut xx = 0.0;
        for i in 0..ma {
            for j in 0..ma {
                if i != j {
                    xx += k(a.row(i), a.row(j));
                }
            }
        }
        let mut yy = 0.0;
        for i in 0..mb {
            for j in 0..mb {
                if i != j {
                    yy += k(b.row(i), b.row(j));
                }
            }
        }
        let mut xy = 0.0;
        for i in 0..ma {
            for j in 0..mb {
                xy += k(a.row(i), b.row(j));
            }
        }
        let want = xx / (ma * (ma - 1)) as f64 + yy / (mb * (mb - 1)) as f64 - 2.0 * xy / (ma * mb) as f64;
        assert!((kid(&a, &b).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn inception_score_matches_direct_formula() {
    let mut r = rng(6);
    let (m, k) = (30, 4);
    let mut probs = Vec::new();
    for _ in 0..m {
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|v| v / s));
    }
    let p = ClassProbSet::new(m, k, probs).unwrap();
    let (mean, std) = inception_score(&p, 1).unwrap();
    assert_eq!(std, 0.0);
    let marginal: Vec<f64> = (0..k).map(|c| (0..m).map(|i| p.row(i)[c]).sum::<f64>() / m as f64).collect();
    let kl: f64 = (0..m)
        .map(|i| p.row(i).iter().zip(&marginal).map(|(q, mg)| q * (q / mg).ln()).sum::<f64>())
        .sum::<f64>()
        / m as f64;
    assert!((mean - kl.exp()).abs() < 1e-12);
}
