//! Central finite-difference gradient checks.
//!
//! [`check`] compares the reverse-mode gradient of a scalar function with
//! `(f(x + h) - f(x - h)) / 2h` coordinate by coordinate. The error for one
//! coordinate is `|a - n| / max(|a|, |n|, REL_FLOOR)`; the floor keeps
//! coordinates whose true gradient is (nearly) zero from turning rounding
//! noise into huge relative errors.
//!
//! [`suite`] runs every differentiable op, the attention module, one MRU, one
//! discriminator subnetwork, spectral normalization and every loss. It forces
//! 64-bit precision for its duration.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::backward;
use crate::csam::Csam;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Activation, ConditionStack, ForwardOptions, Generator, GeneratorConfig, Mru};
use crate::layers::{ParamId, ParamSet, Weights};
use crate::loss::{
    adversarial_loss, discriminator_loss, feature_matching_loss, generator_adversarial_loss, l1_loss, total_objective,
    LossWeights,
};
use crate::precision::{precision, set_precision, Precision};
use crate::rng::{derive, Stream};
use crate::spectral::{spectral_normalize_with, SpectralState};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-3;
/// Tolerance for ops, modules and losses.
pub const TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end generator check.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Number of coordinates compared.
    pub coords: usize,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks `f` at `inputs`. Inputs with more than `max_coords` entries are
/// checked on a random subset of that size.
pub fn check<F>(name: &str, inputs: &[Tensor], max_coords: Option<usize>, rng: &mut ChaCha8Rng, f: F) -> Result<CheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::as_param).collect();
    let out = f(&leaves)?;
    if out.len() != 1 {
        return Err(Error::shape("gradcheck", format!("{name} must produce a scalar, got {:?}", out.shape())));
    }
    let grads = backward(&out)?;
    let mut worst = 0.0f64;
    let mut coords = 0;
    for (k, leaf) in leaves.iter().enumerate() {
        let n = leaf.len();
        let idx: Vec<usize> = match max_coords {
            Some(m) if n > m => sample(rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for i in idx {
            let analytic = grads.get(leaf).map_or(0.0, |g| g[i]);
            let eval = |delta: f64| -> Result<f64> {
                let mut data = leaf.to_vec();
                data[i] += delta;
                let mut moved = leaves.clone();
                moved[k] = Tensor::new(leaf.shape(), data)?;
                Ok(f(&moved)?.item())
            };
            let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
            let e = relative_error(analytic, numeric);
            if !e.is_finite() {
                return Err(Error::NonFinite("gradcheck"));
            }
            worst = worst.max(e);
            coords += 1;
        }
    }
    Ok(CheckReport { name: name.into(), max_rel_error: worst, coords, tolerance: TOLERANCE })
}

/// Uniform values in `[lo, hi)` with a random sign when `signed`.
pub fn uniform(shape: &[usize], lo: f64, hi: f64, signed: bool, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if signed && rng.random_bool(0.5) {
                -v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, 0.05, 1.0, true, rng)
}

/// Scalarizes `t` as `Σ t ⊙ r` for a fixed random `r`.
fn project(t: &Tensor, r: &Tensor) -> Result<Tensor> {
    Ok(t.mul(r)?.sum())
}

/// Per-pass weights built from `set`, with the listed parameters replaced.
/// Spectrally normalized parameters reuse their stored `u` without refining.
pub fn weights_with(set: &ParamSet, replace: &[(ParamId, Tensor)]) -> Result<Weights> {
    let mut effective = Vec::with_capacity(set.len());
    let mut leaves = Vec::with_capacity(set.len());
    for (i, p) in set.params.iter().enumerate() {
        let leaf = match replace.iter().find(|(id, _)| id.0 == i) {
            Some((_, t)) => t.clone(),
            None => p.value.detach(),
        };
        let eff = match p.spectral {
            Some(si) => spectral_normalize_with(&leaf, &set.spectral[si], 0)?.weight,
            None => leaf.clone(),
        };
        effective.push(eff);
        leaves.push(leaf);
    }
    Ok(Weights { effective, leaves })
}

/// Gives every parameter of `set` small random values so zero biases and
/// `γ = 0` do not hide terms.
fn jitter(set: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<()> {
    for i in 0..set.len() {
        let v: Vec<f64> = set.params[i].value.data().iter().map(|x| x + rng.random_range(-0.3..0.3)).collect();
        set.set(ParamId(i), v)?;
    }
    Ok(())
}

fn op_checks(rng: &mut ChaCha8Rng, out: &mut Vec<CheckReport>) -> Result<()> {
    let shape = [2, 3, 4];
    let r = normal(&shape, rng);
    let pair = |rng: &mut ChaCha8Rng| [normal(&shape, rng), normal(&shape, rng)];
    macro_rules! run {
        ($name:expr, $inputs:expr, $f:expr) => {{
            let inputs = $inputs;
            out.push(check($name, &inputs, None, rng, $f)?);
        }};
    }
    run!("add", pair(rng), |x: &[Tensor]| project(&x[0].add(&x[1])?, &r));
    run!("sub", pair(rng), |x: &[Tensor]| project(&x[0].sub(&x[1])?, &r));
    run!("mul", pair(rng), |x: &[Tensor]| project(&x[0].mul(&x[1])?, &r));
    run!("scale", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].scale(-1.7), &r));
    run!("add_scalar", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].add_scalar(0.4).mul(&x[0])?, &r));
    run!("one_minus", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].one_minus().mul(&x[0])?, &r));
    run!("scale_by", [normal(&shape, rng), normal(&[1], rng)], |x: &[Tensor]| project(&x[0].scale_by(&x[1])?, &r));
    run!("add_scaled", [normal(&shape, rng), normal(&shape, rng), normal(&[1], rng)], |x: &[Tensor]| {
        project(&Tensor::add_scaled(&x[0], &x[1], &x[2])?, &r)
    });
    run!("recip", [uniform(&shape, 0.5, 2.0, true, rng)], |x: &[Tensor]| project(&x[0].recip(), &r));
    for (ta, tb) in [(false, false), (true, false), (false, true)] {
        let a = if ta { [4, 3] } else { [3, 4] };
        let b = if tb { [5, 4] } else { [4, 5] };
        let rm = normal(&[3, 5], rng);
        run!(&format!("matmul(ta={ta},tb={tb})"), [normal(&a, rng), normal(&b, rng)], |x: &[Tensor]| {
            project(&Tensor::matmul_ex(&x[0], &x[1], ta, tb)?, &rm)
        });
    }
    let rt = normal(&[4, 3], rng);
    run!("transpose", [normal(&[3, 4], rng)], |x: &[Tensor]| project(&x[0].transpose()?, &rt));
    let rr = normal(&[6, 4], rng);
    run!("reshape", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].reshape(&[6, 4])?, &rr));
    let rc = normal(&[5, 3, 4], rng);
    run!("concat", [normal(&shape, rng), normal(&[3, 3, 4], rng)], |x: &[Tensor]| {
        project(&Tensor::concat(&[x[0].clone(), x[1].clone()])?, &rc)
    });
    for (cin, cout, side, k, stride, pad) in [(2, 3, 6, 3, 1, 0), (2, 3, 6, 3, 1, 1), (3, 2, 8, 4, 2, 1), (2, 2, 5, 1, 1, 0)] {
        let side_out = (side + 2 * pad - k) / stride + 1;
        let ro = normal(&[cout, side_out, side_out], rng);
        run!(
            &format!("conv2d(k={k},stride={stride},pad={pad})"),
            [normal(&[cin, side, side], rng), normal(&[cout, cin, k, k], rng)],
            |x: &[Tensor]| project(&x[0].conv2d(&x[1], stride, pad)?, &ro)
        );
    }
    run!("add_bias", [normal(&shape, rng), normal(&[2], rng)], |x: &[Tensor]| project(&x[0].add_bias(&x[1])?, &r));
    let ru = normal(&[2, 6, 8], rng);
    run!("upsample", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].upsample(2)?, &ru));
    let rp = normal(&[2, 2, 2], rng);
    run!("avg_pool", [normal(&[2, 4, 4], rng)], |x: &[Tensor]| project(&x[0].avg_pool(2)?, &rp));
    // Kinked ops get inputs bounded away from the kink.
    run!("leaky_relu", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].leaky_relu(0.2), &r));
    run!("relu", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].relu(), &r));
    run!("abs", [normal(&shape, rng)], |x: &[Tensor]| project(&x[0].abs(), &r));
    run!("sigmoid", [uniform(&shape, 0.0, 3.0, true, rng)], |x: &[Tensor]| project(&x[0].sigmoid(), &r));
    run!("tanh", [uniform(&shape, 0.0, 2.0, true, rng)], |x: &[Tensor]| project(&x[0].tanh(), &r));
    run!("log", [uniform(&shape, 0.1, 2.0, false, rng)], |x: &[Tensor]| project(&x[0].log_floor(1e-7), &r));
    run!("sum", [normal(&shape, rng)], |x: &[Tensor]| Ok(x[0].mul(&x[0])?.sum()));
    run!("mean", [normal(&shape, rng)], |x: &[Tensor]| Ok(x[0].mul(&x[0])?.mean()));
    let rs = normal(&[5, 5], rng);
    run!("softmax_rows", [uniform(&[5, 5], 0.0, 2.0, true, rng)], |x: &[Tensor]| project(&x[0].softmax_rows()?, &rs));
    Ok(())
}

/// A random DAG of `n_ops` ops over `[3, 4]` tensors; every op draws its
/// operands from all earlier nodes, so nodes are often consumed twice.
fn random_graph(n_ops: usize, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let inputs: Vec<Tensor> = (0..3).map(|_| uniform(&[3, 4], 0.1, 1.0, true, rng)).collect();
    let plan: Vec<(usize, usize, usize)> = (0..n_ops)
        .map(|k| {
            let pool = inputs.len() + k;
            (rng.random_range(0..8), rng.random_range(0..pool), rng.random_range(0..pool))
        })
        .collect();
    let r = normal(&[3, 4], rng);
    check("random_graph", &inputs, None, rng, |x: &[Tensor]| {
        let mut pool = x.to_vec();
        for &(op, i, j) in &plan {
            let (a, b) = (&pool[i], &pool[j]);
            let y = match op {
                0 => a.add(b)?,
                1 => a.sub(b)?,
                2 => a.mul(b)?,
                3 => a.tanh(),
                4 => a.sigmoid(),
                5 => a.scale(0.7).add_scalar(0.1),
                6 => a.softmax_rows()?,
                _ => Tensor::matmul_ex(&Tensor::matmul_ex(a, b, false, true)?, a, false, false)?.scale(0.5),
            };
            pool.push(y);
        }
        project(pool.last().expect("at least one node"), &r)
    })
}

fn module_checks(rng: &mut ChaCha8Rng, out: &mut Vec<CheckReport>) -> Result<()> {
    // Spectral normalization of a conv kernel.
    let w = normal(&[4, 3, 2, 2], rng);
    let mut state = SpectralState::random(4, rng)?;
    state.warm_up(&w)?;
    let rw = normal(&[4, 3, 2, 2], rng);
    out.push(check("spectral_normalize", &[w], None, rng, |x: &[Tensor]| {
        project(&spectral_normalize_with(&x[0], &state, 0)?.weight, &rw)
    })?);

    // Attention: the feature input and all four parameter tensors.
    let mut set = ParamSet::new();
    let csam = Csam::new(&mut set, "csam", 4, true, rng)?;
    jitter(&mut set, rng)?;
    let a = normal(&[4, 6, 6], rng);
    let cond = uniform(&[1, 6, 6], 0.0, 1.0, false, rng);
    let ids = csam.param_ids();
    let mut inputs = vec![a];
    inputs.extend(ids.iter().map(|&id| set.get(id).clone()));
    let ro = normal(&[4, 6, 6], rng);
    out.push(check("csam", &inputs, None, rng, |x: &[Tensor]| {
        let replace: Vec<(ParamId, Tensor)> = ids.iter().copied().zip(x[1..].iter().cloned()).collect();
        let w = weights_with(&set, &replace)?;
        project(&csam.forward(&w, &x[0], &cond)?, &ro)
    })?);

    // One MRU with a channel-changing projection.
    let mut set = ParamSet::new();
    let mru = Mru::new(&mut set, "mru", 3, 4, Activation::LeakyRelu, true, rng)?;
    jitter(&mut set, rng)?;
    let xin = normal(&[3, 5, 5], rng);
    let cond = uniform(&[1, 5, 5], 0.0, 1.0, false, rng);
    let ids: Vec<ParamId> = (0..set.len()).map(ParamId).collect();
    let mut inputs = vec![xin, cond];
    inputs.extend(ids.iter().map(|&id| set.get(id).clone()));
    let ro = normal(&[4, 5, 5], rng);
    out.push(check("mru", &inputs, Some(12), rng, |x: &[Tensor]| {
        let replace: Vec<(ParamId, Tensor)> = ids.iter().copied().zip(x[2..].iter().cloned()).collect();
        let w = weights_with(&set, &replace)?;
        project(&mru.forward(&w, &x[0], &x[1])?, &ro)
    })?);

    // The shallowest discriminator subnetwork, trunk included.
    let config = DiscriminatorConfig { base_channels: 4, ..DiscriminatorConfig::for_side(16, 1)? };
    let mut d = Discriminator::new(config, rng.random())?;
    jitter(&mut d.params, rng)?;
    let image = uniform(&[3, 16, 16], 0.0, 1.0, true, rng);
    let cond = uniform(&[1, 16, 16], 0.0, 1.0, false, rng);
    let ids: Vec<ParamId> = (0..d.params.len()).map(ParamId).collect();
    let mut inputs = vec![image];
    inputs.extend(ids.iter().map(|&id| d.params.get(id).clone()));
    out.push(check("discriminator_subnetwork", &inputs, Some(10), rng, |x: &[Tensor]| {
        let replace: Vec<(ParamId, Tensor)> = ids.iter().copied().zip(x[1..].iter().cloned()).collect();
        let w = weights_with(&d.params, &replace)?;
        let o = d.forward(&w, &cond, &x[0])?;
        // Score plus a tap so the intermediate layers see a direct signal.
        o.scores[0].add(&o.taps[0][0].mean())
    })?);
    Ok(())
}

fn loss_checks(rng: &mut ChaCha8Rng, out: &mut Vec<CheckReport>) -> Result<()> {
    let scores = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Tensor> { (0..n).map(|_| uniform(&[1], 0.1, 0.9, false, rng)).collect() };
    let mut inputs = scores(rng, 3);
    inputs.extend(scores(rng, 3));
    out.push(check("adversarial_loss", &inputs, None, rng, |x: &[Tensor]| adversarial_loss(&x[..3], &x[3..]))?);
    out.push(check("discriminator_loss", &inputs, None, rng, |x: &[Tensor]| discriminator_loss(&x[..3], &x[3..]))?);
    out.push(check("generator_adversarial_loss", &inputs[3..], None, rng, |x: &[Tensor]| generator_adversarial_loss(x))?);
    let y = uniform(&[3, 4, 4], 0.0, 1.0, true, rng);
    let y_hat = y.add(&uniform(&[3, 4, 4], 0.01, 0.5, true, rng))?;
    out.push(check("l1_loss", &[y, y_hat], None, rng, |x: &[Tensor]| l1_loss(&x[0], &x[1]))?);
    // Two subnetworks with two taps each.
    let shapes = [[2, 4, 4], [3, 2, 2], [2, 4, 4], [3, 2, 2]];
    let real: Vec<Tensor> = shapes.iter().map(|s| normal(s, rng)).collect();
    let fake: Vec<Tensor> = real.iter().map(|t| t.add(&uniform(t.shape(), 0.01, 0.5, true, rng))).collect::<Result<_>>()?;
    let mut inputs = fake;
    inputs.extend(real);
    out.push(check("feature_matching_loss", &inputs, None, rng, |x: &[Tensor]| {
        let group = |t: &[Tensor]| vec![t[..2].to_vec(), t[2..4].to_vec()];
        feature_matching_loss(&group(&x[..4]), &group(&x[4..]))
    })?);
    let terms = [uniform(&[1], 0.1, 2.0, false, rng), uniform(&[1], 0.0, 0.1, false, rng), uniform(&[1], 0.0, 0.5, false, rng)];
    let weights = LossWeights::default();
    out.push(check("total_objective", &terms, None, rng, |x: &[Tensor]| total_objective(&x[0], &x[1], &x[2], weights))?);
    Ok(())
}

/// `∂ mean(output) / ∂ (encoder weight)` through the whole generator at
/// 16×16, on a handful of coordinates.
pub fn end_to_end(seed: u64) -> Result<CheckReport> {
    with_f64(|| {
        let mut rng = derive(seed, Stream::Test, 0x6772_6164);
        let config = GeneratorConfig { base_channels: 8, n_down: 2, image_side: 16, csam_enabled: true, spectral_norm: true };
        let mut g = Generator::new(config, seed)?;
        jitter(&mut g.params, &mut rng)?;
        let cond = ConditionStack {
            levels: (0..=config.n_down)
                .map(|l| uniform(&[1, 16 >> l, 16 >> l], 0.0, 1.0, false, &mut rng))
                .collect(),
        };
        let id = g.params.find("g.enc0.conv_z.weight").ok_or_else(|| Error::invalid("missing encoder weight"))?;
        let opts = ForwardOptions { use_csam: true, drop_skip: None };
        let w0 = g.params.get(id).clone();
        let mut report = check("generator_end_to_end", &[w0], Some(8), &mut rng, |x: &[Tensor]| {
            let w = weights_with(&g.params, &[(id, x[0].clone())])?;
            Ok(g.forward(&w, &cond, opts)?.mean())
        })?;
        report.tolerance = END_TO_END_TOLERANCE;
        Ok(report)
    })
}

fn with_f64<T>(f: impl FnOnce() -> Result<T>) -> Result<T> {
    let before = precision();
    set_precision(Precision::F64);
    let r = f();
    set_precision(before);
    r
}

/// Every check, at 64-bit precision.
pub fn suite(seed: u64) -> Result<Vec<CheckReport>> {
    with_f64(|| {
        let mut rng = derive(seed, Stream::Test, 0);
        let mut out = Vec::new();
        op_checks(&mut rng, &mut out)?;
        out.push(random_graph(10, &mut rng)?);
        module_checks(&mut rng, &mut out)?;
        loss_checks(&mut rng, &mut out)?;
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // The value is x² but the graph only records one factor.
        let mut rng = derive(1, Stream::Test, 0);
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check("bad", &[x], None, &mut rng, |x: &[Tensor]| Ok(x[0].mul(&x[0].detach())?.sum())).unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
