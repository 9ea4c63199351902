//! Conditional self-attention.
//!
//! The feature map `a` (`C×H×W`) is concatenated with the condition `x`
//! resized to the same resolution, giving `[a, x]` with `C+1` channels. Two
//! 1×1 projections `f`, `g` (`Ĉ = max(1, C/8)` channels) score every pair of
//! positions, `s_ij = f_iᵀ g_j`. For each synthesized position `j` the scores
//! are normalized over the attended positions `i`, giving the row-stochastic
//! map `B[j][i]`. A third projection `h` (`C` channels) is mixed by `B` and
//! added back to `a` scaled by the learned `γ`, which starts at zero so the
//! module is the identity when first inserted.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{init_normal, ParamGroup, ParamId, ParamSet, Weights};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Csam {
    pub channels: usize,
    pub key_channels: usize,
    pub w_f: ParamId,
    pub w_g: ParamId,
    pub w_h: ParamId,
    pub gamma: ParamId,
}

/// Row-stochastic `N×N` attention map; row `j` holds the weights used to
/// synthesize position `j`.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub n: usize,
    pub b: Tensor,
}

impl AttentionMap {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.b.data()[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.b.data()[j * self.n + i]
    }
}

pub fn key_channels(c: usize) -> usize {
    (c / 8).max(1)
}

impl Csam {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        channels: usize,
        spectral: bool,
        rng: &mut R,
    ) -> Result<Csam> {
        if channels == 0 {
            return Err(Error::invalid("attention over zero channels"));
        }
        let kc = key_channels(channels);
        let cin = channels + 1;
        let proj = |params: &mut ParamSet, suffix: &str, out: usize, rng: &mut R| -> Result<ParamId> {
            let w = init_normal(&[out, cin, 1, 1], cin, 1.0, rng)?;
            let id = params.push(format!("{name}.{suffix}"), w, ParamGroup::Csam);
            if spectral {
                params.enable_spectral(id, rng)?;
            }
            Ok(id)
        };
        let w_f = proj(params, "w_f", kc, rng)?;
        let w_g = proj(params, "w_g", kc, rng)?;
        let w_h = proj(params, "w_h", channels, rng)?;
        let gamma = params.push(format!("{name}.gamma"), Tensor::param(&[1], alloc::vec![0.0])?, ParamGroup::Csam);
        Ok(Csam { channels, key_channels: kc, w_f, w_g, w_h, gamma })
    }

    fn conditioned(&self, a: &Tensor, x: &Tensor) -> Result<(Tensor, usize, usize, usize)> {
        let (c, h, w) = a.chw("csam")?;
        let (xc, xh, xw) = x.chw("csam")?;
        if c != self.channels {
            return Err(Error::shape("csam", format!("module built for {} channels, got {c}", self.channels)));
        }
        if xc != 1 || xh != h || xw != w {
            return Err(Error::shape("csam", format!("condition {:?} does not match features {:?}", x.shape(), a.shape())));
        }
        Ok((Tensor::concat(&[a.clone(), x.clone()])?, c, h, w))
    }

    fn attention_from(&self, wts: &Weights, ax: &Tensor, n: usize) -> Result<Tensor> {
        let f = ax.conv2d(wts.get(self.w_f), 1, 0)?.reshape(&[self.key_channels, n])?;
        let g = ax.conv2d(wts.get(self.w_g), 1, 0)?.reshape(&[self.key_channels, n])?;
        // sᵀ[j][i] = g_jᵀ f_i; softmax over i for each j.
        let st = Tensor::matmul_ex(&g, &f, true, false)?;
        st.softmax_rows()
    }

    pub fn attention(&self, wts: &Weights, a: &Tensor, x: &Tensor) -> Result<AttentionMap> {
        let (ax, _, h, w) = self.conditioned(a, x)?;
        let n = h * w;
        Ok(AttentionMap { n, b: self.attention_from(wts, &ax, n)? })
    }

    /// `o = γ·r + a` with `r_j = Σ_i B[j][i] h_i`.
    pub fn forward(&self, wts: &Weights, a: &Tensor, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_map(wts, a, x)?.0)
    }

    pub fn forward_with_map(&self, wts: &Weights, a: &Tensor, x: &Tensor) -> Result<(Tensor, AttentionMap)> {
        let (ax, c, h, w) = self.conditioned(a, x)?;
        let n = h * w;
        let b = self.attention_from(wts, &ax, n)?;
        let hp = ax.conv2d(wts.get(self.w_h), 1, 0)?.reshape(&[c, n])?;
        let r = Tensor::matmul_ex(&hp, &b, false, true)?.reshape(&[c, h, w])?;
        let out = Tensor::add_scaled(a, &r, wts.get(self.gamma))?;
        Ok((out, AttentionMap { n, b }))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        alloc::vec![self.w_f, self.w_g, self.w_h, self.gamma]
    }
}
