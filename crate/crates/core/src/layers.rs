//! Named parameter storage and convolution layers.
//!
//! Models own a [`ParamSet`]; layers refer to parameters by [`ParamId`].
//! Before every forward pass the set is *materialized* into [`Weights`]:
//! trainable parameters become gradient-tracking leaves, frozen ones become
//! constants, and spectrally normalized weights are replaced by `W / σ̂`.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spectral::{spectral_normalize_with, SpectralState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Which part of a model a parameter belongs to; drives stage freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Main,
    Csam,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
    /// Index into [`ParamSet::spectral`] when the parameter is normalized.
    pub spectral: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub params: Vec<Param>,
    pub spectral: Vec<SpectralState>,
}

/// How to turn a [`ParamSet`] into tensors for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    None,
    Group(ParamGroup),
}

impl Trainable {
    fn admits(self, g: ParamGroup) -> bool {
        match self {
            Trainable::All => true,
            Trainable::None => false,
            Trainable::Group(x) => x == g,
        }
    }
}

/// Per-pass tensors aligned with [`ParamSet::params`].
#[derive(Debug, Clone)]
pub struct Weights {
    /// Effective tensor used by the forward pass (normalized when applicable).
    pub effective: Vec<Tensor>,
    /// The leaf each effective tensor was derived from; gradients are keyed
    /// by these.
    pub leaves: Vec<Tensor>,
}

impl Weights {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.effective[id.0]
    }

    pub fn leaf(&self, id: ParamId) -> &Tensor {
        &self.leaves[id.0]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        self.params.push(Param { name: name.into(), value, group, spectral: None });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Vec<f64>) -> Result<()> {
        let p = &mut self.params[id.0];
        p.value = Tensor::param(p.value.shape(), value)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Attaches a spectral state to `id` (warmed up against its current value).
    pub fn enable_spectral<R: Rng + ?Sized>(&mut self, id: ParamId, rng: &mut R) -> Result<()> {
        let w = self.params[id.0].value.clone();
        let mut s = SpectralState::random(w.shape()[0], rng)?;
        s.warm_up(&w)?;
        self.spectral.push(s);
        self.params[id.0].spectral = Some(self.spectral.len() - 1);
        Ok(())
    }

    /// Builds per-pass tensors. With `refine`, every normalized parameter
    /// whose group is trainable advances its power iteration one step and the
    /// refined `u` is stored back.
    pub fn materialize(&mut self, trainable: Trainable, refine: bool) -> Result<Weights> {
        let mut effective = Vec::with_capacity(self.params.len());
        let mut leaves = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let train = trainable.admits(p.group);
            let leaf = if train { p.value.as_param() } else { p.value.detach() };
            let eff = match p.spectral {
                Some(si) => {
                    let state = &mut self.spectral[si];
                    let iters = if refine && train { state.n_power_iterations } else { 0 };
                    let n = spectral_normalize_with(&leaf, state, iters)?;
                    if iters > 0 {
                        *state = n.state;
                    }
                    n.weight
                }
                None => leaf.clone(),
            };
            effective.push(eff);
            leaves.push(leaf);
        }
        Ok(Weights { effective, leaves })
    }

    /// Read-only materialization (no power-iteration refinement, no grads).
    pub fn frozen(&self) -> Result<Weights> {
        self.clone().materialize(Trainable::None, false)
    }

    /// FNV-1a over names and value bits of the selected parameters.
    pub fn fingerprint(&self, filter: impl Fn(&Param) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for p in self.params.iter().filter(|p| filter(p)) {
            p.name.bytes().for_each(&mut eat);
            for v in p.value.data() {
                v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }
}

/// Scaled normal initialization: `N(0, gain² / fan_in)`.
pub fn init_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Result<Tensor> {
    let std = gain / libm::sqrt(fan_in.max(1) as f64);
    let n: usize = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Gain for leaky-ReLU-family activations (`slope = 0` gives ReLU's √2).
pub fn leaky_gain(slope: f64) -> f64 {
    libm::sqrt(2.0 / (1.0 + slope * slope))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub spectral: bool,
    pub gain: f64,
}

impl ConvSpec {
    /// Stride-1 "same" convolution with bias.
    pub fn same(c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvSpec { c_in, c_out, kernel, stride: 1, pad: kernel / 2, bias: true, spectral: false, gain: 1.0 }
    }

    pub fn with_spectral(mut self, on: bool) -> Self {
        self.spectral = on;
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        spec: ConvSpec,
        group: ParamGroup,
        rng: &mut R,
    ) -> Result<Conv> {
        if spec.kernel == 0 || spec.stride == 0 || spec.c_in == 0 || spec.c_out == 0 {
            return Err(Error::invalid(alloc::format!("degenerate convolution {spec:?}")));
        }
        let fan_in = spec.c_in * spec.kernel * spec.kernel;
        let w = init_normal(&[spec.c_out, spec.c_in, spec.kernel, spec.kernel], fan_in, spec.gain, rng)?;
        let weight = params.push(alloc::format!("{name}.weight"), w, group);
        if spec.spectral {
            params.enable_spectral(weight, rng)?;
        }
        let bias = if spec.bias {
            Some(params.push(alloc::format!("{name}.bias"), Tensor::param(&[spec.c_out], alloc::vec![0.0; spec.c_out])?, group))
        } else {
            None
        };
        Ok(Conv { weight, bias, stride: spec.stride, pad: spec.pad })
    }

    pub fn forward(&self, w: &Weights, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(w.get(self.weight), self.stride, self.pad)?;
        match self.bias {
            Some(b) => y.add_bias(w.get(b)),
            None => Ok(y),
        }
    }
}
