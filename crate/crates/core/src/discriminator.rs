//! Multi-scale discriminator with a shared trunk.
//!
//! Every subnetwork sees the condition and the image concatenated along
//! channels. The first `shared_depth` strided convolutions are one set of
//! parameters used by all subnetworks; subnetwork `i` then continues with its
//! own strided layers up to `depths[i]` in total, so deeper subnetworks see
//! larger receptive fields. A 1×1 convolution and a sigmoid produce a patch
//! map whose mean is the subnetwork's score. The activations of the last
//! three strided layers of each subnetwork are exposed for feature matching.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{leaky_gain, Conv, ConvSpec, ParamGroup, ParamSet, Trainable, Weights};
use crate::rng::{derive, Stream};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const TAPS_PER_SUBNETWORK: usize = 3;
const MAX_CHANNELS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub n_d: usize,
    pub shared_depth: usize,
    pub depths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub base_channels: usize,
    pub image_side: usize,
    pub spectral_norm: bool,
}

/// Receptive field of the last layer of a stack of `depth` identical
/// convolutions: `RF_l = RF_{l-1} + (kernel - 1)·stride^(l-1)`, `RF_0 = 1`.
pub fn receptive_field(depths: &[usize], kernel: usize, stride: usize) -> Vec<usize> {
    depths
        .iter()
        .map(|&d| {
            let mut rf = 1usize;
            let mut jump = 1usize;
            for _ in 0..d {
                rf = rf.saturating_add((kernel.max(1) - 1).saturating_mul(jump));
                jump = jump.saturating_mul(stride.max(1));
            }
            rf
        })
        .collect()
}

impl DiscriminatorConfig {
    /// Shared trunk of 2, kernel 4, stride 2, and depths chosen so the
    /// deepest subnetwork's receptive field covers the whole image. Fails
    /// when the image is too small to hold `n_d` distinct depths.
    pub fn for_side(image_side: usize, n_d: usize) -> Result<Self> {
        Self::with_trunk(image_side, n_d, 2)
    }

    /// As [`DiscriminatorConfig::for_side`] with a given trunk depth.
    pub fn with_trunk(image_side: usize, n_d: usize, shared_depth: usize) -> Result<Self> {
        let (kernel, stride) = (4, 2);
        let mut deepest = 1;
        while receptive_field(&[deepest], kernel, stride)[0] < image_side {
            deepest += 1;
        }
        // Each subnetwork needs its own layer past the trunk and three taps.
        let shallowest = (shared_depth + 1).max(TAPS_PER_SUBNETWORK);
        let deepest = deepest.max(shallowest + n_d.max(1) - 1);
        let depths = (0..n_d).map(|i| deepest + 1 + i - n_d).collect();
        let c = DiscriminatorConfig { n_d, shared_depth, depths, kernel, stride, base_channels: 16, image_side, spectral_norm: true };
        c.validate()?;
        Ok(c)
    }

    pub fn pad(&self) -> usize {
        (self.kernel.max(1) - 1) / 2
    }

    pub fn channels(&self, layer: usize) -> usize {
        (self.base_channels << layer.min(16)).min(MAX_CHANNELS)
    }

    pub fn receptive_fields(&self) -> Vec<usize> {
        receptive_field(&self.depths, self.kernel, self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_d == 0 || self.depths.len() != self.n_d {
            return Err(Error::invalid(format!("n_d = {} but {} depths given", self.n_d, self.depths.len())));
        }
        if self.kernel == 0 || self.stride == 0 || self.base_channels == 0 {
            return Err(Error::invalid("discriminator kernel, stride and base_channels must be positive"));
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("depths must be strictly increasing, got {:?}", self.depths)));
        }
        let min = self.depths[0];
        if self.shared_depth >= min {
            return Err(Error::invalid(format!("shared_depth {} must be below the smallest depth {min}", self.shared_depth)));
        }
        if min < TAPS_PER_SUBNETWORK {
            return Err(Error::invalid(format!("every subnetwork needs at least {TAPS_PER_SUBNETWORK} layers, got {min}")));
        }
        let deepest = *self.receptive_fields().last().expect("n_d >= 1");
        if deepest < self.image_side {
            return Err(Error::invalid(format!(
                "deepest receptive field {deepest} is smaller than the image side {}",
                self.image_side
            )));
        }
        let mut side = self.image_side;
        let pad = self.pad();
        for l in 0..*self.depths.last().expect("n_d >= 1") {
            if side + 2 * pad < self.kernel {
                return Err(Error::invalid(format!("layer {l} input side {side} is smaller than the kernel")));
            }
            side = (side + 2 * pad - self.kernel) / self.stride + 1;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub layers: Vec<Conv>,
    pub head: Conv,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
    pub trunk: Vec<Conv>,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// One `[1]` tensor per subnetwork, each in (0, 1).
    pub scores: Vec<Tensor>,
    /// Per subnetwork, the last three strided-layer activations.
    pub taps: Vec<Vec<Tensor>>,
}

impl DiscriminatorOutput {
    pub fn score_values(&self) -> Vec<f64> {
        self.scores.iter().map(Tensor::item).collect()
    }
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Discriminator> {
        config.validate()?;
        let mut rng = derive(seed, Stream::DiscriminatorInit, 0);
        let mut ps = ParamSet::new();
        let gain = leaky_gain(LEAKY_SLOPE);
        let strided = |c_in: usize, c_out: usize| ConvSpec {
            c_in,
            c_out,
            kernel: config.kernel,
            stride: config.stride,
            pad: config.pad(),
            bias: true,
            spectral: config.spectral_norm,
            gain,
        };
        let input_channels = 4;
        let c_in = |l: usize| if l == 0 { input_channels } else { config.channels(l - 1) };
        let mut trunk = Vec::new();
        for l in 0..config.shared_depth {
            trunk.push(Conv::new(&mut ps, &format!("d.trunk{l}"), strided(c_in(l), config.channels(l)), ParamGroup::Main, &mut rng)?);
        }
        let mut branches = Vec::new();
        for (i, &depth) in config.depths.iter().enumerate() {
            let mut layers = Vec::new();
            for l in config.shared_depth..depth {
                layers.push(Conv::new(&mut ps, &format!("d.b{i}.conv{l}"), strided(c_in(l), config.channels(l)), ParamGroup::Main, &mut rng)?);
            }
            let head_spec = ConvSpec::same(config.channels(depth - 1), 1, 1).with_spectral(config.spectral_norm);
            let head = Conv::new(&mut ps, &format!("d.b{i}.head"), head_spec, ParamGroup::Main, &mut rng)?;
            branches.push(Branch { layers, head });
        }
        Ok(Discriminator { config, params: ps, trunk, branches })
    }

    pub fn materialize(&mut self, trainable: Trainable, refine: bool) -> Result<Weights> {
        self.params.materialize(trainable, refine)
    }

    pub fn forward(&self, w: &Weights, cond: &Tensor, image: &Tensor) -> Result<DiscriminatorOutput> {
        let s = self.config.image_side;
        if cond.shape() != [1, s, s] || image.shape() != [3, s, s] {
            return Err(Error::shape(
                "discriminate",
                format!("expected condition [1,{s},{s}] and image [3,{s},{s}], got {:?} and {:?}", cond.shape(), image.shape()),
            ));
        }
        let mut h = Tensor::concat(&[cond.clone(), image.clone()])?;
        let mut shared = Vec::with_capacity(self.trunk.len());
        for conv in &self.trunk {
            h = conv.forward(w, &h)?.leaky_relu(LEAKY_SLOPE);
            shared.push(h.clone());
        }
        let mut scores = Vec::with_capacity(self.branches.len());
        let mut taps = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut acts = shared.clone();
            let mut x = h.clone();
            for conv in &branch.layers {
                x = conv.forward(w, &x)?.leaky_relu(LEAKY_SLOPE);
                acts.push(x.clone());
            }
            let map = branch.head.forward(w, &x)?.sigmoid();
            scores.push(map.mean());
            taps.push(acts.split_off(acts.len() - TAPS_PER_SUBNETWORK));
        }
        Ok(DiscriminatorOutput { scores, taps })
    }

    pub fn discriminate(&self, cond: &Tensor, image: &Tensor) -> Result<DiscriminatorOutput> {
        self.forward(&self.params.frozen()?, cond, image)
    }

    /// Parameter indices owned by the shared trunk.
    pub fn trunk_param_ids(&self) -> Vec<usize> {
        let mut ids = vec![];
        for c in &self.trunk {
            ids.push(c.weight.0);
            ids.extend(c.bias.map(|b| b.0));
        }
        ids
    }
}
