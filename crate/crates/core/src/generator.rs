//! Encoder–decoder generator built from masked residual units.
//!
//! Layout for `n_down = D` and `ch(l) = min(base·2^l, 256)`:
//!
//! * encoder level `l` (`0..D`, side `S/2^l`): MRU to `ch(l)` channels,
//!   then a 4×4 stride-2 convolution to `ch(l+1)` (leaky ReLU);
//! * bottleneck MRU at side `S/2^D`;
//! * decoder level `l` (`D-1..=1`): nearest ×2 upsample, 3×3 convolution to
//!   `ch(l)` (ReLU), concatenation with the encoder MRU output of level `l`,
//!   then an MRU back to `ch(l)` channels; the attention module runs on the
//!   concatenated features right before the last decoder MRU (level 1);
//! * output head at full resolution: upsample, 3×3 convolution to `ch(0)`
//!   (ReLU), concatenation with the level-0 encoder output, a 3×3
//!   convolution to RGB and `tanh`.
//!
//! Keeping the last MRU at half resolution keeps the attention map at
//! `(S/2)² × (S/2)²` entries.
//!
//! Every MRU and the attention module receive the condition resized to their
//! own resolution. There is no noise input: the output is a deterministic
//! function of the condition and the parameters.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::csam::Csam;
use crate::error::{Error, Result};
use crate::layers::{leaky_gain, Conv, ConvSpec, ParamGroup, ParamSet, Trainable, Weights};
use crate::linemap::ConditionPyramid;
use crate::rng::{derive, Stream};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const MAX_CHANNELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Relu,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::LeakyRelu => x.leaky_relu(LEAKY_SLOPE),
            Activation::Relu => x.relu(),
        }
    }

    fn gain(self) -> f64 {
        match self {
            Activation::LeakyRelu => leaky_gain(LEAKY_SLOPE),
            Activation::Relu => leaky_gain(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_down: usize,
    pub image_side: usize,
    pub csam_enabled: bool,
    pub spectral_norm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { base_channels: 32, n_down: 4, image_side: 64, csam_enabled: true, spectral_norm: true }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 8 {
            return Err(Error::invalid(format!("generator base_channels must be >= 8, got {}", self.base_channels)));
        }
        if self.n_down < 2 || self.n_down > 16 {
            return Err(Error::invalid(format!("generator n_down must be in 2..=16, got {}", self.n_down)));
        }
        let f = 1usize << self.n_down;
        if self.image_side == 0 || self.image_side % f != 0 {
            return Err(Error::invalid(format!(
                "image_side {} is not divisible by 2^n_down = {f}",
                self.image_side
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        (self.base_channels << level.min(16)).min(MAX_CHANNELS)
    }

    /// Spatial side at each level, finest first.
    pub fn resolutions(&self) -> Vec<usize> {
        (0..=self.n_down).map(|l| self.image_side >> l).collect()
    }

    /// Condition-pyramid scales the generator consumes.
    pub fn scales(&self) -> Vec<usize> {
        (0..=self.n_down).map(|l| 1usize << l).collect()
    }
}

/// Masked residual unit.
///
/// `m = σ(conv_m([x, c]))`, `z = act(conv_z([m ⊙ x, c]))`,
/// `n = σ(conv_n([x, c]))`, `y = (1 - n) ⊙ proj(x) + n ⊙ z`.
#[derive(Debug, Clone)]
pub struct Mru {
    pub c_in: usize,
    pub c_out: usize,
    pub conv_m: Conv,
    pub conv_z: Conv,
    pub conv_n: Conv,
    pub proj: Option<Conv>,
    pub activation: Activation,
}

impl Mru {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        activation: Activation,
        spectral: bool,
        rng: &mut R,
    ) -> Result<Mru> {
        let g = ParamGroup::Main;
        let conv_m = Conv::new(params, &format!("{name}.conv_m"), ConvSpec::same(c_in + 1, c_in, 3).with_spectral(spectral), g, rng)?;
        let conv_z = Conv::new(
            params,
            &format!("{name}.conv_z"),
            ConvSpec::same(c_in + 1, c_out, 3).with_spectral(spectral).with_gain(activation.gain()),
            g,
            rng,
        )?;
        let conv_n = Conv::new(params, &format!("{name}.conv_n"), ConvSpec::same(c_in + 1, c_out, 3).with_spectral(spectral), g, rng)?;
        let proj = if c_in != c_out {
            Some(Conv::new(
                params,
                &format!("{name}.proj"),
                ConvSpec::same(c_in, c_out, 1).without_bias().with_spectral(spectral),
                g,
                rng,
            )?)
        } else {
            None
        };
        Ok(Mru { c_in, c_out, conv_m, conv_z, conv_n, proj, activation })
    }

    pub fn forward(&self, w: &Weights, x: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let (c, h, wd) = x.chw("mru")?;
        if c != self.c_in {
            return Err(Error::shape("mru", format!("expects {} channels, got {c}", self.c_in)));
        }
        if cond.shape() != [1, h, wd] {
            return Err(Error::shape("mru", format!("condition {:?} does not match input {:?}", cond.shape(), x.shape())));
        }
        let xc = Tensor::concat(&[x.clone(), cond.clone()])?;
        let m = self.conv_m.forward(w, &xc)?.sigmoid();
        let masked = Tensor::concat(&[m.mul(x)?, cond.clone()])?;
        let z = self.activation.apply(&self.conv_z.forward(w, &masked)?);
        let n = self.conv_n.forward(w, &xc)?.sigmoid();
        let p = match &self.proj {
            Some(conv) => conv.forward(w, x)?,
            None => x.clone(),
        };
        p.add(&n.mul(&z.sub(&p)?)?)
    }
}

/// Condition resized to every generator level, finest first.
#[derive(Debug, Clone)]
pub struct ConditionStack {
    pub levels: Vec<Tensor>,
}

impl ConditionStack {
    pub fn from_pyramid(pyramid: &ConditionPyramid, config: &GeneratorConfig) -> Result<Self> {
        let mut levels = Vec::with_capacity(config.n_down + 1);
        for (l, scale) in config.scales().into_iter().enumerate() {
            let level = pyramid
                .level(scale)
                .ok_or_else(|| Error::invalid(format!("condition pyramid is missing scale {scale}")))?;
            let side = config.image_side >> l;
            if level.height != side || level.width != side {
                return Err(Error::shape(
                    "generate",
                    format!("pyramid scale {scale} is {}x{}, expected {side}x{side}", level.height, level.width),
                ));
            }
            levels.push(Tensor::new(&[1, side, side], level.values.clone())?);
        }
        Ok(ConditionStack { levels })
    }

    pub fn finest(&self) -> &Tensor {
        &self.levels[0]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    pub use_csam: bool,
    /// Replace the skip features of this encoder level with zeros.
    pub drop_skip: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    pub encoder: Vec<Mru>,
    pub down: Vec<Conv>,
    pub bottleneck: Mru,
    /// Indexed by level (0 = full resolution).
    pub up: Vec<Conv>,
    /// `decoder[l - 1]` is the MRU of level `l`.
    pub decoder: Vec<Mru>,
    pub csam: Option<Csam>,
    pub to_rgb: Conv,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Generator> {
        config.validate()?;
        let mut rng = derive(seed, Stream::GeneratorInit, 0);
        let mut ps = ParamSet::new();
        let sn = config.spectral_norm;
        let leaky = leaky_gain(LEAKY_SLOPE);
        let d = config.n_down;
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        for l in 0..d {
            let c_in = if l == 0 { 1 } else { config.channels(l) };
            encoder.push(Mru::new(&mut ps, &format!("g.enc{l}"), c_in, config.channels(l), Activation::LeakyRelu, sn, &mut rng)?);
            let spec = ConvSpec { c_in: config.channels(l), c_out: config.channels(l + 1), kernel: 4, stride: 2, pad: 1, bias: true, spectral: sn, gain: leaky };
            down.push(Conv::new(&mut ps, &format!("g.down{l}"), spec, ParamGroup::Main, &mut rng)?);
        }
        let cb = config.channels(d);
        let bottleneck = Mru::new(&mut ps, "g.bottleneck", cb, cb, Activation::LeakyRelu, sn, &mut rng)?;
        let mut up = Vec::new();
        let mut decoder = Vec::new();
        for l in 0..d {
            let spec = ConvSpec::same(config.channels(l + 1), config.channels(l), 3).with_spectral(sn).with_gain(leaky_gain(0.0));
            up.push(Conv::new(&mut ps, &format!("g.up{l}"), spec, ParamGroup::Main, &mut rng)?);
            if l == 0 {
                continue;
            }
            decoder.push(Mru::new(
                &mut ps,
                &format!("g.dec{l}"),
                2 * config.channels(l),
                config.channels(l),
                Activation::Relu,
                sn,
                &mut rng,
            )?);
        }
        let csam = if config.csam_enabled {
            Some(Csam::new(&mut ps, "g.csam", 2 * config.channels(1), sn, &mut rng)?)
        } else {
            None
        };
        let to_rgb = Conv::new(&mut ps, "g.to_rgb", ConvSpec::same(2 * config.channels(0), 3, 3).with_spectral(sn), ParamGroup::Main, &mut rng)?;
        Ok(Generator { config, params: ps, encoder, down, bottleneck, up, decoder, csam, to_rgb })
    }

    pub fn materialize(&mut self, trainable: Trainable, refine: bool) -> Result<Weights> {
        self.params.materialize(trainable, refine)
    }

    pub fn forward(&self, w: &Weights, cond: &ConditionStack, opts: ForwardOptions) -> Result<Tensor> {
        self.forward_traced(w, cond, opts, &mut Vec::new())
    }

    /// As [`Generator::forward`], recording `(block, output shape)` pairs.
    pub fn forward_traced(
        &self,
        w: &Weights,
        cond: &ConditionStack,
        opts: ForwardOptions,
        trace: &mut Vec<(&'static str, Vec<usize>)>,
    ) -> Result<Tensor> {
        let d = self.config.n_down;
        if cond.levels.len() != d + 1 {
            return Err(Error::invalid(format!("expected {} condition levels, got {}", d + 1, cond.levels.len())));
        }
        for (l, c) in cond.levels.iter().enumerate() {
            let side = self.config.image_side >> l;
            if c.shape() != [1, side, side] {
                return Err(Error::shape("generate", format!("condition level {l} is {:?}, expected [1,{side},{side}]", c.shape())));
            }
        }
        let mut skips = Vec::with_capacity(d);
        let mut x = cond.finest().clone();
        for l in 0..d {
            let e = self.encoder[l].forward(w, &x, &cond.levels[l])?;
            trace.push(("encoder", e.shape().to_vec()));
            x = self.down[l].forward(w, &e)?.leaky_relu(LEAKY_SLOPE);
            skips.push(e);
        }
        x = self.bottleneck.forward(w, &x, &cond.levels[d])?;
        trace.push(("bottleneck", x.shape().to_vec()));
        for l in (0..d).rev() {
            let u = self.up[l].forward(w, &x.upsample(2)?)?.relu();
            let skip = if opts.drop_skip == Some(l) { Tensor::zeros(skips[l].shape()) } else { skips[l].clone() };
            let mut cat = Tensor::concat(&[u, skip])?;
            if l == 0 {
                x = cat;
                break;
            }
            if l == 1 && opts.use_csam {
                if let Some(csam) = &self.csam {
                    cat = csam.forward(w, &cat, &cond.levels[1])?;
                    trace.push(("csam", cat.shape().to_vec()));
                }
            }
            x = self.decoder[l - 1].forward(w, &cat, &cond.levels[l])?;
            trace.push(("decoder", x.shape().to_vec()));
        }
        let out = self.to_rgb.forward(w, &x)?.tanh();
        trace.push(("output", out.shape().to_vec()));
        Ok(out)
    }

    /// Inference with the stored parameters; the attention module is used
    /// when the model has one.
    pub fn generate(&self, cond: &ConditionStack) -> Result<Tensor> {
        let w = self.params.frozen()?;
        self.forward(&w, cond, ForwardOptions { use_csam: self.csam.is_some(), drop_skip: None })
    }

    pub fn generate_from_pyramid(&self, pyramid: &ConditionPyramid) -> Result<Tensor> {
        self.generate(&ConditionStack::from_pyramid(pyramid, &self.config)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig { base_channels: 8, n_down: 2, image_side: 8, csam_enabled: true, spectral_norm: true }
    }

    fn cond(config: &GeneratorConfig, phase: f64) -> ConditionStack {
        let levels = config
            .resolutions()
            .into_iter()
            .map(|s| {
                Tensor::new(&[1, s, s], (0..s * s).map(|i| 0.5 + 0.4 * libm::sin(i as f64 * 0.7 + phase)).collect()).unwrap()
            })
            .collect();
        ConditionStack { levels }
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        assert!(GeneratorConfig { base_channels: 4, ..Default::default() }.validate().is_err());
        assert!(GeneratorConfig { image_side: 60, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn output_shape_and_range() {
        let c = tiny();
        let g = Generator::new(c, 1).unwrap();
        let y = g.generate(&cond(&c, 0.0)).unwrap();
        assert_eq!(y.shape(), &[3, 8, 8]);
        assert!(y.data().iter().all(|v| *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn deterministic() {
        let c = tiny();
        let g = Generator::new(c, 1).unwrap();
        let a = g.generate(&cond(&c, 0.3)).unwrap();
        let b = g.generate(&cond(&c, 0.3)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn missing_level_rejected() {
        let c = tiny();
        let g = Generator::new(c, 1).unwrap();
        let mut s = cond(&c, 0.0);
        s.levels.pop();
        assert!(g.generate(&s).is_err());
    }
}
