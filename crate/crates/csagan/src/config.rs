//! Run configuration as flat `section.key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, unknown keys are rejected by name, and floats are written with
//! `{:?}` so a serialized config parses back to the identical value.

use std::fmt::Write as _;
use std::path::Path;

use csagan_core::discriminator::DiscriminatorConfig;
use csagan_core::generator::GeneratorConfig;
use csagan_core::loss::LossWeights;
use csagan_core::training::{Schedule, StagePlan};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// `dir` reads preprocessed pairs from `pairs`, `toy` draws shapes.
    pub source: String,
    pub photos: String,
    pub pairs: String,
    pub split: f64,
    pub toy_count: usize,
    /// Upper end of the per-sample threshold range for toy data; equal to
    /// `linemap.tau` for a fixed threshold.
    pub toy_tau_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinemapConfig {
    pub tau: f64,
    pub l_min: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSection {
    pub base_channels: usize,
    pub n_down: usize,
    pub csam: bool,
    pub spectral_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSection {
    pub n_d: usize,
    pub shared_depth: usize,
    pub base_channels: usize,
    pub spectral_norm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub image_side: usize,
    pub data: DataConfig,
    pub linemap: LinemapConfig,
    pub generator: GeneratorSection,
    pub discriminator: DiscriminatorSection,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub stages: [StagePlan; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        RunConfig {
            seed: 0,
            image_side: g.image_side,
            data: DataConfig {
                source: "dir".into(),
                photos: "data/photos".into(),
                pairs: "data/pairs".into(),
                split: 0.8,
                toy_count: 256,
                toy_tau_max: 0.3,
            },
            linemap: LinemapConfig { tau: 0.3, l_min: csagan_core::linemap::DEFAULT_L_MIN },
            generator: GeneratorSection {
                base_channels: g.base_channels,
                n_down: g.n_down,
                csam: g.csam_enabled,
                spectral_norm: g.spectral_norm,
            },
            discriminator: DiscriminatorSection { n_d: 3, shared_depth: 2, base_channels: 16, spectral_norm: true },
            loss: LossWeights::default(),
            train: TrainSection { batch_size: csagan_core::training::DEFAULT_BATCH_SIZE, checkpoint_every: 100 },
            stages: [StagePlan::desk(1), StagePlan::desk(2), StagePlan::desk(3)],
        }
    }
}

trait Value: Sized {
    fn render(&self) -> String;
    fn parse(key: &str, raw: &str) -> Result<Self>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn render(&self) -> String {
                format!("{self:?}")
            }

            fn parse(key: &str, raw: &str) -> Result<Self> {
                raw.parse().map_err(|e| Error::config(key, format!("cannot parse {raw:?}: {e}")))
            }
        }
    )*};
}

from_str_value!(f64, usize, u64, bool);

impl Value for String {
    fn render(&self) -> String {
        self.clone()
    }

    fn parse(_key: &str, raw: &str) -> Result<Self> {
        Ok(raw.to_string())
    }
}

macro_rules! config_keys {
    ($($key:literal => ($($field:tt)+) : $ty:ty),* $(,)?) => {
        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// `(key, rendered value)` in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, Value::render(&self.$($field)+))),*]
            }

            /// Sets one key from its textual value. Does not validate the
            /// config as a whole.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $($key => self.$($field)+ = <$ty as Value>::parse(key, raw)?,)*
                    _ => return Err(Error::UnknownKey(key.to_string())),
                }
                Ok(())
            }
        }
    };
}

config_keys! {
    "seed" => (seed): u64,
    "image_side" => (image_side): usize,
    "data.source" => (data.source): String,
    "data.photos" => (data.photos): String,
    "data.pairs" => (data.pairs): String,
    "data.split" => (data.split): f64,
    "data.toy_count" => (data.toy_count): usize,
    "data.toy_tau_max" => (data.toy_tau_max): f64,
    "linemap.tau" => (linemap.tau): f64,
    "linemap.l_min" => (linemap.l_min): usize,
    "generator.base_channels" => (generator.base_channels): usize,
    "generator.n_down" => (generator.n_down): usize,
    "generator.csam" => (generator.csam): bool,
    "generator.spectral_norm" => (generator.spectral_norm): bool,
    "discriminator.n_d" => (discriminator.n_d): usize,
    "discriminator.shared_depth" => (discriminator.shared_depth): usize,
    "discriminator.base_channels" => (discriminator.base_channels): usize,
    "discriminator.spectral_norm" => (discriminator.spectral_norm): bool,
    "loss.lambda" => (loss.lambda): f64,
    "loss.mu" => (loss.mu): f64,
    "train.batch_size" => (train.batch_size): usize,
    "train.checkpoint_every" => (train.checkpoint_every): u64,
    "stage1.epochs" => (stages[0].epochs): usize,
    "stage1.lr_g" => (stages[0].lr_g): f64,
    "stage1.lr_d" => (stages[0].lr_d): f64,
    "stage1.decay_at" => (stages[0].decay_at): f64,
    "stage1.decay_factor" => (stages[0].decay_factor): f64,
    "stage2.epochs" => (stages[1].epochs): usize,
    "stage2.lr_g" => (stages[1].lr_g): f64,
    "stage2.lr_d" => (stages[1].lr_d): f64,
    "stage2.decay_at" => (stages[1].decay_at): f64,
    "stage2.decay_factor" => (stages[1].decay_factor): f64,
    "stage3.epochs" => (stages[2].epochs): usize,
    "stage3.lr_g" => (stages[2].lr_g): f64,
    "stage3.lr_d" => (stages[2].lr_d): f64,
    "stage3.decay_at" => (stages[2].decay_at): f64,
    "stage3.decay_factor" => (stages[2].decay_factor): f64,
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Applies the assignments in `text` without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("override must look like key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.generator.base_channels,
            n_down: self.generator.n_down,
            image_side: self.image_side,
            csam_enabled: self.generator.csam,
            spectral_norm: self.generator.spectral_norm,
        }
    }

    pub fn discriminator_config(&self) -> Result<DiscriminatorConfig> {
        let d = &self.discriminator;
        let mut c = DiscriminatorConfig::with_trunk(self.image_side, d.n_d, d.shared_depth)
            .map_err(|e| Error::config("discriminator.n_d", e.to_string()))?;
        c.base_channels = d.base_channels;
        c.spectral_norm = d.spectral_norm;
        Ok(c)
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { stages: self.stages, batch_size: self.train.batch_size, weights: self.loss }
    }

    /// Generator scales, finest first.
    pub fn scales(&self) -> Vec<usize> {
        self.generator_config().scales()
    }

    /// Checks every key; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive and finite, got {v}")))
            }
        };
        if !matches!(self.data.source.as_str(), "dir" | "toy") {
            return Err(Error::config("data.source", format!("must be `dir` or `toy`, got {:?}", self.data.source)));
        }
        if !(self.data.split > 0.0 && self.data.split < 1.0) {
            return Err(Error::config("data.split", format!("must lie in (0, 1), got {}", self.data.split)));
        }
        if self.data.toy_count < 2 {
            return Err(Error::config("data.toy_count", "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.linemap.tau) {
            return Err(Error::config("linemap.tau", format!("must lie in [0, 1], got {}", self.linemap.tau)));
        }
        if !(self.linemap.tau..=1.0).contains(&self.data.toy_tau_max) {
            return Err(Error::config("data.toy_tau_max", "must lie between linemap.tau and 1"));
        }
        if self.linemap.l_min == 0 {
            return Err(Error::config("linemap.l_min", "must be at least 1"));
        }
        if let Err(e) = self.generator_config().validate() {
            let key = if self.generator.base_channels < 8 { "generator.base_channels" } else { "generator.n_down" };
            return Err(Error::config(key, e.to_string()));
        }
        if self.image_side < csagan_core::linemap::MIN_PHOTO_SIDE {
            return Err(Error::config("image_side", format!("must be at least {}", csagan_core::linemap::MIN_PHOTO_SIDE)));
        }
        if !(1..=4).contains(&self.discriminator.n_d) {
            return Err(Error::config("discriminator.n_d", format!("must lie in 1..=4, got {}", self.discriminator.n_d)));
        }
        if self.discriminator.base_channels == 0 {
            return Err(Error::config("discriminator.base_channels", "must be at least 1"));
        }
        self.discriminator_config()?;
        positive("loss.lambda", self.loss.lambda)?;
        positive("loss.mu", self.loss.mu)?;
        if self.train.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.train.checkpoint_every == 0 {
            return Err(Error::config("train.checkpoint_every", "must be at least 1"));
        }
        for (i, p) in self.stages.iter().enumerate() {
            let key = |f: &str| format!("stage{}.{f}", i + 1);
            positive(&key("lr_g"), p.lr_g)?;
            positive(&key("lr_d"), p.lr_d)?;
            positive(&key("decay_factor"), p.decay_factor)?;
            if !(0.0..=1.0).contains(&p.decay_at) {
                return Err(Error::config(key("decay_at"), format!("must lie in [0, 1], got {}", p.decay_at)));
            }
        }
        Ok(())
    }
}
