//! Versioned binary checkpoints of a [`TrainingState`].
//!
//! Layout: `CSCK`, format version (`u32`), payload length (`u64`), FNV-1a
//! hash of the payload (`u64`), payload. All integers are little-endian and
//! every float is stored as its raw bits, so a save/load round trip is
//! bit-exact. The payload holds the counters and seed, both model configs,
//! then for each model its named parameter blobs, spectral vectors and Adam
//! moments. Loading rebuilds each model from its config and checks that
//! every stored parameter matches the rebuilt one by name and shape.

use std::path::Path;

use csagan_core::adam::AdamState;
use csagan_core::discriminator::{Discriminator, DiscriminatorConfig};
use csagan_core::generator::{Generator, GeneratorConfig};
use csagan_core::layers::{ParamGroup, ParamSet};
use csagan_core::spectral::SpectralState;
use csagan_core::training::TrainingState;
use csagan_core::Tensor;

use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 4] = b"CSCK";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("payload ends early at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(self.path, "length does not fit in memory"))
    }

    /// A length that must be backed by at least `unit` bytes per element.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(Error::format(self.path, format!("length {n} exceeds the remaining payload")));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::format(self.path, format!("invalid boolean byte {b}"))),
        }
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "parameter name is not UTF-8"))
    }
}

fn put_params(e: &mut Enc, params: &ParamSet, adam: &[AdamState]) {
    e.usize(params.params.len());
    for p in &params.params {
        e.str(&p.name);
        e.u8(matches!(p.group, ParamGroup::Csam) as u8);
        e.u64(p.spectral.map_or(u64::MAX, |s| s as u64));
        e.usize(p.value.shape().len());
        p.value.shape().iter().for_each(|&d| e.usize(d));
        e.f64s(p.value.data());
    }
    e.usize(params.spectral.len());
    for s in &params.spectral {
        e.usize(s.n_power_iterations);
        e.f64s(&s.u);
    }
    e.usize(adam.len());
    for a in adam {
        e.u64(a.t);
        e.f64(a.beta1);
        e.f64(a.beta2);
        e.f64(a.eps);
        e.f64s(&a.m);
        e.f64s(&a.v);
    }
}

/// Reads parameters into `params`, which must already have the same layout.
fn get_params(d: &mut Dec, params: &mut ParamSet, what: &str) -> Result<Vec<AdamState>> {
    let path = d.path;
    let n = d.len(1)?;
    if n != params.params.len() {
        return Err(Error::format(path, format!("{what} has {n} parameters, the model has {}", params.params.len())));
    }
    for p in params.params.iter_mut() {
        let name = d.str()?;
        let group = if d.u8()? == 1 { ParamGroup::Csam } else { ParamGroup::Main };
        let spectral = match d.u64()? {
            u64::MAX => None,
            s => Some(s as usize),
        };
        let rank = d.len(8)?;
        let shape = (0..rank).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
        let data = d.f64s()?;
        if name != p.name || shape != p.value.shape() || group != p.group || spectral != p.spectral {
            return Err(Error::format(
                path,
                format!("stored parameter {name} {shape:?} does not match model parameter {} {:?}", p.name, p.value.shape()),
            ));
        }
        p.value = Tensor::param(&shape, data)?;
    }
    let ns = d.len(16)?;
    if ns != params.spectral.len() {
        return Err(Error::format(path, format!("{what} has {ns} spectral states, the model has {}", params.spectral.len())));
    }
    for s in params.spectral.iter_mut() {
        let n_power_iterations = d.usize()?;
        let u = d.f64s()?;
        if u.len() != s.u.len() {
            return Err(Error::format(path, "spectral vector length mismatch"));
        }
        *s = SpectralState { u, n_power_iterations };
    }
    let na = d.len(48)?;
    if na != params.params.len() {
        return Err(Error::format(path, format!("{what} has {na} optimizer states for {} parameters", params.params.len())));
    }
    let mut adam = Vec::with_capacity(na);
    for p in &params.params {
        let t = d.u64()?;
        let (beta1, beta2, eps) = (d.f64()?, d.f64()?, d.f64()?);
        let (m, v) = (d.f64s()?, d.f64s()?);
        if m.len() != p.value.len() || v.len() != p.value.len() {
            return Err(Error::format(path, format!("optimizer moments for {} have the wrong length", p.name)));
        }
        adam.push(AdamState { m, v, t, beta1, beta2, eps });
    }
    Ok(adam)
}

fn put_configs(e: &mut Enc, g: &GeneratorConfig, d: &DiscriminatorConfig) {
    e.usize(g.base_channels);
    e.usize(g.n_down);
    e.usize(g.image_side);
    e.u8(g.csam_enabled as u8);
    e.u8(g.spectral_norm as u8);
    e.usize(d.n_d);
    e.usize(d.shared_depth);
    e.usize(d.depths.len());
    d.depths.iter().for_each(|&x| e.usize(x));
    e.usize(d.kernel);
    e.usize(d.stride);
    e.usize(d.base_channels);
    e.usize(d.image_side);
    e.u8(d.spectral_norm as u8);
}

fn get_configs(d: &mut Dec) -> Result<(GeneratorConfig, DiscriminatorConfig)> {
    let g = GeneratorConfig {
        base_channels: d.usize()?,
        n_down: d.usize()?,
        image_side: d.usize()?,
        csam_enabled: d.bool()?,
        spectral_norm: d.bool()?,
    };
    let n_d = d.usize()?;
    let shared_depth = d.usize()?;
    let nd = d.len(8)?;
    let depths = (0..nd).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
    let dc = DiscriminatorConfig {
        n_d,
        shared_depth,
        depths,
        kernel: d.usize()?,
        stride: d.usize()?,
        base_channels: d.usize()?,
        image_side: d.usize()?,
        spectral_norm: d.bool()?,
    };
    Ok((g, dc))
}

pub fn encode(state: &TrainingState) -> Vec<u8> {
    let mut e = Enc::default();
    e.u64(state.seed);
    e.u8(state.stage);
    e.u8(state.stage_complete as u8);
    e.usize(state.epoch);
    e.usize(state.cursor);
    e.u64(state.global_step);
    put_configs(&mut e, &state.generator.config, &state.discriminator.config);
    put_params(&mut e, &state.generator.params, &state.adam_g);
    put_params(&mut e, &state.discriminator.params, &state.adam_d);
    let payload = e.0;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<TrainingState> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("checkpoint format version {version}, expected {FORMAT_VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let hash = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(Error::format(path, format!("payload is {} bytes, header says {len} (truncated?)", payload.len())));
    }
    if fnv1a(payload) != hash {
        return Err(Error::format(path, "checksum mismatch"));
    }
    let mut d = Dec { buf: payload, pos: 0, path };
    let seed = d.u64()?;
    let stage = d.u8()?;
    if !(1..=3).contains(&stage) {
        return Err(Error::format(path, format!("invalid stage {stage}")));
    }
    let stage_complete = d.bool()?;
    let epoch = d.usize()?;
    let cursor = d.usize()?;
    let global_step = d.u64()?;
    let (gc, dc) = get_configs(&mut d)?;
    dc.validate()?;
    let mut generator = Generator::new(gc, seed)?;
    let mut discriminator = Discriminator::new(dc, seed)?;
    let adam_g = get_params(&mut d, &mut generator.params, "generator")?;
    let adam_d = get_params(&mut d, &mut discriminator.params, "discriminator")?;
    if d.pos != payload.len() {
        return Err(Error::format(path, format!("{} trailing bytes", payload.len() - d.pos)));
    }
    Ok(TrainingState { generator, discriminator, adam_g, adam_d, stage, stage_complete, epoch, cursor, global_step, seed })
}

pub fn save(path: &Path, state: &TrainingState) -> Result<()> {
    write_atomic(path, &encode(state))
}

pub fn load(path: &Path) -> Result<TrainingState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Hash of everything a checkpoint stores, for cheap equality checks.
pub fn state_hash(state: &TrainingState) -> u64 {
    fnv1a(&encode(state))
}
