//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use csagan_core::gradcheck;
use csagan_core::image::RgbImage;
use csagan_core::linemap::{build_condition_pyramid, distance_field, DistanceField, GradientDetector};
use csagan_core::metrics::{frechet_distance, inception_score, kid, FeatureProvider, RandomProjection, ToyClassifier};
use csagan_core::precision::{set_precision, Precision};
use log::info;
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{list_files, make_dataset, photo_linemap, read_photos, write_split, EdgeSource, Photo};
use crate::error::{Error, Result};
use crate::io::{read_csdf, read_linemap, read_rgb, square_resize, write_atomic, write_linemap, write_rgb};
use crate::run::{train_in_dir, RunDir};

pub const PRECISION_ENV: &str = "CSAGAN_PRECISION";

#[derive(Debug, Parser)]
#[command(name = "csagan", version, about = "Line-map to photo translation with conditional self-attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file; keys not given keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set stage1.epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        }
        for o in &self.overrides {
            c.apply_override(o)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a photo folder and write photos, line maps and distance fields.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lmin: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        split: Option<f64>,
        /// Folder of precomputed grayscale edge-probability PNGs named like
        /// the photos, used instead of the built-in detector.
        #[arg(long)]
        probs: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train (or resume training) in a run directory.
    Train {
        #[arg(long)]
        run: PathBuf,
        /// Stop after this many global steps.
        #[arg(long)]
        max_steps: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a photo from a line-map PNG or a CSDF distance field.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// IS, FID and KID between two image folders, as JSON.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// `projection` or `toy`.
        #[arg(long, default_value = "projection")]
        provider: String,
        #[arg(long, default_value_t = 1)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite at 64-bit precision.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Regenerate one photo's output at several line-map thresholds.
    TauSweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        photo: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.6")]
        taus: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = csagan_core::linemap::DEFAULT_L_MIN)]
        lmin: usize,
    },
}

/// Engine precision from the environment, falling back to `default`.
pub fn precision_from_env(default: Precision) -> Result<Precision> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) => v.parse().map_err(|e: csagan_core::Error| Error::config(PRECISION_ENV, e.to_string())),
        Err(_) => Ok(default),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub provider: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub is_mean: f64,
    pub is_std: f64,
    pub fid: f64,
    pub kid: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { input, out, tau, lmin, seed, split, probs, cfg } => {
            let mut c = cfg.resolve()?;
            if let Some(v) = tau {
                c.linemap.tau = v;
            }
            if let Some(v) = lmin {
                c.linemap.l_min = v;
            }
            if let Some(v) = seed {
                c.seed = v;
            }
            if let Some(v) = split {
                c.data.split = v;
            }
            c.validate()?;
            preprocess(&input, &out, &c, probs.as_deref())
        }
        Command::Train { run, max_steps, cfg } => {
            set_precision(precision_from_env(Precision::F32)?);
            let dir = RunDir::new(run);
            let c = if cfg.config.is_none() && cfg.overrides.is_empty() && dir.config().exists() {
                RunConfig::load(&dir.config())?
            } else {
                cfg.resolve()?
            };
            let (train, test) = crate::dataset::load_data(&c)?;
            info!("{} training pairs, {} held out", train.len(), test.len());
            let s = train_in_dir(&dir, &c, &train, max_steps)?;
            println!("step {} stage {}{}", s.global_step, s.stage, if s.finished { " (finished)" } else { "" });
            Ok(())
        }
        Command::Generate { ckpt, input, out } => {
            set_precision(precision_from_env(Precision::F32)?);
            let img = generate(&ckpt, &input)?;
            write_rgb(&out, &img)
        }
        Command::Evaluate { real, fake, provider, splits, seed, out } => {
            set_precision(precision_from_env(Precision::F64)?);
            let report = evaluate(&real, &fake, &provider, splits, seed)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Invalid(e.to_string()))?;
            if let Some(path) = out {
                write_atomic(&path, json.as_bytes())?;
            }
            println!("{json}");
            Ok(())
        }
        Command::Gradcheck { seed } => {
            if precision_from_env(Precision::F64)? == Precision::F32 {
                log::warn!("{PRECISION_ENV}=f32 ignored: gradient checks always run at 64-bit");
            }
            set_precision(Precision::F64);
            let mut reports = gradcheck::suite(seed)?;
            reports.push(gradcheck::end_to_end(seed)?);
            let mut failed = 0;
            for r in &reports {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!("{verdict:<4} {:<32} {:>5} coords  max rel err {:.3e} (tol {:e})", r.name, r.coords, r.max_rel_error, r.tolerance);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(Error::Invalid(format!("{failed} gradient checks failed")));
            }
            Ok(())
        }
        Command::TauSweep { ckpt, photo, taus, out, lmin } => {
            set_precision(precision_from_env(Precision::F32)?);
            for path in tau_sweep(&ckpt, &photo, &taus, lmin, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

pub fn preprocess(input: &Path, out: &Path, c: &RunConfig, probs: Option<&Path>) -> Result<()> {
    let (train, test) = make_dataset(input, c.image_side, c.data.split, c.seed)?;
    let detector = GradientDetector;
    let source = match probs {
        Some(dir) => EdgeSource::Directory(dir),
        None => EdgeSource::Detector(&detector),
    };
    write_split(&out.join("train"), &train, &source, c.linemap.tau, c.linemap.l_min)?;
    write_split(&out.join("test"), &test, &source, c.linemap.tau, c.linemap.l_min)?;
    info!("wrote {} train and {} test pairs to {}", train.len(), test.len(), out.display());
    Ok(())
}

fn field_from_input(input: &Path) -> Result<DistanceField> {
    if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csdf")) {
        read_csdf(input)
    } else {
        Ok(distance_field(&read_linemap(input)?))
    }
}

pub fn generate(ckpt: &Path, input: &Path) -> Result<RgbImage> {
    let g = checkpoint::load(ckpt)?.generator;
    let field = field_from_input(input)?;
    let side = g.config.image_side;
    if field.height != side || field.width != side {
        return Err(Error::Invalid(format!("{} is {}x{}, the model expects {side}x{side}", input.display(), field.height, field.width)));
    }
    let pyramid = build_condition_pyramid(&field, &g.config.scales())?;
    Ok(RgbImage::from_tensor(&g.generate_from_pyramid(&pyramid)?)?)
}

/// Writes `lines_tau<τ>.png` and `output_tau<τ>.png` for each threshold.
pub fn tau_sweep(ckpt: &Path, photo: &Path, taus: &[f64], l_min: usize, out: &Path) -> Result<Vec<PathBuf>> {
    if taus.is_empty() {
        return Err(Error::Invalid("no thresholds given".into()));
    }
    let g = checkpoint::load(ckpt)?.generator;
    let side = g.config.image_side;
    let photo = Photo { name: "photo".into(), image: square_resize(&read_rgb(photo)?, side) };
    let detector = GradientDetector;
    let mut written = Vec::new();
    for &tau in taus {
        let lines = photo_linemap(&photo, &EdgeSource::Detector(&detector), tau, l_min)?;
        let pyramid = build_condition_pyramid(&distance_field(&lines), &g.config.scales())?;
        let img = RgbImage::from_tensor(&g.generate_from_pyramid(&pyramid)?)?;
        let lines_path = out.join(format!("lines_tau{tau:.2}.png"));
        let out_path = out.join(format!("output_tau{tau:.2}.png"));
        write_linemap(&lines_path, &lines)?;
        write_rgb(&out_path, &img)?;
        written.push(out_path);
    }
    Ok(written)
}

pub fn evaluate(real: &Path, fake: &Path, provider: &str, splits: usize, seed: u64) -> Result<EvalReport> {
    let load = |dir: &Path| -> Result<Vec<RgbImage>> {
        let first = list_files(dir)?.into_iter().find_map(|p| read_rgb(&p).ok());
        let side = first.map(|i| i.height.min(i.width)).ok_or_else(|| Error::Invalid(format!("{} holds no images", dir.display())))?;
        Ok(read_photos(dir, side)?.into_iter().map(|p| p.image).collect())
    };
    let (a, b) = (load(real)?, load(fake)?);
    let side = a[0].height;
    let b: Vec<RgbImage> = b.iter().map(|img| if img.height == side { img.clone() } else { square_resize(img, side) }).collect();
    let p: Box<dyn FeatureProvider> = match provider {
        "projection" => Box::new(RandomProjection::new(64, 10, seed)?),
        "toy" => Box::new(ToyClassifier::train(side, 600, 15, seed)?),
        other => return Err(Error::Invalid(format!("unknown provider {other:?} (expected projection or toy)"))),
    };
    let (fa, fb) = (p.features(&a)?, p.features(&b)?);
    let (is_mean, is_std) = inception_score(&p.class_probs(&b)?, splits.clamp(1, b.len()))?;
    Ok(EvalReport {
        provider: p.id(),
        n_real: a.len(),
        n_fake: b.len(),
        is_mean,
        is_std,
        fid: frechet_distance(&fa, &fb)?,
        kid: kid(&fa, &fb)?,
    })
}
