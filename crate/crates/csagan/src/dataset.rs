//! Photo folders, preprocessing into pairs, and toy data.
//!
//! A preprocessed split directory holds, per photo stem, `<stem>.png` (the
//! square photo), `<stem>.lines.png` (the line map) and `<stem>.csdf` (its
//! distance field).

use std::path::{Path, PathBuf};

use csagan_core::image::RgbImage;
use csagan_core::linemap::{
    build_condition_pyramid, distance_field, extract_linemap, split_indices, EdgeDetector, LineMap,
    ProbEdgeMap,
};
use csagan_core::toy::{toy_dataset, ToyConfig};
use csagan_core::training::Pair;
use log::warn;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{read_csdf, read_prob_map, read_rgb, square_resize, write_csdf, write_linemap, write_rgb};

#[derive(Debug, Clone)]
pub struct Photo {
    pub name: String,
    pub image: RgbImage,
}

/// Regular files of `dir`, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads every decodable image in `dir`, center-cropped and resized to
/// `side`. Unreadable files are skipped with a warning.
pub fn read_photos(dir: &Path, side: usize) -> Result<Vec<Photo>> {
    let files = list_files(dir)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!("{} contains no files", dir.display())));
    }
    let mut photos = Vec::new();
    for path in files {
        match read_rgb(&path) {
            Ok(img) if !img.is_empty() => photos.push(Photo { name: stem(&path), image: square_resize(&img, side) }),
            Ok(_) => warn!("skipping empty image {}", path.display()),
            Err(e) => warn!("skipping unreadable file: {e}"),
        }
    }
    Ok(photos)
}

/// Deterministic train/test partition of the readable photos in `dir`.
pub fn make_dataset(dir: &Path, side: usize, split: f64, seed: u64) -> Result<(Vec<Photo>, Vec<Photo>)> {
    let photos = read_photos(dir, side)?;
    if photos.len() < 2 {
        return Err(Error::Invalid(format!("{} holds {} readable images, need at least 2", dir.display(), photos.len())));
    }
    let (train, test) = split_indices(photos.len(), split, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| photos[i].clone()).collect();
    Ok((pick(&train), pick(&test)))
}

/// Where edge probabilities come from during preprocessing.
pub enum EdgeSource<'a> {
    Detector(&'a dyn EdgeDetector),
    /// Grayscale probability PNGs named after each photo's stem.
    Directory(&'a Path),
}

impl EdgeSource<'_> {
    fn probabilities(&self, photo: &Photo) -> Result<ProbEdgeMap> {
        match self {
            EdgeSource::Detector(d) => Ok(d.detect(&photo.image)?),
            EdgeSource::Directory(dir) => {
                let p = read_prob_map(&dir.join(format!("{}.png", photo.name)))?;
                if p.height != photo.image.height || p.width != photo.image.width {
                    return Err(Error::Invalid(format!(
                        "probability map for {} is {}x{}, photo is {}x{}",
                        photo.name, p.height, p.width, photo.image.height, photo.image.width
                    )));
                }
                Ok(p)
            }
        }
    }
}

/// Line map of one photo.
pub fn photo_linemap(photo: &Photo, source: &EdgeSource, tau: f64, l_min: usize) -> Result<LineMap> {
    Ok(extract_linemap(&source.probabilities(photo)?, tau, l_min)?)
}

/// Writes the photo, line map and distance field of every photo into `out`.
pub fn write_split(out: &Path, photos: &[Photo], source: &EdgeSource, tau: f64, l_min: usize) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for photo in photos {
        let lines = photo_linemap(photo, source, tau, l_min)?;
        write_rgb(&out.join(format!("{}.png", photo.name)), &photo.image)?;
        write_linemap(&out.join(format!("{}.lines.png", photo.name)), &lines)?;
        write_csdf(&out.join(format!("{}.csdf", photo.name)), &distance_field(&lines))?;
    }
    Ok(())
}

/// Training pairs from a preprocessed split directory.
pub fn load_pairs(dir: &Path, config: &RunConfig) -> Result<Vec<Pair>> {
    let gc = config.generator_config();
    let mut pairs = Vec::new();
    for path in list_files(dir)? {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(stem) = name.strip_suffix(".csdf") else { continue };
        let field = read_csdf(&path)?;
        let photo = read_rgb(&dir.join(format!("{stem}.png")))?;
        if photo.height != gc.image_side || photo.width != gc.image_side || field.height != gc.image_side {
            return Err(Error::Invalid(format!(
                "{stem}: pair is {}x{} but image_side is {}",
                photo.height, photo.width, gc.image_side
            )));
        }
        let pyramid = build_condition_pyramid(&field, &gc.scales())?;
        pairs.push(Pair::from_pyramid(&pyramid, photo.to_tensor(), &gc)?);
    }
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("{} holds no preprocessed pairs", dir.display())));
    }
    Ok(pairs)
}

/// Toy pairs split into train and test sets.
pub fn toy_pairs(config: &RunConfig) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let gc = config.generator_config();
    let tc = ToyConfig {
        side: config.image_side,
        count: config.data.toy_count,
        tau: (config.linemap.tau, config.data.toy_tau_max),
        l_min: config.linemap.l_min,
        seed: config.seed,
    };
    let samples = toy_dataset(&tc, &gc.scales())?;
    let pairs = samples
        .iter()
        .map(|s| Pair::from_pyramid(&s.pyramid, s.photo.to_tensor(), &gc))
        .collect::<csagan_core::Result<Vec<_>>>()?;
    let (train, test) = split_indices(pairs.len(), config.data.split, config.seed)?;
    Ok((train.iter().map(|&i| pairs[i].clone()).collect(), test.iter().map(|&i| pairs[i].clone()).collect()))
}

/// Train and test pairs for `config`.
pub fn load_data(config: &RunConfig) -> Result<(Vec<Pair>, Vec<Pair>)> {
    if config.data.source == "toy" {
        return toy_pairs(config);
    }
    let root = Path::new(&config.data.pairs);
    let train = load_pairs(&root.join("train"), config)?;
    let test_dir = root.join("test");
    let test = if test_dir.is_dir() { load_pairs(&test_dir, config)? } else { Vec::new() };
    Ok((train, test))
}
