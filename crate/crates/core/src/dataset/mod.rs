//! Labels, labeled images, directory loading, and stratified splitting.
//!
//! A dataset directory holds one subdirectory per class slug:
//! `<root>/<slug>/*.{pgm,ppm,png}`. Every image is preprocessed to a
//! `1x32x32` tensor in `[-1, 1]`, and items are kept sorted by their
//! `<slug>/<file>` source so training order never depends on the filesystem.

mod decode;
mod preprocess;
mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub use decode::{decode_image, encode_pnm, RawImage};
pub use preprocess::{normalize, preprocess, resize_bilinear, rgb_to_gray, INPUT_SIZE};
pub use synth::{synth_dataset, synth_image, write_dataset, TextureFamily};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

/// The twelve hazard classes; the discriminants are the network output indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Crosswalk = 0,
    Curbs = 1,
    Ramp = 2,
    StairsAscending = 3,
    StairsDescending = 4,
    Gravel = 5,
    Concrete = 6,
    Tiles = 7,
    Bricks = 8,
    Carpets = 9,
    Snow = 10,
    Rocks = 11,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Crosswalk,
        ClassLabel::Curbs,
        ClassLabel::Ramp,
        ClassLabel::StairsAscending,
        ClassLabel::StairsDescending,
        ClassLabel::Gravel,
        ClassLabel::Concrete,
        ClassLabel::Tiles,
        ClassLabel::Bricks,
        ClassLabel::Carpets,
        ClassLabel::Snow,
        ClassLabel::Rocks,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or_else(|| {
            Error::Label(format!("class index {index} out of range 0..{NUM_CLASSES}"))
        })
    }

    pub fn slug(self) -> &'static str {
        match self {
            ClassLabel::Crosswalk => "crosswalk",
            ClassLabel::Curbs => "curbs",
            ClassLabel::Ramp => "ramp",
            ClassLabel::StairsAscending => "stairs_ascending",
            ClassLabel::StairsDescending => "stairs_descending",
            ClassLabel::Gravel => "gravel",
            ClassLabel::Concrete => "concrete",
            ClassLabel::Tiles => "tiles",
            ClassLabel::Bricks => "bricks",
            ClassLabel::Carpets => "carpets",
            ClassLabel::Snow => "snow",
            ClassLabel::Rocks => "rocks",
        }
    }

    pub fn valid_slugs() -> String {
        Self::ALL.map(|c| c.slug()).join(", ")
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.slug() == s)
            .ok_or_else(|| {
                Error::Label(format!(
                    "unknown class `{s}`; valid labels are: {}",
                    Self::valid_slugs()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `1x32x32`, entries in `[-1, 1]`
    pub tensor: Tensor,
    pub label: ClassLabel,
    /// `<slug>/<file name>` for loaded or synthesized images
    pub source: String,
}

/// Ordered collection of labeled images, sorted by source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    items: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(mut items: Vec<LabeledImage>) -> Self {
        items.sort_by(|a, b| a.source.cmp(&b.source));
        Dataset { items }
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledImage> {
        self.items.iter()
    }

    /// Sample count per class index.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for item in &self.items {
            h[item.label.index()] += 1;
        }
        h
    }

    /// Concatenation, re-sorted by source.
    pub fn merged(&self, other: &Dataset) -> Dataset {
        Dataset::new(self.items.iter().chain(&other.items).cloned().collect())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a LabeledImage;
    type IntoIter = std::slice::Iter<'a, LabeledImage>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

#[derive(Debug)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// Undecodable files passed over in non-strict mode.
    pub skipped: Vec<SkippedFile>,
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "png"))
        .unwrap_or(false)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads `<root>/<slug>/*.{pgm,ppm,png}`.
///
/// Hidden entries and files with other extensions are ignored. With `strict`
/// an undecodable image fails the load; otherwise it is logged and skipped.
pub fn load_dataset(root: &Path, strict: bool) -> Result<LoadReport> {
    let mut items = Vec::new();
    let mut skipped = Vec::new();

    for class_dir in read_dir_sorted(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let Some(name) = class_dir.file_name().and_then(|n| n.to_str()) else {
            return Err(Error::Label(format!(
                "non UTF-8 directory name {}",
                class_dir.display()
            )));
        };
        if name.starts_with('.') {
            continue;
        }
        let label: ClassLabel = name.parse()?;

        for file in read_dir_sorted(&class_dir)? {
            let hidden = file
                .file_name()
                .and_then(|n| n.to_str())
                .is_none_or(|n| n.starts_with('.'));
            if hidden || !file.is_file() || !is_image_file(&file) {
                continue;
            }
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            match decode_image(&bytes).and_then(|raw| preprocess(&raw)) {
                Ok(tensor) => items.push(LabeledImage {
                    tensor,
                    label,
                    source: format!(
                        "{name}/{}",
                        file.file_name().unwrap_or_default().to_string_lossy()
                    ),
                }),
                Err(e) if strict => return Err(Error::Decode(format!("{}: {e}", file.display()))),
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    skipped.push(SkippedFile {
                        path: file,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    if items.is_empty() {
        return Err(Error::Data(format!(
            "no images found under {}",
            root.display()
        )));
    }
    Ok(LoadReport {
        dataset: Dataset::new(items),
        skipped,
    })
}

/// Stratified split: each class is shuffled and its first `ceil(fraction * n)`
/// samples go to the training side.
///
/// Classes are visited in index order with one xoshiro256++ stream seeded by
/// `seed`. A class with two or more samples always keeps at least one sample
/// on each side. Both outputs stay sorted by source.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Data(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut in_train = vec![false; ds.len()];

    for class in ClassLabel::ALL {
        let mut members: Vec<usize> = ds
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.label == class)
            .map(|(i, _)| i)
            .collect();
        let n = members.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(Error::Data(format!(
                "class `{class}` has {n} sample; at least 2 are needed to populate both splits"
            )));
        }
        members.shuffle(&mut rng);
        let n_train = ((train_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (item, &t) in ds.items.iter().zip(&in_train) {
        if t {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok((Dataset { items: train }, Dataset { items: test }))
}
