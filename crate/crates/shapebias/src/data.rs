//! Dataset sources: CIFAR-10 binary batches, PNG dataset directories and the
//! built-in synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapebias_core::cifar;
use shapebias_core::distort::DistortionSpec;
use shapebias_core::image::{Image, LabeledDataset};
use shapebias_core::rng::derive_seed;
use shapebias_core::synthetic::SyntheticSpec;

use crate::codec;
use crate::error::{format_err, io_err, Error, Result};

pub const CIFAR_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

fn read_batches(dir: &Path, files: &[&str]) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let (im, lb) = cifar::parse_records(&bytes).map_err(|e| format_err(&path, e.to_string()))?;
        images.extend(im);
        labels.extend(lb);
    }
    Ok(LabeledDataset::new(images, labels, cifar::class_names())?)
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let missing: Vec<&str> =
        CIFAR_TRAIN_FILES.iter().chain([&CIFAR_TEST_FILE]).filter(|f| !dir.join(f).is_file()).copied().collect();
    if !missing.is_empty() {
        return Err(format_err(dir, format!("missing CIFAR-10 batch files: {}", missing.join(", "))));
    }
    Ok((read_batches(dir, &CIFAR_TRAIN_FILES)?, read_batches(dir, &[CIFAR_TEST_FILE])?))
}

pub fn is_cifar_dir(dir: &Path) -> bool {
    dir.join(CIFAR_TEST_FILE).is_file() || dir.join(CIFAR_TRAIN_FILES[0]).is_file()
}

/// Per-image provenance recorded in `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub index: usize,
    pub label: usize,
    /// SHA-256 of the source pixels as little-endian f64.
    pub source_sha256: String,
    /// SHA-256 of the stored 8-bit RGB bytes.
    pub output_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub source: String,
    pub distortion: Option<DistortionSpec>,
    pub master_seed: u64,
    pub class_names: Vec<String>,
    /// Set when patch geometry forced a central crop.
    pub cropped_to: Option<(usize, usize)>,
    pub images: Vec<ImageRecord>,
}

pub fn source_hash(img: &Image) -> String {
    let mut h = Sha256::new();
    for v in img.pixels() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn output_hash(img: &Image) -> String {
    hex::encode(Sha256::digest(img.to_bytes()))
}

pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn image_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Writes `{index:06}.png`, `labels.csv` and `manifest.json` under `dir`.
pub fn write_dataset_dir(
    dir: &Path,
    data: &LabeledDataset,
    source: &LabeledDataset,
    source_name: &str,
    distortion: Option<DistortionSpec>,
) -> Result<Manifest> {
    if source.len() != data.len() {
        return Err(Error::Core(shapebias_core::Error::Alignment { clean: source.len(), transformed: data.len() }));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut wtr = csv::Writer::from_path(dir.join(LABELS_FILE)).map_err(|e| format_err(&dir.join(LABELS_FILE), e.to_string()))?;
    wtr.write_record(["index", "label"]).map_err(|e| format_err(dir, e.to_string()))?;
    let mut records = Vec::with_capacity(data.len());
    for (i, (img, &label)) in data.images().iter().zip(data.labels()).enumerate() {
        codec::write_png(img, &dir.join(image_file_name(i)))?;
        wtr.write_record([i.to_string(), label.to_string()]).map_err(|e| format_err(dir, e.to_string()))?;
        records.push(ImageRecord {
            index: i,
            label,
            source_sha256: source_hash(&source.images()[i]),
            output_sha256: output_hash(img),
        });
    }
    wtr.flush().map_err(io_err(dir))?;
    let first_src = source.images().first();
    let first_out = data.images().first();
    let cropped_to = match (first_src, first_out) {
        (Some(s), Some(o)) if (s.height(), s.width()) != (o.height(), o.width()) => Some((o.height(), o.width())),
        _ => None,
    };
    let manifest = Manifest {
        source: source_name.to_string(),
        distortion,
        master_seed: distortion.map_or(0, |d| d.seed),
        class_names: data.class_names().to_vec(),
        cropped_to,
        images: records,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Deserialize)]
struct LabelRow {
    index: usize,
    label: usize,
}

/// Reads a directory written by [`write_dataset_dir`] (the manifest is
/// optional; without it classes are named `class0`, `class1`, ...).
pub fn read_dataset_dir(dir: &Path) -> Result<LabeledDataset> {
    let labels_path = dir.join(LABELS_FILE);
    let mut rdr = csv::Reader::from_path(&labels_path).map_err(|e| format_err(&labels_path, e.to_string()))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (row_no, row) in rdr.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| format_err(&labels_path, e.to_string()))?;
        if row.index != row_no {
            return Err(format_err(&labels_path, format!("row {row_no} has index {}; rows must be 0, 1, 2, ...", row.index)));
        }
        images.push(codec::read_image(&dir.join(image_file_name(row.index)))?);
        labels.push(row.label);
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let class_names = if manifest_path.is_file() {
        read_json::<Manifest>(&manifest_path)?.class_names
    } else {
        let k = labels.iter().max().map_or(1, |m| m + 1).max(2);
        (0..k).map(|i| format!("class{i}")).collect()
    };
    Ok(LabeledDataset::new(images, labels, class_names)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Parses JSON with unknown keys rejected by the target type; errors name
/// the offending field path.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_json(&text).map_err(|detail| Error::Config { path: path.to_path_buf(), detail })
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> std::result::Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        if at == "." {
            e.inner().to_string()
        } else {
            format!("at `{at}`: {}", e.inner())
        }
    })
}

/// Where images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// `synthetic:TRAIN:TEST:SEED`
    Synthetic { train: usize, test: usize, seed: u64 },
    /// Directory holding CIFAR-10 binary batches.
    Cifar(PathBuf),
    /// Directory written by [`write_dataset_dir`]; serves as both splits.
    Directory(PathBuf),
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let bad = || Error::Usage(format!("bad synthetic source `{s}`; expected synthetic:TRAIN:TEST:SEED"));
            if parts.len() != 3 {
                return Err(bad());
            }
            return Ok(DataSource::Synthetic {
                train: parts[0].parse().map_err(|_| bad())?,
                test: parts[1].parse().map_err(|_| bad())?,
                seed: parts[2].parse().map_err(|_| bad())?,
            });
        }
        let path = PathBuf::from(s);
        if is_cifar_dir(&path) {
            Ok(DataSource::Cifar(path))
        } else if path.join(LABELS_FILE).is_file() {
            Ok(DataSource::Directory(path))
        } else {
            Err(Error::Usage(format!(
                "`{s}` is neither a CIFAR-10 batch directory, a dataset directory with {LABELS_FILE}, nor synthetic:TRAIN:TEST:SEED"
            )))
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Synthetic { train, test, seed } => write!(f, "synthetic:{train}:{test}:{seed}"),
            DataSource::Cifar(p) | DataSource::Directory(p) => write!(f, "{}", p.display()),
        }
    }
}

impl DataSource {
    pub fn synthetic_spec(count: usize, seed: u64, split: u64) -> SyntheticSpec {
        SyntheticSpec { count, seed: derive_seed(seed, &[split]), ..SyntheticSpec::default() }
    }

    pub fn train(&self) -> Result<LabeledDataset> {
        match self {
            DataSource::Synthetic { train, seed, .. } => Ok(Self::synthetic_spec(*train, *seed, 0).generate()?),
            DataSource::Cifar(dir) => Ok(read_batches(dir, &CIFAR_TRAIN_FILES)?),
            DataSource::Directory(dir) => read_dataset_dir(dir),
        }
    }

    pub fn test(&self) -> Result<LabeledDataset> {
        match self {
            DataSource::Synthetic { test, seed, .. } => Ok(Self::synthetic_spec(*test, *seed, 1).generate()?),
            DataSource::Cifar(dir) => Ok(read_batches(dir, &[CIFAR_TEST_FILE])?),
            DataSource::Directory(dir) => read_dataset_dir(dir),
        }
    }
}
