//! A built biased-MNIST dataset on disk: a JSON manifest that is sufficient to
//! regenerate every sample from the raw MNIST files, plus a binary sample blob.
//!
//! Blob layout (little endian): magic `DISPSMP1`, `u32` count, channels,
//! height, width, then per sample `u32` index, `u8` target, `u8` private,
//! `u8` split code and `channels × height × width` `f64` pixels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bias::{self, BiasConfig, Palette, SampleRecord, Split, Splits};
use super::idx::{self, RawMnistSet};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";
const BLOB_MAGIC: &[u8; 8] = b"DISPSMP1";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_rho")]
    pub test_rho: f64,
    #[serde(default = "default_threshold")]
    pub background_threshold: u8,
    #[serde(default)]
    pub downscale: bool,
    #[serde(default)]
    pub subset_size: Option<usize>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default)]
    pub palette: Palette,
    /// Directory holding the raw MNIST files; `DISP_MNIST_DIR` or `data/mnist` when absent.
    #[serde(default)]
    pub mnist_dir: Option<PathBuf>,
}

fn default_test_rho() -> f64 {
    0.1
}
fn default_threshold() -> u8 {
    25
}
fn default_fractions() -> [f64; 3] {
    [0.8, 0.04, 0.16]
}

impl DatasetConfig {
    pub fn new(rho: f64, seed: u64) -> Self {
        DatasetConfig {
            rho,
            seed,
            test_rho: default_test_rho(),
            background_threshold: default_threshold(),
            downscale: false,
            subset_size: None,
            fractions: default_fractions(),
            palette: Palette::default(),
            mnist_dir: None,
        }
    }

    pub fn bias(&self) -> BiasConfig {
        BiasConfig {
            rho: self.rho,
            seed: self.seed,
            background_threshold: self.background_threshold,
            downscale: self.downscale,
            subset_size: self.subset_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bias().validate()?;
        if !(0.0..=1.0).contains(&self.test_rho) {
            return Err(Error::Config(format!(
                "test_rho must lie in [0, 1], got {}",
                self.test_rho
            )));
        }
        bias::partition_sizes(1, self.fractions)?;
        self.palette.validate()
    }

    pub fn resolve_mnist_dir(&self) -> PathBuf {
        if let Some(d) = &self.mnist_dir {
            return d.clone();
        }
        std::env::var_os("DISP_MNIST_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub images: SourceFile,
    pub labels: SourceFile,
    pub seed: u64,
    pub rho: f64,
    pub test_rho: f64,
    pub palette: Palette,
    pub background_threshold: u8,
    pub downscale: bool,
    pub subset_size: Option<usize>,
    pub fractions: [f64; 3],
    pub image_shape: [usize; 3],
    pub splits: SplitIndices,
    /// SHA-256 of the sample blob.
    pub samples_sha256: String,
}

impl Manifest {
    pub fn dataset_config(&self, mnist_dir: Option<PathBuf>) -> DatasetConfig {
        DatasetConfig {
            rho: self.rho,
            seed: self.seed,
            test_rho: self.test_rho,
            background_threshold: self.background_threshold,
            downscale: self.downscale,
            subset_size: self.subset_size,
            fractions: self.fractions,
            palette: self.palette.clone(),
            mnist_dir,
        }
    }

    /// SHA-256 of the canonical JSON text.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("manifest serializes")))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub splits: Splits,
}

impl Dataset {
    pub fn image_shape(&self) -> [usize; 3] {
        self.manifest.image_shape
    }

    /// Colors and splits the MNIST training file found under the configured directory.
    pub fn build(cfg: &DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.resolve_mnist_dir();
        let images = idx::locate(&dir, "train-images-idx3-ubyte")?;
        let labels = idx::locate(&dir, "train-labels-idx1-ubyte")?;
        let raw = RawMnistSet::from_arrays(
            idx::read_idx_file(&images)?,
            idx::read_idx_file(&labels)?,
        )?;
        let mut ds = Self::from_raw(&raw, cfg)?;
        ds.manifest.images = SourceFile {
            sha256: file_sha256(&images)?,
            path: images,
        };
        ds.manifest.labels = SourceFile {
            sha256: file_sha256(&labels)?,
            path: labels,
        };
        Ok(ds)
    }

    /// Builds from an in-memory raw set; source file entries are left blank.
    pub fn from_raw(raw: &RawMnistSet, cfg: &DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        let bias_cfg = cfg.bias();
        let records = bias::colorize(raw, &bias_cfg, &cfg.palette)?;
        let splits = bias::split(records, raw, &bias_cfg, &cfg.palette, cfg.fractions, cfg.test_rho)?;
        let ids = |p: &[SampleRecord]| p.iter().map(|r| r.index).collect::<Vec<_>>();
        let blank = SourceFile {
            path: PathBuf::new(),
            sha256: String::new(),
        };
        let image_shape = bias::image_shape(raw, cfg.downscale);
        let mut manifest = Manifest {
            version: MANIFEST_VERSION,
            images: blank.clone(),
            labels: blank,
            seed: cfg.seed,
            rho: cfg.rho,
            test_rho: cfg.test_rho,
            palette: cfg.palette.clone(),
            background_threshold: cfg.background_threshold,
            downscale: cfg.downscale,
            subset_size: cfg.subset_size,
            fractions: cfg.fractions,
            image_shape,
            splits: SplitIndices {
                train: ids(&splits.train),
                val: ids(&splits.val),
                test: ids(&splits.test),
            },
            samples_sha256: String::new(),
        };
        manifest.samples_sha256 = hex(&Sha256::digest(encode_samples(&splits, image_shape)));
        Ok(Dataset { manifest, splits })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blob = encode_samples(&self.splits, self.image_shape());
        let path = dir.join(SAMPLES_FILE);
        std::fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads a saved dataset and checks the blob against the manifest digest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let path = dir.join(SAMPLES_FILE);
        let blob = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let digest = hex(&Sha256::digest(&blob));
        if digest != manifest.samples_sha256 {
            return Err(Error::CorruptFile(format!(
                "{}: digest {digest} does not match manifest {}",
                path.display(),
                manifest.samples_sha256
            )));
        }
        let splits = decode_samples(&blob, manifest.image_shape)?;
        Ok(Dataset { manifest, splits })
    }

    /// Rebuilds the dataset from raw MNIST using only the manifest and
    /// requires the result to match it exactly.
    pub fn regenerate(manifest: &Manifest, mnist_dir: Option<PathBuf>) -> Result<Self> {
        let ds = Self::build(&manifest.dataset_config(mnist_dir))?;
        let same = ds.manifest.splits == manifest.splits
            && ds.manifest.samples_sha256 == manifest.samples_sha256
            && ds.manifest.images.sha256 == manifest.images.sha256
            && ds.manifest.labels.sha256 == manifest.labels.sha256;
        if !same {
            return Err(Error::Data(
                "regenerated dataset differs from its manifest (different raw MNIST files?)".into(),
            ));
        }
        Ok(ds)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: invalid manifest: {e}", path.display())))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_samples(splits: &Splits, shape: [usize; 3]) -> Vec<u8> {
    let per: usize = shape.iter().product();
    let mut out = Vec::with_capacity(24 + splits.len() * (7 + 8 * per));
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&(splits.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for split in [Split::Train, Split::Val, Split::Test] {
        for r in splits.get(split) {
            out.extend_from_slice(&(r.index as u32).to_le_bytes());
            out.extend_from_slice(&[r.target, r.private, r.split.code()]);
            for v in &r.image {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn decode_samples(blob: &[u8], shape: [usize; 3]) -> Result<Splits> {
    let corrupt = |m: String| Error::CorruptFile(format!("{SAMPLES_FILE}: {m}"));
    if blob.len() < 24 || &blob[..8] != BLOB_MAGIC {
        return Err(corrupt("missing DISPSMP1 header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(blob[at..at + 4].try_into().unwrap()) as usize;
    let count = word(8);
    let stored = [word(12), word(16), word(20)];
    if stored != shape {
        return Err(corrupt(format!("image shape {stored:?}, manifest says {shape:?}")));
    }
    let per: usize = shape.iter().product();
    let rec = 7 + 8 * per;
    if blob.len() != 24 + count * rec {
        return Err(corrupt(format!("{} bytes cannot hold {count} samples", blob.len())));
    }
    let mut splits = Splits::default();
    for k in 0..count {
        let at = 24 + k * rec;
        let split = match blob[at + 6] {
            0 => Split::Train,
            1 => Split::Val,
            2 => Split::Test,
            c => return Err(corrupt(format!("sample {k}: unknown split code {c}"))),
        };
        let image = blob[at + 7..at + rec]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let r = SampleRecord {
            index: word(at),
            target: blob[at + 4],
            private: blob[at + 5],
            split,
            image,
        };
        if r.target > 9 || r.private > 9 {
            return Err(corrupt(format!("sample {k}: label out of range")));
        }
        match split {
            Split::Train => splits.train.push(r),
            Split::Val => splits.val.push(r),
            Split::Test => splits.test.push(r),
        }
    }
    Ok(splits)
}
