//! IDX container format used by the MNIST distribution.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for rank-3 image stacks,
//! `0x00000801` for label vectors), one big-endian `u32` per dimension, then the
//! unsigned-byte payload. Files may be gzip-compressed.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// A decoded IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::NotIdx(format!("{} bytes, too short for a header", bytes.len())));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let rank = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(Error::NotIdx(format!("unexpected magic 0x{other:08x}"))),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::CorruptFile(format!(
            "header needs {header} bytes, file has {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let payload = dims.iter().product::<usize>();
    let have = bytes.len() - header;
    if have != payload {
        return Err(Error::CorruptFile(format!(
            "dimensions {dims:?} promise {payload} payload bytes, found {have}"
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

/// Reads an IDX file, transparently inflating gzip input.
pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::CorruptFile(format!("{}: {e}", path.display())))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes).map_err(|e| match e {
        Error::NotIdx(m) => Error::NotIdx(format!("{}: {m}", path.display())),
        Error::CorruptFile(m) => Error::CorruptFile(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Grayscale digit images with their labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawMnistSet {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawMnistSet {
    pub fn from_arrays(images: IdxArray, labels: IdxArray) -> Result<Self> {
        if images.dims.len() != 3 || labels.dims.len() != 1 {
            return Err(Error::Data(format!(
                "expected rank-3 images and rank-1 labels, got {:?} and {:?}",
                images.dims, labels.dims
            )));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        if let Some(bad) = labels.data.iter().find(|&&l| l > 9) {
            return Err(Error::Data(format!("label {bad} outside 0..=9")));
        }
        Ok(RawMnistSet {
            rows: images.dims[1],
            cols: images.dims[2],
            images: images.data,
            labels: labels.data,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[i * n..(i + 1) * n]
    }

    /// Keeps the first `n` samples in file order.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.images.truncate(n * self.rows * self.cols);
        }
    }

    /// Loads `<prefix>-images-idx3-ubyte[.gz]` and `<prefix>-labels-idx1-ubyte[.gz]`
    /// from `dir`, where `prefix` is `train` or `t10k`.
    pub fn load_dir(dir: &Path, prefix: &str) -> Result<Self> {
        let images = locate(dir, &format!("{prefix}-images-idx3-ubyte"))?;
        let labels = locate(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
        Self::from_arrays(read_idx_file(&images)?, read_idx_file(&labels)?)
    }
}

/// Resolves a raw or gzip-compressed MNIST file under `dir`.
pub fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if plain.is_file() {
        Ok(plain)
    } else if gz.is_file() {
        Ok(gz)
    } else {
        Err(Error::Data(format!(
            "missing MNIST file in {}: expected `{stem}` or `{stem}.gz`",
            dir.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_a_tiny_image_stack() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend(1..=8u8);
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![2, 2, 2]);
        assert_eq!(a.data, (1..=8).collect::<Vec<u8>>());
    }

    #[test]
    fn decodes_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 3, 1, 4, 1, 5];
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![5]);
        assert_eq!(a.data.len(), 5);
    }

    #[test]
    fn short_payload_is_corrupt() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 3, 1];
        assert!(matches!(parse_idx(&bytes), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn wrong_magic_is_not_idx() {
        let bytes = [0x89, b'P', b'N', b'G', 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bytes), Err(Error::NotIdx(_))));
    }

    #[test]
    fn gzip_files_are_inflated() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let arr = IdxArray {
            dims: vec![3],
            data: vec![7, 8, 9],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x-labels-idx1-ubyte.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&write_idx(&arr)).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        assert_eq!(read_idx_file(&path).unwrap(), arr);
    }

    #[test]
    fn missing_files_name_what_was_expected() {
        let dir = tempfile::tempdir().unwrap();
        let err = RawMnistSet::load_dir(dir.path(), "train").unwrap_err();
        assert!(err.to_string().contains("train-images-idx3-ubyte"));
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(n in 1usize..6, r in 1usize..5, c in 1usize..5, seed in any::<u8>()) {
            let data: Vec<u8> = (0..n * r * c).map(|i| (i as u8).wrapping_mul(seed)).collect();
            let arr = IdxArray { dims: vec![n, r, c], data };
            prop_assert_eq!(parse_idx(&write_idx(&arr)).unwrap(), arr);
        }
    }
}
