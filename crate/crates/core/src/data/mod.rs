//! Raw MNIST ingestion and the biased-MNIST construction.

pub mod bias;
pub mod dataset;
pub mod idx;

pub use bias::{colorize, split, BiasConfig, Palette, SampleRecord, Split, Splits, NUM_COLORS};
pub use dataset::{Dataset, DatasetConfig, Manifest};
pub use idx::{parse_idx, read_idx_file, write_idx, IdxArray, RawMnistSet};
