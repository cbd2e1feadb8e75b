#![allow(dead_code)]

use std::path::{Path, PathBuf};

use disp::config::ExperimentConfig;
use disp::data::{Dataset, RawMnistSet};
use disp::rng::{self, Stream};

pub const SIDE: usize = 8;

/// Digit-shaped stand-in for MNIST: every digit owns a fixed set of bright
/// pixels, and each sample adds a few random strokes.
pub fn synthetic_raw(per_digit: usize, seed: u64) -> RawMnistSet {
    let mut masks = Vec::new();
    for d in 0..10u32 {
        let mut r = rng::stream(1000 + d as u64, Stream::Sampling, 0);
        let mask: Vec<usize> = (0..14).map(|_| rng::index(&mut r, SIDE * SIDE)).collect();
        masks.push(mask);
    }
    let mut r = rng::stream(seed, Stream::Sampling, 1);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_digit * 10 {
        let d = i % 10;
        let mut img = vec![0u8; SIDE * SIDE];
        for &k in &masks[d] {
            img[k] = 150 + rng::index(&mut r, 106) as u8;
        }
        for _ in 0..3 {
            img[rng::index(&mut r, SIDE * SIDE)] = 200;
        }
        images.extend(img);
        labels.push(d as u8);
    }
    RawMnistSet {
        rows: SIDE,
        cols: SIDE,
        images,
        labels,
    }
}

/// A tiny experiment over the synthetic set, rooted at `out`.
pub fn tiny_config(out: &Path, gamma: f64, epochs: usize) -> ExperimentConfig {
    let text = format!(
        "seed = 3\nrepeats = 1\n[dataset]\nrho = 0.99\n[model]\nwidths = [4, 6, 8, 8]\nkernel = 3\n\
         [optimizer]\nepochs = {epochs}\nbatch_size = 50\n[disp]\ngamma_mem = {gamma}\ngamma_batch = {gamma}\n"
    );
    let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

/// Builds the synthetic dataset of `cfg` and stores it where the commands look for it.
pub fn install_synthetic_dataset(cfg: &ExperimentConfig, per_digit: usize) -> PathBuf {
    let ds = Dataset::from_raw(&synthetic_raw(per_digit, 5), &cfg.dataset).unwrap();
    let dir = cfg.dataset_dir();
    ds.save(&dir).unwrap();
    dir
}

pub fn gaussian(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let u1 = rng::unit(r).max(1e-300);
    let u2 = rng::unit(r);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Canonical form of a clustering: the sorted member lists of each cluster,
/// expressed in original row ids, plus the sorted noise rows.
pub fn partition(labels: &[i64], ids: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut clusters: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    let mut noise = Vec::new();
    for (&l, &id) in labels.iter().zip(ids) {
        if l < 0 {
            noise.push(id);
        } else {
            clusters.entry(l).or_default().push(id);
        }
    }
    let mut groups: Vec<Vec<usize>> = clusters
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort();
    noise.sort_unstable();
    (groups, noise)
}
