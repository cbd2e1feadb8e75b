//! Biased-MNIST construction: every digit has a preferred background color that
//! is used with probability ρ; otherwise one of the nine remaining colors is
//! drawn uniformly. The color index is the private label.

use serde::{Deserialize, Serialize};

use super::idx::RawMnistSet;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const NUM_COLORS: usize = 10;

/// Ten RGB background colors; color `k` is the preferred color of digit `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette(pub [[f64; 3]; NUM_COLORS]);

impl Default for Palette {
    /// red, green, blue, yellow, magenta, cyan, orange, purple, brown, pink
    fn default() -> Self {
        Palette([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 0.5, 0.0],
            [0.5, 0.0, 0.5],
            [0.6, 0.3, 0.0],
            [1.0, 0.6, 0.8],
        ])
    }
}

impl Palette {
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..NUM_COLORS {
            for j in i + 1..NUM_COLORS {
                let d: f64 = (0..3).map(|c| (self.0[i][c] - self.0[j][c]).powi(2)).sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("palette components must lie in [0, 1]".into()));
        }
        let d = self.min_pairwise_distance();
        if d < 0.3 {
            return Err(Error::Config(format!(
                "palette colors too close (minimum pairwise distance {d:.3} < 0.3)"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    /// Probability that a digit gets its preferred color.
    pub rho: f64,
    pub seed: u64,
    /// Grayscale values at or below this count as background.
    #[serde(default = "default_threshold")]
    pub background_threshold: u8,
    /// Halve the resolution with 2×2 average pooling after colorization.
    #[serde(default)]
    pub downscale: bool,
    /// Use only the first `subset_size` images of the source file.
    #[serde(default)]
    pub subset_size: Option<usize>,
}

fn default_threshold() -> u8 {
    25
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.subset_size == Some(0) {
            return Err(Error::Config("subset_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// Position of the source image in the raw set.
    pub index: usize,
    /// `3 × H × W` values in `[0, 1]`.
    pub image: Vec<f64>,
    pub target: u8,
    pub private: u8,
    pub split: Split,
}

/// Draws the private color of one sample: exactly two draws per sample, a
/// uniform `u` and an index `k` over the nine non-preferred colors.
fn draw_color(rng: &mut rand_chacha::ChaCha8Rng, digit: u8, rho: f64) -> u8 {
    let u = rng::unit(rng);
    let k = rng::index(rng, NUM_COLORS - 1) as u8;
    if u < rho {
        digit
    } else if k < digit {
        k
    } else {
        k + 1
    }
}

/// Renders one grayscale digit onto a colored background.
pub fn render(
    gray: &[u8],
    rows: usize,
    cols: usize,
    color: [f64; 3],
    threshold: u8,
    downscale: bool,
) -> Vec<f64> {
    let area = rows * cols;
    let mut full = vec![0.0; 3 * area];
    for (i, &g) in gray.iter().enumerate() {
        for c in 0..3 {
            full[c * area + i] = if g <= threshold {
                color[c]
            } else {
                g as f64 / 255.0
            };
        }
    }
    if !downscale {
        return full;
    }
    let (hr, hc) = (rows / 2, cols / 2);
    let mut half = vec![0.0; 3 * hr * hc];
    for c in 0..3 {
        for y in 0..hr {
            for x in 0..hc {
                let at = |dy: usize, dx: usize| full[c * area + (2 * y + dy) * cols + 2 * x + dx];
                half[(c * hr + y) * hc + x] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
            }
        }
    }
    half
}

pub fn image_shape(raw: &RawMnistSet, downscale: bool) -> [usize; 3] {
    if downscale {
        [3, raw.rows / 2, raw.cols / 2]
    } else {
        [3, raw.rows, raw.cols]
    }
}

/// Colors every image of `raw` (after the optional subset cut) in file order.
/// All records are tagged as training samples until [`split`] assigns them.
pub fn colorize(raw: &RawMnistSet, cfg: &BiasConfig, palette: &Palette) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    palette.validate()?;
    let n = cfg.subset_size.map_or(raw.len(), |s| s.min(raw.len()));
    let mut rng = rng::stream(cfg.seed, Stream::Colorize, 0);
    let records = (0..n)
        .map(|i| {
            let target = raw.labels[i];
            let private = draw_color(&mut rng, target, cfg.rho);
            SampleRecord {
                index: i,
                image: render(
                    raw.image(i),
                    raw.rows,
                    raw.cols,
                    palette.0[private as usize],
                    cfg.background_threshold,
                    cfg.downscale,
                ),
                target,
                private,
                split: Split::Train,
            }
        })
        .collect();
    Ok(records)
}

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[SampleRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partition sizes from cumulative rounding, so they always add up to `n`.
pub fn partition_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let b1 = (fractions[0] * n as f64).round() as usize;
    let b2 = (((fractions[0] + fractions[1]) * n as f64).round() as usize).max(b1);
    let b2 = b2.min(n);
    Ok([b1.min(n), b2 - b1.min(n), n - b2])
}

/// Shuffles the records with `seed`, cuts them into train/val/test by
/// `fractions` and re-colors the test partition at `test_rho` so that color
/// carries no usable target information there. Each partition is returned in
/// dataset-index order.
pub fn split(
    records: Vec<SampleRecord>,
    raw: &RawMnistSet,
    cfg: &BiasConfig,
    palette: &Palette,
    fractions: [f64; 3],
    test_rho: f64,
) -> Result<Splits> {
    if !(0.0..=1.0).contains(&test_rho) {
        return Err(Error::Config(format!("test_rho must lie in [0, 1], got {test_rho}")));
    }
    let sizes = partition_sizes(records.len(), fractions)?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    rng::shuffle(&mut rng::stream(cfg.seed, Stream::Split, 0), &mut order);
    let mut tags = vec![Split::Train; records.len()];
    for &i in &order[sizes[0]..sizes[0] + sizes[1]] {
        tags[i] = Split::Val;
    }
    for &i in &order[sizes[0] + sizes[1]..] {
        tags[i] = Split::Test;
    }

    let mut test_rng = rng::stream(cfg.seed, Stream::TestColorize, 0);
    let mut out = Splits::default();
    for (mut rec, tag) in records.into_iter().zip(tags) {
        rec.split = tag;
        match tag {
            Split::Train => out.train.push(rec),
            Split::Val => out.val.push(rec),
            Split::Test => {
                rec.private = draw_color(&mut test_rng, rec.target, test_rho);
                rec.image = render(
                    raw.image(rec.index),
                    raw.rows,
                    raw.cols,
                    palette.0[rec.private as usize],
                    cfg.background_threshold,
                    cfg.downscale,
                );
                out.test.push(rec);
            }
        }
    }
    Ok(out)
}

/// Stacks the selected records into an `M × 3 × H × W` tensor.
pub fn stack_images(records: &[SampleRecord], indices: &[usize], shape: [usize; 3]) -> Result<Tensor> {
    let per: usize = shape.iter().product();
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        let img = &records[i].image;
        if img.len() != per {
            return Err(Error::shape("stack_images", &[&[img.len()], &shape]));
        }
        data.extend_from_slice(img);
    }
    Tensor::new(vec![indices.len(), shape[0], shape[1], shape[2]], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `per_digit` synthetic digits per class with a short stroke.
    pub(crate) fn synthetic_raw(per_digit: usize) -> RawMnistSet {
        let (rows, cols) = (4, 4);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_digit * 10 {
            let digit = (i % 10) as u8;
            let mut img = vec![0u8; rows * cols];
            img[5] = 200;
            img[6] = 30 + digit;
            img[10] = 255;
            images.extend(img);
            labels.push(digit);
        }
        RawMnistSet {
            rows,
            cols,
            images,
            labels,
        }
    }

    fn cfg(rho: f64) -> BiasConfig {
        BiasConfig {
            rho,
            seed: 11,
            background_threshold: 25,
            downscale: false,
            subset_size: None,
        }
    }

    #[test]
    fn default_palette_is_separable() {
        let p = Palette::default();
        p.validate().unwrap();
        assert!(p.min_pairwise_distance() >= 0.3);
    }

    #[test]
    fn rho_one_copies_the_digit() {
        let raw = synthetic_raw(20);
        let recs = colorize(&raw, &cfg(1.0), &Palette::default()).unwrap();
        assert!(recs.iter().all(|r| r.private == r.target));
    }

    #[test]
    fn colorize_is_deterministic() {
        let raw = synthetic_raw(30);
        let a = colorize(&raw, &cfg(0.5), &Palette::default()).unwrap();
        let b = colorize(&raw, &cfg(0.5), &Palette::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strokes_keep_their_gray_level() {
        let raw = synthetic_raw(3);
        let recs = colorize(&raw, &cfg(0.3), &Palette::default()).unwrap();
        let area = raw.rows * raw.cols;
        for r in &recs {
            let gray = raw.image(r.index);
            for (i, &g) in gray.iter().enumerate() {
                let px = [r.image[i], r.image[area + i], r.image[2 * area + i]];
                if g > 25 {
                    assert!(px.iter().all(|&v| v == g as f64 / 255.0));
                } else {
                    assert_eq!(px, Palette::default().0[r.private as usize]);
                }
            }
        }
    }

    #[test]
    fn color_frequencies_match_rho() {
        // own-color frequency per digit within 3σ binomial bounds, 6000 samples each
        let raw = synthetic_raw(6000);
        let recs = colorize(&raw, &cfg(0.1), &Palette::default()).unwrap();
        let mut own = [0usize; 10];
        for r in recs.iter().filter(|r| r.private == r.target) {
            own[r.target as usize] += 1;
        }
        let sigma = (6000.0 * 0.1 * 0.9f64).sqrt();
        for c in own {
            assert!((c as f64 - 600.0).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn conditional_frequencies_pass_chi_square() {
        // one goodness-of-fit test per ρ over the whole 10×10 table: 90 degrees of freedom, α = 0.01
        const CRITICAL: f64 = 124.116;
        let raw = synthetic_raw(6000);
        for rho in [0.1, 0.5, 0.9, 0.99] {
            let recs = colorize(&raw, &cfg(rho), &Palette::default()).unwrap();
            let mut counts = [[0usize; 10]; 10];
            for r in &recs {
                counts[r.target as usize][r.private as usize] += 1;
            }
            let mut chi = 0.0;
            for (t, row) in counts.iter().enumerate() {
                for (p, &c) in row.iter().enumerate() {
                    let e = 6000.0 * if p == t { rho } else { (1.0 - rho) / 9.0 };
                    chi += (c as f64 - e).powi(2) / e;
                }
            }
            assert!(chi < CRITICAL, "rho={rho} chi2={chi}");
        }
    }

    #[test]
    fn downscale_halves_resolution() {
        let raw = synthetic_raw(1);
        let mut c = cfg(1.0);
        c.downscale = true;
        let recs = colorize(&raw, &c, &Palette::default()).unwrap();
        assert_eq!(recs[0].image.len(), 3 * 2 * 2);
        assert_eq!(image_shape(&raw, true), [3, 2, 2]);
    }

    #[test]
    fn partition_sizes_follow_fractions() {
        assert_eq!(partition_sizes(100, [0.9, 0.1, 0.0]).unwrap(), [90, 10, 0]);
        assert_eq!(partition_sizes(12500, [0.8, 0.04, 0.16]).unwrap(), [10000, 500, 2000]);
        assert!(partition_sizes(10, [0.5, 0.6, 0.0]).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let raw = synthetic_raw(10);
        let c = cfg(0.99);
        let recs = colorize(&raw, &c, &Palette::default()).unwrap();
        let s = split(recs.clone(), &raw, &c, &Palette::default(), [0.9, 0.1, 0.0], 0.1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (90, 10, 0));
        let mut all: Vec<usize> = [&s.train, &s.val, &s.test]
            .iter()
            .flat_map(|p| p.iter().map(|r| r.index))
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let again = split(recs, &raw, &c, &Palette::default(), [0.9, 0.1, 0.0], 0.1).unwrap();
        assert_eq!(again.val, s.val);
    }

    #[test]
    fn test_partition_is_recolored_without_bias() {
        let raw = synthetic_raw(3000);
        let c = cfg(0.99);
        let recs = colorize(&raw, &c, &Palette::default()).unwrap();
        let s = split(recs, &raw, &c, &Palette::default(), [0.5, 0.0, 0.5], 0.1).unwrap();
        let agree = |p: &[SampleRecord]| {
            p.iter().filter(|r| r.private == r.target).count() as f64 / p.len() as f64
        };
        // 15000 samples each: binomial 3σ is about 0.0025 at ρ=0.1 and 0.0024 at ρ=0.99
        assert!((agree(&s.train) - 0.99).abs() < 0.005);
        assert!((agree(&s.test) - 0.1).abs() < 0.01);
    }
}
