//! The DisP penalty on normalized bottleneck features.
//!
//! Two terms push features of samples that share a private class but differ in
//! target toward orthogonality: `r_batch` compares samples within the current
//! minibatch, `r_mem` compares each sample with running per-group means kept in
//! a [`MemoryBank`]. Both are averages of absolute cosine similarities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub target: usize,
    pub private: usize,
}

impl GroupKey {
    pub fn new(target: usize, private: usize) -> Self {
        GroupKey { target, private }
    }
}

fn check_keys(keys: &[GroupKey], rows: usize, targets: usize, privates: usize) -> Result<()> {
    if keys.len() != rows {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {rows} feature rows",
            keys.len()
        )));
    }
    if let Some(k) = keys.iter().find(|k| k.target >= targets || k.private >= privates) {
        return Err(Error::InvalidArgument(format!(
            "label (t={}, p={}) outside {targets} targets × {privates} private classes",
            k.target, k.private
        )));
    }
    Ok(())
}

fn matrix_dims(x: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match x.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::shape(op, &[s])),
    }
}

/// Mean feature of every `(target, private)` group present in the batch.
pub fn group_means(v_hat: &Tensor, keys: &[GroupKey]) -> Result<BTreeMap<GroupKey, Vec<f64>>> {
    let (m, n) = matrix_dims(v_hat, "group_means")?;
    if keys.len() != m {
        return Err(Error::InvalidArgument(format!("{} labels for {m} feature rows", keys.len())));
    }
    let mut sums: BTreeMap<GroupKey, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        let (sum, count) = sums.entry(*key).or_insert_with(|| (vec![0.0; n], 0));
        sum.iter_mut().zip(v_hat.row(i)).for_each(|(s, v)| *s += v);
        *count += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (mut sum, count))| {
            sum.iter_mut().for_each(|s| *s /= count as f64);
            (k, sum)
        })
        .collect())
}

/// Running averages `V[t][p]` of group means across minibatches.
///
/// Rows never seen are exactly zero. The first sighting of a group copies its
/// mean; later sightings blend with weight `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    targets: usize,
    privates: usize,
    width: usize,
    beta: f64,
    values: Vec<f64>,
    initialized: Vec<bool>,
    steps: u64,
}

impl MemoryBank {
    pub fn new(targets: usize, privates: usize, width: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("memory beta must lie in (0, 1], got {beta}")));
        }
        if targets == 0 || privates == 0 || width == 0 {
            return Err(Error::Config("memory bank dimensions must be positive".into()));
        }
        Ok(MemoryBank {
            targets,
            privates,
            width,
            beta,
            values: vec![0.0; targets * privates * width],
            initialized: vec![false; targets * privates],
            steps: 0,
        })
    }

    /// Restores a bank from its serialized parts.
    pub fn from_parts(
        targets: usize,
        privates: usize,
        width: usize,
        beta: f64,
        values: Vec<f64>,
        initialized: Vec<bool>,
        steps: u64,
    ) -> Result<Self> {
        let mut bank = Self::new(targets, privates, width, beta)?;
        if values.len() != bank.values.len() || initialized.len() != bank.initialized.len() {
            return Err(Error::CorruptFile("memory bank size mismatch".into()));
        }
        bank.values = values;
        bank.initialized = initialized;
        bank.steps = steps;
        Ok(bank)
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn privates(&self) -> usize {
        self.privates
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initialized_mask(&self) -> &[bool] {
        &self.initialized
    }

    pub fn row(&self, target: usize, private: usize) -> &[f64] {
        let at = (target * self.privates + private) * self.width;
        &self.values[at..at + self.width]
    }

    pub fn is_initialized(&self, target: usize, private: usize) -> bool {
        self.initialized[target * self.privates + private]
    }

    pub fn update(&mut self, means: &BTreeMap<GroupKey, Vec<f64>>) -> Result<()> {
        for (key, mean) in means {
            if key.target >= self.targets || key.private >= self.privates || mean.len() != self.width {
                return Err(Error::InvalidArgument(format!(
                    "group ({}, {}) of width {} does not fit the memory bank",
                    key.target,
                    key.private,
                    mean.len()
                )));
            }
        }
        for (key, mean) in means {
            let slot = key.target * self.privates + key.private;
            let row = &mut self.values[slot * self.width..(slot + 1) * self.width];
            if self.initialized[slot] {
                let b = self.beta;
                row.iter_mut().zip(mean).for_each(|(v, f)| *v = (1.0 - b) * *v + b * f);
            } else {
                row.copy_from_slice(mean);
                self.initialized[slot] = true;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Memory term: mean over samples and over the other `C − 1` targets of
/// `|⟨v̂_i, V[t][p_i]⟩|`. The bank enters as a constant.
pub fn r_mem<'t>(v_hat: Var<'t>, keys: &[GroupKey], bank: &MemoryBank) -> Result<Var<'t>> {
    let (m, n) = matrix_dims(&v_hat.value(), "r_mem")?;
    let c = bank.targets;
    if c < 2 {
        return Err(Error::InvalidArgument("r_mem needs at least two target classes".into()));
    }
    if n != bank.width {
        return Err(Error::shape("r_mem", &[&[m, n], &[c, bank.privates, bank.width]]));
    }
    check_keys(keys, m, c, bank.privates)?;
    let rows = c * bank.privates;
    let tape = v_hat.tape();
    let memory = tape.constant(Tensor::new(vec![rows, n], bank.values.clone())?);
    let mut mask = vec![0.0; m * rows];
    let w = 1.0 / (m * (c - 1)) as f64;
    for (i, k) in keys.iter().enumerate() {
        for t in (0..c).filter(|&t| t != k.target) {
            mask[i * rows + t * bank.privates + k.private] = w;
        }
    }
    let mask = tape.constant(Tensor::new(vec![m, rows], mask)?);
    v_hat.matmul(memory.transpose()?)?.abs().dot(mask)
}

/// Batch term: for each sample, the mean `|⟨v̂_i, v̂_j⟩|` over batch partners
/// with the same private class and a different target, averaged over the
/// batch. Samples without partners contribute 0.
pub fn r_batch<'t>(v_hat: Var<'t>, keys: &[GroupKey], num_targets: usize) -> Result<Var<'t>> {
    let (m, _) = matrix_dims(&v_hat.value(), "r_batch")?;
    if num_targets < 2 {
        return Err(Error::InvalidArgument("r_batch needs at least two target classes".into()));
    }
    check_keys(keys, m, num_targets, usize::MAX)?;
    let mut weights = vec![0.0; m * m];
    for (i, a) in keys.iter().enumerate() {
        let partners: Vec<usize> = (0..m)
            .filter(|&j| keys[j].private == a.private && keys[j].target != a.target)
            .collect();
        let w = 1.0 / (m * partners.len().max(1)) as f64;
        for j in partners {
            weights[i * m + j] = w;
        }
    }
    let tape = v_hat.tape();
    let weights = tape.constant(Tensor::new(vec![m, m], weights)?);
    v_hat.matmul(v_hat.transpose()?)?.abs().dot(weights)
}

/// Weights of the training objective `J = η·L + γ_mem·r_mem + γ_batch·r_batch`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispWeights {
    pub gamma_mem: f64,
    pub gamma_batch: f64,
    #[serde(default = "one")]
    pub eta: f64,
}

fn one() -> f64 {
    1.0
}

impl DispWeights {
    /// The single-γ convention: both terms share one weight.
    pub fn uniform(gamma: f64) -> Self {
        DispWeights {
            gamma_mem: gamma,
            gamma_batch: gamma,
            eta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma_mem", self.gamma_mem), ("gamma_batch", self.gamma_batch), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.gamma_mem > 0.0 || self.gamma_batch > 0.0
    }
}

pub fn disp_total<'t>(r_mem: Var<'t>, r_batch: Var<'t>, w: &DispWeights) -> Result<Var<'t>> {
    r_mem.scale(w.gamma_mem).add(r_batch.scale(w.gamma_batch))
}

pub fn objective<'t>(loss: Var<'t>, r_perp: Var<'t>, w: &DispWeights) -> Result<Var<'t>> {
    loss.scale(w.eta).add(r_perp)
}
