//! Supervised probe: an MLP trained to read private classes off features.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::trainer::{argmax, sgd_step, OptimizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Hidden widths: `[300]` for 1H, `[600, 300]` for 2H.
    pub hidden: Vec<usize>,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
}

fn d_lr() -> f64 {
    0.1
}
fn d_batch() -> usize {
    100
}
fn d_momentum() -> f64 {
    0.9
}
fn d_epochs() -> usize {
    50
}

impl ProbeConfig {
    pub fn one_hidden() -> Self {
        Self::with_hidden(vec![300])
    }

    pub fn two_hidden() -> Self {
        Self::with_hidden(vec![600, 300])
    }

    pub fn with_hidden(hidden: Vec<usize>) -> Self {
        ProbeConfig {
            hidden,
            lr: d_lr(),
            batch_size: d_batch(),
            momentum: d_momentum(),
            weight_decay: 0.0,
            epochs: d_epochs(),
        }
    }

    /// `1H`, `2H`, ... by hidden-layer count.
    pub fn layout_name(&self) -> String {
        format!("{}H", self.hidden.len())
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            plateau: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub layout: String,
    pub hidden: Vec<usize>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

struct Mlp {
    params: Vec<Tensor>,
}

impl Mlp {
    fn init(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Stream::Probe, 0);
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let mut params = Vec::new();
        for (j, w) in widths.windows(2).enumerate() {
            let gain = if j + 2 < widths.len() { 6.0 } else { 3.0 };
            let bound = (gain / w[0] as f64).sqrt();
            let data = (0..w[0] * w[1])
                .map(|_| (2.0 * rng::unit(&mut rng) - 1.0) * bound)
                .collect();
            params.push(Tensor::new(vec![w[0], w[1]], data)?);
            params.push(Tensor::zeros(&[w[1]]));
        }
        Ok(Mlp { params })
    }

    fn forward<'t>(params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let layers = params.len() / 2;
        let mut h = x;
        for j in 0..layers {
            h = h.matmul(params[2 * j])?.add(params[2 * j + 1])?;
            if j + 1 < layers {
                h = h.relu();
            }
        }
        Ok(h)
    }

    fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        if x.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        let rows: Vec<usize> = (0..x.len()).collect();
        for chunk in rows.chunks(500) {
            let tape = Tape::new();
            let p: Vec<Var> = self.params.iter().map(|t| tape.constant(t.clone())).collect();
            let logits = Self::forward(&p, tape.constant(gather(x, chunk)?))?;
            let v = logits.value();
            correct += chunk
                .iter()
                .enumerate()
                .filter(|&(r, &i)| argmax(v.row(r)) == y[i])
                .count();
        }
        Ok(correct as f64 / x.len() as f64)
    }
}

fn gather(x: &[Vec<f64>], rows: &[usize]) -> Result<Tensor> {
    let n = x[0].len();
    let data = rows.iter().flat_map(|&i| x[i].iter().copied()).collect();
    Tensor::new(vec![rows.len(), n], data)
}

/// Trains an MLP with a fixed recipe on `(train_x, train_y)` and reports final
/// accuracies on both sets.
pub fn supervised_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    if train_x.is_empty() || train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::InvalidArgument("probe features and labels must be non-empty and aligned".into()));
    }
    let n = train_x[0].len();
    if train_x.iter().chain(test_x).any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("probe feature rows differ in width".into()));
    }
    if let Some(y) = train_y.iter().chain(test_y).find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("probe label {y} outside 0..{classes}")));
    }
    if train_y.iter().all(|&y| y == train_y[0]) {
        return Err(Error::InvalidArgument("probe training labels contain a single class".into()));
    }
    let opt = cfg.optimizer();
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 || cfg.hidden.contains(&0) {
        return Err(Error::Config("probe needs lr > 0, a positive batch size and non-zero widths".into()));
    }
    let mut mlp = Mlp::init(n, &cfg.hidden, classes, seed)?;
    let mut velocity: Vec<Tensor> = mlp.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_x.len()).collect();
        rng::shuffle(&mut rng::stream(seed, Stream::Probe, 1 + epoch as u32), &mut order);
        for rows in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let p: Vec<Var> = mlp.params.iter().map(|t| tape.param(t.clone())).collect();
            let logits = Mlp::forward(&p, tape.constant(gather(train_x, rows)?))?;
            let labels: Vec<usize> = rows.iter().map(|&i| train_y[i]).collect();
            logits.softmax_cross_entropy(&labels)?.backward()?;
            let grads: Vec<Tensor> = p.iter().map(|v| v.grad().expect("parameter gradient")).collect();
            sgd_step(&mut mlp.params, &grads, &mut velocity, cfg.lr, &opt)?;
        }
    }
    Ok(ProbeResult {
        layout: cfg.layout_name(),
        hidden: cfg.hidden.clone(),
        train_accuracy: mlp.accuracy(train_x, train_y)?,
        test_accuracy: mlp.accuracy(test_x, test_y)?,
    })
}
