//! Minibatch SGD on `J = η·L + γ_mem·r_mem + γ_batch·r_batch`, with per-epoch
//! metrics, best-validation and last-epoch checkpoints, and exact resume.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::checkpoint::{self, Checkpoint, Progress};
use crate::data::{SampleRecord, Split};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::regularizer::{self, DispWeights, GroupKey, MemoryBank};
use crate::rng::{self, Stream};

pub const NUM_PRIVATE: usize = 10;
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
const EVAL_CHUNK: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    /// Epochs without validation improvement tolerated before decaying.
    pub patience: usize,
    /// Multiplier applied to the learning rate on decay.
    pub factor: f64,
    /// Training stops once the learning rate falls below this value.
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 5,
            factor: 0.1,
            min_lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Learning-rate decay on validation plateaus; off when absent.
    #[serde(default)]
    pub plateau: Option<PlateauConfig>,
}

fn d_lr() -> f64 {
    0.1
}
fn d_wd() -> f64 {
    1e-4
}
fn d_batch() -> usize {
    100
}
fn d_epochs() -> usize {
    50
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: d_lr(),
            momentum: 0.0,
            weight_decay: d_wd(),
            batch_size: d_batch(),
            epochs: d_epochs(),
            plateau: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if let Some(p) = &self.plateau {
            if !(p.factor > 0.0 && p.factor < 1.0) || !(p.min_lr > 0.0) {
                return Err(Error::Config("plateau factor must lie in (0, 1) and min_lr be positive".into()));
            }
        }
        Ok(())
    }
}

/// One SGD step with momentum and L2 weight decay:
/// `g' = g + wd·θ; u ← μ·u + g'; θ ← θ − lr·u`.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (i, ((p, g), u)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != u.shape() {
            return Err(Error::shape("sgd_step", &[p.shape(), g.shape(), u.shape()]));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    for ((p, g), u) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((theta, &grad), vel) in p.data_mut().iter_mut().zip(g.data()).zip(u.data_mut()) {
            let g2 = grad + cfg.weight_decay * *theta;
            *vel = cfg.momentum * *vel + g2;
            *theta -= lr * *vel;
        }
    }
    Ok(())
}

/// Settings of one training run beyond the optimizer recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub weights: DispWeights,
    /// Memory blending weight.
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(rename = "L")]
    pub loss: f64,
    pub r_mem: f64,
    pub r_batch: f64,
    /// Unweighted `r_mem + r_batch`.
    #[serde(rename = "R")]
    pub r: f64,
    pub acc_train: f64,
    pub loss_val: f64,
    pub acc_test_unbiased: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "L",
    "r_mem",
    "r_batch",
    "R",
    "acc_train",
    "loss_val",
    "acc_test_unbiased",
    "lr",
];

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut text = METRICS_HEADER.join(",");
    text.push('\n');
    for m in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.epoch, m.loss, m.r_mem, m.r_batch, m.r, m.acc_train, m.loss_val, m.acc_test_unbiased, m.lr
        ));
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != METRICS_HEADER {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected header {}", METRICS_HEADER.join(",")),
        });
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.into(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Writes through a temporary sibling so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Images and labels of one split, packed for batching.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub shape: [usize; 3],
    /// `len × 3·H·W` pixels.
    pub images: Vec<f64>,
    pub targets: Vec<usize>,
    pub privates: Vec<usize>,
    /// Dataset index of every row.
    pub indices: Vec<usize>,
    pub split: Split,
}

impl LabeledSet {
    pub fn from_records(records: &[SampleRecord], shape: [usize; 3], split: Split) -> Result<Self> {
        let per: usize = shape.iter().product();
        let mut images = Vec::with_capacity(records.len() * per);
        for r in records {
            if r.image.len() != per {
                return Err(Error::shape("LabeledSet", &[&[r.image.len()], &shape]));
            }
            images.extend_from_slice(&r.image);
        }
        Ok(LabeledSet {
            shape,
            images,
            targets: records.iter().map(|r| r.target as usize).collect(),
            privates: records.iter().map(|r| r.private as usize).collect(),
            indices: records.iter().map(|r| r.index).collect(),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> Result<Tensor> {
        let per: usize = self.shape.iter().product();
        let mut data = Vec::with_capacity(rows.len() * per);
        for &i in rows {
            data.extend_from_slice(&self.images[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.shape;
        Tensor::new(vec![rows.len(), c, h, w], data)
    }

    pub fn keys(&self, rows: &[usize]) -> Vec<GroupKey> {
        rows.iter()
            .map(|&i| GroupKey::new(self.targets[i], self.privates[i]))
            .collect()
    }
}

/// The three splits a run needs.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    pub train: &'a LabeledSet,
    pub val: &'a LabeledSet,
    pub test: &'a LabeledSet,
}

/// Mean cross-entropy and accuracy of a model over a whole split.
pub fn evaluate(model: &ModelState, set: &LabeledSet) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let rows: Vec<usize> = (0..set.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let bound = model.bind(&tape, false);
        let out = bound.forward(tape.constant(set.batch(chunk)?))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| set.targets[i]).collect();
        loss += out.logits.softmax_cross_entropy(&labels)?.item() * chunk.len() as f64;
        correct += count_correct(&out.logits.value(), &labels);
    }
    let n = set.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &t)| argmax(logits.row(i)) == t)
        .count()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-batch measurements returned by [`Trainer::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub r_mem: f64,
    pub r_batch: f64,
    pub correct: usize,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: Checkpoint,
}

impl Trainer {
    pub fn new(model: &ModelConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        config.optimizer.validate()?;
        config.weights.validate()?;
        let state = ModelState::init(model, seed)?;
        let velocity = state.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let bank = MemoryBank::new(model.num_targets, NUM_PRIVATE, model.bottleneck_width, config.beta)?;
        let progress = Progress {
            epochs_done: 0,
            lr: config.optimizer.lr,
            best_val_loss: None,
            best_epoch: None,
            plateau_best: None,
            plateau_bad_epochs: 0,
            stopped: false,
            metrics: Vec::new(),
        };
        Ok(Trainer {
            config,
            state: Checkpoint {
                model: state,
                velocity,
                bank,
                progress,
            },
        })
    }

    /// Continues from a saved checkpoint with the given configuration.
    pub fn resume(config: TrainConfig, state: Checkpoint) -> Result<Self> {
        config.optimizer.validate()?;
        config.weights.validate()?;
        Ok(Trainer { config, state })
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.state.progress.metrics
    }

    pub fn is_finished(&self) -> bool {
        let p = &self.state.progress;
        p.stopped || p.epochs_done >= self.config.optimizer.epochs
    }

    /// Forward, DisP terms, backward and one parameter update on `rows`.
    pub fn step(&mut self, set: &LabeledSet, rows: &[usize]) -> Result<StepStats> {
        let labels: Vec<usize> = rows.iter().map(|&i| set.targets[i]).collect();
        let keys = set.keys(rows);
        let w = self.config.weights;
        let tape = Tape::new();
        let bound = self.state.model.bind(&tape, true);
        let out = bound.forward(tape.constant(set.batch(rows)?))?;
        let loss = out.logits.softmax_cross_entropy(&labels)?;

        let v_hat = out.v_hat.value().clone();
        let means = regularizer::group_means(&v_hat, &keys)?;
        self.state.bank.update(&means)?;

        // terms with zero weight are measured on a detached copy
        let detached = tape.constant(v_hat);
        let src = |gamma: f64| if gamma > 0.0 { out.v_hat } else { detached };
        let r_mem = regularizer::r_mem(src(w.gamma_mem), &keys, &self.state.bank)?;
        let r_batch = regularizer::r_batch(src(w.gamma_batch), &keys, self.state.model.config.num_targets)?;

        let mut j = loss.scale(w.eta);
        if w.gamma_mem > 0.0 {
            j = j.add(r_mem.scale(w.gamma_mem))?;
        }
        if w.gamma_batch > 0.0 {
            j = j.add(r_batch.scale(w.gamma_batch))?;
        }
        if !j.item().is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at epoch {} (L={}, r_mem={}, r_batch={})",
                self.state.progress.epochs_done + 1,
                loss.item(),
                r_mem.item(),
                r_batch.item()
            )));
        }
        j.backward()?;
        let grads = bound.gradients();
        let correct = count_correct(&out.logits.value(), &labels);
        let stats = StepStats {
            loss: loss.item(),
            r_mem: r_mem.item(),
            r_batch: r_batch.item(),
            correct,
        };
        drop(bound);
        let lr = self.state.progress.lr;
        sgd_step(
            &mut self.state.model.params,
            &grads,
            &mut self.state.velocity,
            lr,
            &self.config.optimizer,
        )?;
        Ok(stats)
    }

    /// Runs one epoch over `data.train`, evaluates and records metrics.
    pub fn run_epoch(&mut self, data: TrainingData<'_>) -> Result<EpochMetrics> {
        let epoch = self.state.progress.epochs_done + 1;
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        rng::shuffle(
            &mut rng::stream(self.state.model.seed, Stream::Shuffle, epoch as u32),
            &mut order,
        );
        let lr = self.state.progress.lr;
        let (mut loss, mut r_mem, mut r_batch, mut correct, mut seen) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for rows in order.chunks(self.config.optimizer.batch_size) {
            let s = self.step(data.train, rows)?;
            let m = rows.len() as f64;
            loss += s.loss * m;
            r_mem += s.r_mem * m;
            r_batch += s.r_batch * m;
            correct += s.correct;
            seen += rows.len();
        }
        let n = seen.max(1) as f64;
        let (loss_val, _) = evaluate(&self.state.model, data.val)?;
        let (_, acc_test) = evaluate(&self.state.model, data.test)?;
        let metrics = EpochMetrics {
            epoch,
            loss: loss / n,
            r_mem: r_mem / n,
            r_batch: r_batch / n,
            r: (r_mem + r_batch) / n,
            acc_train: correct as f64 / n,
            loss_val,
            acc_test_unbiased: acc_test,
            lr,
        };
        log::info!(
            "epoch {epoch}: L={:.4} R={:.4} acc_train={:.4} loss_val={:.4} acc_test={:.4}",
            metrics.loss,
            metrics.r,
            metrics.acc_train,
            metrics.loss_val,
            metrics.acc_test_unbiased
        );
        self.advance(&metrics);
        Ok(metrics)
    }

    fn advance(&mut self, m: &EpochMetrics) {
        let p = &mut self.state.progress;
        p.epochs_done = m.epoch;
        p.metrics.push(m.clone());
        if p.best_val_loss.is_none_or(|b| m.loss_val < b) {
            p.best_val_loss = Some(m.loss_val);
            p.best_epoch = Some(m.epoch);
        }
        if let Some(plateau) = self.config.optimizer.plateau {
            if p.plateau_best.is_none_or(|b| m.loss_val < b) {
                p.plateau_best = Some(m.loss_val);
                p.plateau_bad_epochs = 0;
            } else {
                p.plateau_bad_epochs += 1;
                if p.plateau_bad_epochs > plateau.patience {
                    p.lr *= plateau.factor;
                    p.plateau_bad_epochs = 0;
                    if p.lr < plateau.min_lr {
                        p.stopped = true;
                    }
                }
            }
        }
    }

    /// Trains until the configured epoch count (or plateau stop), writing
    /// checkpoints and the metrics CSV into `dir` after every epoch.
    /// `max_epochs` bounds how many epochs this call runs.
    pub fn fit(&mut self, data: TrainingData<'_>, dir: Option<&Path>, max_epochs: Option<usize>) -> Result<()> {
        if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
            return Err(Error::Data(format!(
                "training needs non-empty train/val/test splits, got {}/{}/{}",
                data.train.len(),
                data.val.len(),
                data.test.len()
            )));
        }
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut ran = 0;
        while !self.is_finished() && max_epochs.is_none_or(|m| ran < m) {
            let m = self.run_epoch(data)?;
            ran += 1;
            if let Some(d) = dir {
                if self.state.progress.best_epoch == Some(m.epoch) {
                    checkpoint::save(&d.join(BEST_CHECKPOINT), &self.state)?;
                }
                checkpoint::save(&d.join(LAST_CHECKPOINT), &self.state)?;
                write_metrics_csv(&d.join(METRICS_FILE), self.metrics())?;
            }
        }
        Ok(())
    }
}

/// Normalized bottleneck features of a split, with labels, in dataset-index order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExport {
    pub n_gamma: usize,
    pub checkpoint_id: String,
    pub rows: Vec<FeatureRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub v_hat: Vec<f64>,
    pub target: usize,
    pub private: usize,
    pub split: Split,
}

pub fn export_features(model: &ModelState, sets: &[&LabeledSet]) -> Result<FeatureExport> {
    let mut rows = Vec::new();
    for set in sets {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.sort_by_key(|&i| set.indices[i]);
        for chunk in order.chunks(EVAL_CHUNK) {
            let (v_hat, _) = model.infer(&set.batch(chunk)?)?;
            for (r, &i) in chunk.iter().enumerate() {
                rows.push(FeatureRow {
                    v_hat: v_hat.row(r).to_vec(),
                    target: set.targets[i],
                    private: set.privates[i],
                    split: set.split,
                });
            }
        }
    }
    Ok(FeatureExport {
        n_gamma: model.config.bottleneck_width,
        checkpoint_id: checkpoint::model_id(model),
        rows,
    })
}

impl FeatureExport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = format!("# n_gamma={} checkpoint={}\n", self.n_gamma, self.checkpoint_id);
        let cols: Vec<String> = (0..self.n_gamma).map(|i| format!("f{i}")).collect();
        text.push_str(&cols.join(","));
        text.push_str(",t,p,split\n");
        for r in &self.rows {
            for v in &r.v_hat {
                text.push_str(&format!("{v},"));
            }
            text.push_str(&format!("{},{},{}\n", r.target, r.private, r.split.tag()));
        }
        write_atomic(path, text.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: PathBuf::from(path),
            line: line as u64,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, meta) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
        let mut n_gamma = None;
        let mut checkpoint_id = String::new();
        for field in meta.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("n_gamma", v)) => {
                    n_gamma = Some(v.parse::<usize>().map_err(|e| parse_err(1, format!("n_gamma: {e}")))?)
                }
                Some(("checkpoint", v)) => checkpoint_id = v.to_owned(),
                _ => {}
            }
        }
        let n_gamma = n_gamma.ok_or_else(|| parse_err(1, "missing `# n_gamma=` comment line".into()))?;
        let (hl, header) = lines.next().ok_or_else(|| parse_err(2, "missing header".into()))?;
        let want: Vec<String> = (0..n_gamma)
            .map(|i| format!("f{i}"))
            .chain(["t", "p", "split"].map(String::from))
            .collect();
        if header.split(',').ne(want.iter().map(String::as_str)) {
            return Err(parse_err(hl, format!("expected header f0..f{},t,p,split", n_gamma - 1)));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n_gamma + 3 {
                return Err(parse_err(ln, format!("expected {} fields, found {}", n_gamma + 3, fields.len())));
            }
            let v_hat = fields[..n_gamma]
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(ln, format!("feature value: {e}")))?;
            let label = |s: &str, name: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(ln, format!("{name}: {e}")))
            };
            rows.push(FeatureRow {
                v_hat,
                target: label(fields[n_gamma], "t")?,
                private: label(fields[n_gamma + 1], "p")?,
                split: Split::from_tag(fields[n_gamma + 2].trim())
                    .ok_or_else(|| parse_err(ln, format!("unknown split `{}`", fields[n_gamma + 2])))?,
            });
        }
        Ok(FeatureExport {
            n_gamma,
            checkpoint_id,
            rows,
        })
    }

    pub fn of_split(&self, split: Split) -> Vec<&FeatureRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    /// Largest deviation of a row norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.v_hat.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(lr: f64, momentum: f64, wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            lr,
            momentum,
            weight_decay: wd,
            ..OptimizerConfig::default()
        }
    }

    fn step1(theta: f64, g: f64, u: f64, cfg: &OptimizerConfig) -> (f64, f64) {
        let mut p = [Tensor::vector(vec![theta])];
        let mut v = [Tensor::vector(vec![u])];
        sgd_step(&mut p, &[Tensor::vector(vec![g])], &mut v, cfg.lr, cfg).unwrap();
        (p[0].data()[0], v[0].data()[0])
    }

    #[test]
    fn sgd_examples() {
        let (t, _) = step1(1.0, 0.5, 0.0, &plain(0.1, 0.0, 0.0));
        assert!((t - 0.95).abs() < 1e-15);
        let (t, u) = step1(1.0, 0.0, 0.0, &plain(0.1, 0.9, 0.0));
        assert_eq!((t, u), (1.0, 0.0));
        let (t, _) = step1(1.0, 0.0, 0.0, &plain(0.1, 0.0, 0.1));
        assert!((t - 0.99).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let cfg = plain(0.1, 0.5, 0.0);
        let (t, u) = step1(0.0, 1.0, 2.0, &cfg);
        assert_eq!(u, 2.0);
        assert!((t + 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradients_abort() {
        let cfg = plain(0.1, 0.0, 0.0);
        let mut p = [Tensor::vector(vec![1.0])];
        let mut v = [Tensor::vector(vec![0.0])];
        let err = sgd_step(&mut p, &[Tensor::vector(vec![f64::NAN])], &mut v, 0.1, &cfg);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p[0].data()[0], 1.0);
    }

    #[test]
    fn optimizer_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!(plain(0.0, 0.0, 0.0).validate().is_err());
        let c = OptimizerConfig {
            batch_size: 1,
            ..OptimizerConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    }
}
