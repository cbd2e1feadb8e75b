//! Orchestration behind the command-line tool: dataset build, seeded training
//! repeats, attacks on the median run, closed-form curves, ablation tables and
//! the final report. Artifacts live under `<out_dir>/<config-hash>/`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{self, LeakageReport};
use crate::checkpoint;
use crate::config::{ExperimentConfig, Selection};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::infotheory::{self, BEstimate, EmpiricalCounts, LeakageModelParams};
use crate::model::ModelState;
use crate::trainer::{
    self, export_features, EpochMetrics, FeatureExport, LabeledSet, Trainer, TrainingData, BEST_CHECKPOINT,
    LAST_CHECKPOINT, METRICS_FILE,
};

pub const FEATURES_FILE: &str = "features.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ATTACK_FILE: &str = "attack.json";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Loads the dataset of `cfg` from its artifact directory, building and
/// saving it first when absent.
pub fn cmd_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    if dir.join(crate::data::dataset::MANIFEST_FILE).is_file() {
        let ds = Dataset::load(&dir)?;
        if ds.manifest.dataset_config(cfg.dataset.mnist_dir.clone()) == cfg.dataset
            || ds.manifest.dataset_config(None) == with_mnist_dir(&cfg.dataset, None)
        {
            return Ok(ds);
        }
        return Err(Error::Data(format!(
            "{} holds a dataset for a different configuration",
            dir.display()
        )));
    }
    log::info!("building dataset into {}", dir.display());
    let ds = Dataset::build(&cfg.dataset)?;
    ds.save(&dir)?;
    Ok(ds)
}

fn with_mnist_dir(d: &crate::data::DatasetConfig, m: Option<PathBuf>) -> crate::data::DatasetConfig {
    let mut d = d.clone();
    d.mnist_dir = m;
    d
}

/// The three training splits packed for the trainer.
pub struct PackedSplits {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

impl PackedSplits {
    pub fn new(ds: &Dataset) -> Result<Self> {
        let shape = ds.image_shape();
        Ok(PackedSplits {
            train: LabeledSet::from_records(&ds.splits.train, shape, Split::Train)?,
            val: LabeledSet::from_records(&ds.splits.val, shape, Split::Val)?,
            test: LabeledSet::from_records(&ds.splits.test, shape, Split::Test)?,
        })
    }

    pub fn data(&self) -> TrainingData<'_> {
        TrainingData {
            train: &self.train,
            val: &self.val,
            test: &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub epochs: usize,
    /// Epoch whose model is used downstream.
    pub selected_epoch: usize,
    pub metrics: EpochMetrics,
    pub features: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub gamma_mem: f64,
    pub gamma_batch: f64,
    pub runs: Vec<RunSummary>,
    /// Index into `runs` of the run with the median unbiased-test accuracy.
    pub median_run: usize,
    pub median_acc_test_unbiased: f64,
    pub median_r: f64,
}

impl TrainSummary {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn median(&self) -> &RunSummary {
        &self.runs[self.median_run]
    }
}

/// Lower median for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Index of the run whose accuracy is the (lower) median, ties broken by position.
pub fn median_index(acc: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..acc.len()).collect();
    order.sort_by(|&a, &b| acc[a].total_cmp(&acc[b]).then(a.cmp(&b)));
    order[(order.len() - 1) / 2]
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.run_root().join("runs").join(format!("seed-{seed}"))
}

fn selected_state(cfg: &ExperimentConfig, dir: &Path, trainer: &Trainer) -> Result<(ModelState, usize)> {
    match cfg.selection {
        Selection::Last => Ok((trainer.state.model.clone(), trainer.state.progress.epochs_done)),
        Selection::BestVal => {
            let best = checkpoint::load(&dir.join(BEST_CHECKPOINT))?;
            Ok((best.model, best.progress.epochs_done))
        }
    }
}

/// Trains (or resumes) one seeded run and exports its features.
pub fn train_run(cfg: &ExperimentConfig, packed: &PackedSplits, seed: u64, resume: bool) -> Result<RunSummary> {
    let dir = run_dir(cfg, seed);
    let last = dir.join(LAST_CHECKPOINT);
    let model_cfg = cfg.model.model_config(packed.train.shape);
    let mut trainer = if resume && last.is_file() {
        let ck = checkpoint::load(&last)?;
        if ck.model.config != model_cfg || ck.model.seed != seed {
            return Err(Error::Data(format!("{} belongs to a different run", last.display())));
        }
        log::info!("resuming seed {seed} after epoch {}", ck.progress.epochs_done);
        Trainer::resume(cfg.train_config(), ck)?
    } else {
        Trainer::new(&model_cfg, cfg.train_config(), seed)?
    };
    trainer.fit(packed.data(), Some(&dir), None)?;
    let (model, epoch) = selected_state(cfg, &dir, &trainer)?;
    let metrics = trainer
        .metrics()
        .iter()
        .find(|m| m.epoch == epoch)
        .cloned()
        .ok_or_else(|| Error::Data(format!("no metrics recorded for epoch {epoch}")))?;
    let features = export_features(&model, &[&packed.train, &packed.val, &packed.test])?;
    let features_path = dir.join(FEATURES_FILE);
    features.write_csv(&features_path)?;
    Ok(RunSummary {
        seed,
        dir,
        epochs: trainer.state.progress.epochs_done,
        selected_epoch: epoch,
        metrics,
        features: features_path,
    })
}

pub fn summarize(cfg: &ExperimentConfig, runs: Vec<RunSummary>) -> TrainSummary {
    let acc: Vec<f64> = runs.iter().map(|r| r.metrics.acc_test_unbiased).collect();
    let r: Vec<f64> = runs.iter().map(|r| r.metrics.r).collect();
    TrainSummary {
        config_hash: cfg.hash(),
        gamma_mem: cfg.disp.gamma_mem,
        gamma_batch: cfg.disp.gamma_batch,
        median_run: median_index(&acc),
        median_acc_test_unbiased: median(&acc),
        median_r: median(&r),
        runs,
    }
}

/// Trains every repeat of `cfg` and writes `summary.json`.
pub fn cmd_train(cfg: &ExperimentConfig, resume: bool) -> Result<TrainSummary> {
    let ds = cmd_dataset(cfg)?;
    let packed = PackedSplits::new(&ds)?;
    let root = cfg.run_root();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let cfg_path = root.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    let mut runs = Vec::new();
    for seed in cfg.seeds() {
        log::info!("training {} seed {seed}", cfg.hash());
        runs.push(train_run(cfg, &packed, seed, resume)?);
    }
    let summary = summarize(cfg, runs);
    write_summary(cfg, &summary)?;
    Ok(summary)
}

pub fn write_summary(cfg: &ExperimentConfig, summary: &TrainSummary) -> Result<()> {
    let path = cfg.run_root().join(SUMMARY_FILE);
    trainer::write_atomic(&path, serde_json::to_string_pretty(summary)?.as_bytes())
}

/// The four weightings of the ablation table: none, memory only, batch only, both.
pub fn ablation_variants(cfg: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig)> {
    let g = cfg.disp.gamma_mem.max(cfg.disp.gamma_batch);
    let g = if g > 0.0 { g } else { 0.1 };
    vec![
        ("baseline", cfg.with_gammas(0.0, 0.0)),
        ("mem_only", cfg.with_gammas(g, 0.0)),
        ("batch_only", cfg.with_gammas(0.0, g)),
        ("both", cfg.with_gammas(g, g)),
    ]
}

pub fn load_summary(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let path = cfg.run_root().join(SUMMARY_FILE);
    if !path.is_file() {
        return Err(Error::Data(format!(
            "no training summary at {}; run `disp train` for this config first",
            path.display()
        )));
    }
    TrainSummary::read(&path)
}

/// Attacks the features of the median-accuracy run of `cfg`.
pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<LeakageReport> {
    let summary = load_summary(cfg)?;
    let run = summary.median();
    attack_features_file(&run.features, &cfg.attack, &run.dir)
}

/// Attacks an exported feature CSV, writing the report and scatter into `out`.
pub fn attack_features_file(features: &Path, cfg: &attacks::AttackConfig, out: &Path) -> Result<LeakageReport> {
    let f = FeatureExport::read_csv(features)?;
    let (report, scatter) = attacks::run_attacks(&f, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    report.write_json(&out.join(ATTACK_FILE))?;
    attacks::write_scatter_csv(&out.join(SCATTER_FILE), &scatter)?;
    Ok(report)
}

/// Grid of the closed-form curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveGrid {
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_steps: usize,
    pub b_values: Vec<f64>,
}

impl Default for CurveGrid {
    fn default() -> Self {
        CurveGrid {
            rho_min: 0.1,
            rho_max: 1.0,
            rho_steps: 91,
            b_values: vec![0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub gamma_mem: f64,
    pub gamma_batch: f64,
    pub median_acc_test_unbiased: f64,
    pub median_r: f64,
    pub median_r_mem: f64,
    pub median_r_batch: f64,
    pub runs: usize,
}

/// Writes `pt_curve.csv` and `pz_curve.csv` into `out`.
pub fn write_curves(grid: &CurveGrid, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rhos = infotheory::grid(grid.rho_min, grid.rho_max, grid.rho_steps);
    let pt = out.join("pt_curve.csv");
    infotheory::write_pt_csv(&pt, &infotheory::pt_curve(&rhos)?)?;
    let pz = out.join("pz_curve.csv");
    infotheory::write_pz_csv(&pz, &infotheory::pz_curve(&rhos, &grid.b_values)?)?;
    Ok(vec![pt, pz])
}

/// Collects the ablation table from completed runs of the four variants.
pub fn ablation_table(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let variants = ablation_variants(cfg);
    let missing: Vec<String> = variants
        .iter()
        .filter(|(_, c)| !c.run_root().join(SUMMARY_FILE).is_file())
        .map(|(name, c)| {
            format!(
                "{name} (gamma_mem={}, gamma_batch={}, hash {})",
                c.disp.gamma_mem,
                c.disp.gamma_batch,
                c.hash()
            )
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "ablation needs trained runs for: {}; run `disp train --ablation`",
            missing.join(", ")
        )));
    }
    variants
        .iter()
        .map(|(name, c)| {
            let s = load_summary(c)?;
            let col = |f: fn(&EpochMetrics) -> f64| median(&s.runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
            Ok(AblationRow {
                name: name.to_string(),
                gamma_mem: c.disp.gamma_mem,
                gamma_batch: c.disp.gamma_batch,
                median_acc_test_unbiased: s.median_acc_test_unbiased,
                median_r: s.median_r,
                median_r_mem: col(|m| m.r_mem),
                median_r_batch: col(|m| m.r_batch),
                runs: s.runs.len(),
            })
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut text = String::from("name,gamma_mem,gamma_batch,acc_test_unbiased,R,r_mem,r_batch,runs\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.name, r.gamma_mem, r.gamma_batch, r.median_acc_test_unbiased, r.median_r, r.median_r_mem, r.median_r_batch, r.runs
        ));
    }
    trainer::write_atomic(path, text.as_bytes())
}

/// Curves always; the ablation table too when a config is given.
pub fn cmd_analyze(cfg: Option<&ExperimentConfig>, grid: &CurveGrid, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = write_curves(grid, out)?;
    if let Some(cfg) = cfg {
        let rows = ablation_table(cfg)?;
        let path = out.join("ablation.csv");
        write_ablation_csv(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoSummary {
    pub rho: f64,
    pub test_rho: f64,
    pub i_pt_train: f64,
    pub i_pt_test: f64,
    /// Tendency fitted to `(t, p, prediction)` counts on the test split.
    pub b_hat: BEstimate,
    pub i_zp_train_rho: f64,
    pub i_zp_test_rho: f64,
    /// Same quantities from the printed (b-dependent) Z–P marginal.
    pub i_zp_printed_train_rho: f64,
    pub i_zp_printed_test_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub summary: TrainSummary,
    pub leakage: Option<LeakageReport>,
    pub info: InfoSummary,
    pub artifacts: Vec<PathBuf>,
}

/// Counts `(t, p, z)` of a model's predictions over a split.
pub fn prediction_counts(model: &ModelState, set: &LabeledSet) -> Result<EmpiricalCounts> {
    let mut triples = Vec::with_capacity(set.len());
    let rows: Vec<usize> = (0..set.len()).collect();
    for chunk in rows.chunks(100) {
        let (_, logits) = model.infer(&set.batch(chunk)?)?;
        for (r, &i) in chunk.iter().enumerate() {
            triples.push((set.targets[i], set.privates[i], trainer::argmax(logits.row(r))));
        }
    }
    EmpiricalCounts::from_triples(triples)
}

/// Assembles the report of a trained (and optionally attacked) config.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<RunReport> {
    let summary = load_summary(cfg)?;
    let run = summary.median();
    let ck_name = match cfg.selection {
        Selection::Last => LAST_CHECKPOINT,
        Selection::BestVal => BEST_CHECKPOINT,
    };
    let ck_path = run.dir.join(ck_name);
    let model = checkpoint::load(&ck_path)?.model;
    let ds = cmd_dataset(cfg)?;
    let test = LabeledSet::from_records(&ds.splits.test, ds.image_shape(), Split::Test)?;
    let counts = prediction_counts(&model, &test)?;
    let b_hat = infotheory::estimate_b(&counts, cfg.dataset.test_rho)?;
    let train_params = LeakageModelParams::new(cfg.dataset.rho, b_hat.b)?;
    let test_params = LeakageModelParams::new(cfg.dataset.test_rho, b_hat.b)?;
    let info = InfoSummary {
        rho: cfg.dataset.rho,
        test_rho: cfg.dataset.test_rho,
        i_pt_train: infotheory::mutual_info_pt(cfg.dataset.rho)?,
        i_pt_test: infotheory::mutual_info_pt(cfg.dataset.test_rho)?,
        b_hat,
        i_zp_train_rho: infotheory::mutual_info_pz(train_params),
        i_zp_test_rho: infotheory::mutual_info_pz(test_params),
        i_zp_printed_train_rho: infotheory::marginal_gap(train_params).mi_printed,
        i_zp_printed_test_rho: infotheory::marginal_gap(test_params).mi_printed,
    };
    let attack_path = run.dir.join(ATTACK_FILE);
    let leakage = if attack_path.is_file() {
        Some(LeakageReport::read_json(&attack_path)?)
    } else {
        None
    };
    let root = cfg.run_root();
    let mut artifacts = vec![root.join(CONFIG_FILE), root.join(SUMMARY_FILE), cfg.dataset_dir()];
    for r in &summary.runs {
        artifacts.push(r.dir.join(METRICS_FILE));
        artifacts.push(r.dir.join(LAST_CHECKPOINT));
        artifacts.push(r.features.clone());
    }
    if leakage.is_some() {
        artifacts.push(attack_path);
        artifacts.push(run.dir.join(SCATTER_FILE));
    }
    if let Some(missing) = artifacts.iter().find(|p| !p.exists()) {
        return Err(Error::Data(format!("report artifact missing: {}", missing.display())));
    }
    let report = RunReport {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        summary,
        leakage,
        info,
        artifacts,
    };
    let path = root.join(REPORT_FILE);
    trainer::write_atomic(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}
