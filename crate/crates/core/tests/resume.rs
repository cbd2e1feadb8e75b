mod common;

use disp::checkpoint;
use disp::experiment::{self, PackedSplits};
use disp::data::Dataset;
use disp::trainer::{Trainer, LAST_CHECKPOINT};

#[test]
fn interrupted_training_resumes_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_config(dir.path(), 0.1, 3);
    let ds = Dataset::from_raw(&common::synthetic_raw(40, 5), &cfg.dataset).unwrap();
    let packed = PackedSplits::new(&ds).unwrap();
    let model = cfg.model.model_config(packed.train.shape);

    let mut straight = Trainer::new(&model, cfg.train_config(), 9).unwrap();
    straight.fit(packed.data(), None, None).unwrap();

    let killed = dir.path().join("killed");
    let mut first = Trainer::new(&model, cfg.train_config(), 9).unwrap();
    first.fit(packed.data(), Some(&killed), Some(1)).unwrap();
    drop(first);
    let ck = checkpoint::load(&killed.join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ck.progress.epochs_done, 1);
    let mut resumed = Trainer::resume(cfg.train_config(), ck).unwrap();
    resumed.fit(packed.data(), Some(&killed), None).unwrap();

    assert_eq!(
        checkpoint::encode(&straight.state).unwrap(),
        checkpoint::encode(&resumed.state).unwrap()
    );
    assert_eq!(straight.metrics(), resumed.metrics());
}

#[test]
fn resume_flag_matches_an_uninterrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let full = common::tiny_config(a.path(), 0.1, 3);
    common::install_synthetic_dataset(&full, 30);
    let whole = experiment::cmd_train(&full, false).unwrap();

    let short = common::tiny_config(b.path(), 0.1, 1);
    let long = common::tiny_config(b.path(), 0.1, 3);
    common::install_synthetic_dataset(&long, 30);
    let ds = Dataset::load(&long.dataset_dir()).unwrap();
    let packed = PackedSplits::new(&ds).unwrap();
    // an interrupted run: one epoch of the three written into the long run's directory
    let model = long.model.model_config(packed.train.shape);
    let mut t = Trainer::new(&model, short.train_config(), long.seed).unwrap();
    t.fit(packed.data(), Some(&experiment::run_dir(&long, long.seed)), None).unwrap();
    let resumed = experiment::cmd_train(&long, true).unwrap();

    assert_eq!(whole.runs[0].metrics, resumed.runs[0].metrics);
    let f = |s: &experiment::TrainSummary| std::fs::read(&s.runs[0].features).unwrap();
    assert_eq!(f(&whole), f(&resumed));
}
