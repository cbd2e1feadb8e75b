use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use disp::attacks::AttackConfig;
use disp::config::ExperimentConfig;
use disp::experiment::{self, CurveGrid};
use disp::Error;

#[derive(Parser)]
#[command(name = "disp", version, about = "Train and attack models regularized against private-class leakage")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's artifact root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's repeat count.
    #[arg(long, global = true)]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or verify) the biased dataset of the config.
    Dataset,
    /// Train every seeded repeat and write the summary.
    Train {
        /// Continue interrupted runs from their last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Train the four ablation variants instead of the config itself.
        #[arg(long)]
        ablation: bool,
    },
    /// Run the unsupervised attack and the probes.
    Attack {
        /// Feature CSV to attack; defaults to the median run of the config.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Emit the closed-form curves, plus the ablation table when a config is given.
    Analyze {
        #[arg(long, default_value_t = 91)]
        rho_steps: usize,
        /// Tendency values of the Z–P curve.
        #[arg(long, value_delimiter = ',')]
        b: Option<Vec<f64>>,
        /// Skip the ablation table even when a config is given.
        #[arg(long)]
        curves_only: bool,
    },
    /// Assemble the report of a trained config.
    Report,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_) | Error::NotIdx(_) | Error::CorruptFile(_) | Error::Parse { .. } | Error::Io { .. } | Error::Json(_) => 3,
        Error::NonFinite(_)
        | Error::Degenerate(_)
        | Error::DegenerateNorm { .. }
        | Error::Shape { .. }
        | Error::NonScalarLoss(_) => 4,
    }
}

fn load_config(g: &Global) -> disp::Result<ExperimentConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config <path>".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if let Some(r) = g.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> disp::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Dataset => {
            let cfg = load_config(g)?;
            let ds = experiment::cmd_dataset(&cfg)?;
            println!("{}\t{}", cfg.dataset_dir().display(), ds.manifest.digest());
        }
        Command::Train { resume, ablation } => {
            let cfg = load_config(g)?;
            let configs = if ablation {
                experiment::ablation_variants(&cfg).into_iter().map(|(_, c)| c).collect()
            } else {
                vec![cfg]
            };
            for c in &configs {
                let s = experiment::cmd_train(c, resume)?;
                println!(
                    "{}\tgamma_mem={}\tgamma_batch={}\tacc_test_unbiased={:.4}\tR={:.4}",
                    s.config_hash, s.gamma_mem, s.gamma_batch, s.median_acc_test_unbiased, s.median_r
                );
            }
        }
        Command::Attack { features } => {
            let report = match features {
                Some(path) => {
                    let (attack, out) = match &g.config {
                        Some(_) => {
                            let cfg = load_config(g)?;
                            (cfg.attack.clone(), cfg.run_root().join("attacks"))
                        }
                        None => (AttackConfig::default(), g.out.clone().unwrap_or_else(|| PathBuf::from("."))),
                    };
                    experiment::attack_features_file(&path, &attack, &out)?
                }
                None => experiment::cmd_attack(&load_config(g)?)?,
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Analyze { rho_steps, b, curves_only } => {
            let mut grid = CurveGrid {
                rho_steps,
                ..CurveGrid::default()
            };
            if let Some(b) = b {
                grid.b_values = b;
            }
            let cfg = match &g.config {
                Some(_) if !curves_only => Some(load_config(g)?),
                _ => None,
            };
            let out = match (&cfg, &g.out) {
                (Some(c), _) => c.out_dir.join("analysis"),
                (None, Some(o)) => o.clone(),
                (None, None) => PathBuf::from("analysis"),
            };
            for p in experiment::cmd_analyze(cfg.as_ref(), &grid, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Report => {
            let report = experiment::cmd_report(&load_config(g)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
