//! `fpaug` command line.
//!
//! Every subcommand reads an optional config file (defaults otherwise),
//! applies `--set key=value` overrides and `--seed`, writes its outputs and
//! prints a short summary. Failures exit with status 1 and a message tagged
//! with the failing stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpaug::dataset::{load_dataset, write_dataset, FingerprintDataset};
use fpaug::diffusion::{load_checkpoint, save_checkpoint, write_loss_trace};
use fpaug::initializer::LocationSplit;
use fpaug::pipeline::{self, ExperimentConfig};
use fpaug::{Error, Result};

#[derive(Parser)]
#[command(name = "fpaug", version, about = "Fingerprint map augmentation for indoor localization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file in `key = value` form.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Experiment seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw synthetic training and test datasets.
    SynthEnv {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Choose seen and unseen locations.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heuristically augment the seen-location samples.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the conditional generator.
    TrainDiffusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        loss_trace: Option<PathBuf>,
    },
    /// Sample fingerprints at the unseen locations.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the localizer on the merged training files and score it.
    Evaluate {
        #[arg(long = "train", required = true)]
        train: Vec<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment.
    Pipeline {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run one experiment per unseen fraction.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.5,0.7,0.9")]
        fractions: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(path: &Path, cfg: &ExperimentConfig) -> Result<FingerprintDataset> {
    load_dataset(path, &cfg.norm)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common).map_err(|e| e.in_stage("config"))?;
    match cli.command {
        Command::SynthEnv { out, test_out } => {
            if cfg.synthetic().is_none() {
                return Err(Error::Config("synth-env needs data.source = synthetic".into()).in_stage(pipeline::STAGE_DATA));
            }
            let train = pipeline::training_data(&cfg).map_err(|e| e.in_stage(pipeline::STAGE_DATA))?;
            write_dataset(&out, &train).map_err(|e| e.in_stage(pipeline::STAGE_DATA))?;
            println!("wrote {} samples at {} locations to {}", train.len(), train.locations().len(), out.display());
            if let Some(test_out) = test_out {
                let test = pipeline::test_data(&cfg).map_err(|e| e.in_stage(pipeline::STAGE_DATA))?;
                write_dataset(&test_out, &test).map_err(|e| e.in_stage(pipeline::STAGE_DATA))?;
                println!("wrote {} test samples to {}", test.len(), test_out.display());
            }
        }
        Command::Split { data, out } => {
            let stage = |e: Error| e.in_stage(pipeline::STAGE_SPLIT);
            let data = load(&data, &cfg).map_err(stage)?;
            let split = pipeline::split_locations(&cfg, data.locations()).map_err(stage)?;
            split.write(&out).map_err(stage)?;
            println!(
                "{} seen / {} unseen locations, collection overhead {:.1} min",
                split.seen.len(),
                split.unseen.len(),
                pipeline::collection_overhead(split.seen.len(), cfg.minutes_per_location)
            );
        }
        Command::Augment { data, split, out } => {
            let stage = |e: Error| e.in_stage(pipeline::STAGE_AUGMENT);
            let data = load(&data, &cfg).map_err(stage)?;
            let split = LocationSplit::read(&split).map_err(stage)?;
            let seen = pipeline::collected(&data, &split).map_err(stage)?;
            let augmented = pipeline::augment(&cfg, &seen, &split).map_err(stage)?;
            write_dataset(&out, &augmented).map_err(stage)?;
            println!("augmented {} seen samples to {}", seen.len(), augmented.len());
        }
        Command::TrainDiffusion { data, split, checkpoint, loss_trace } => {
            let stage = |e: Error| e.in_stage(pipeline::STAGE_TRAIN);
            let data = load(&data, &cfg).map_err(stage)?;
            let split = LocationSplit::read(&split).map_err(stage)?;
            let model = pipeline::train_generator(&cfg, &data, &split).map_err(stage)?;
            save_checkpoint(&checkpoint, &pipeline::checkpoint_of(&model)).map_err(stage)?;
            if let Some(path) = loss_trace {
                write_loss_trace(&path, &model.loss_trace).map_err(stage)?;
            }
            println!(
                "trained {} parameters for {} steps, final epoch loss {:.6}",
                model.network.param_count(),
                model.loss_trace.len(),
                model.final_loss()
            );
        }
        Command::Generate { checkpoint, split, out } => {
            let stage = |e: Error| e.in_stage(pipeline::STAGE_GENERATE);
            let ck = load_checkpoint(&checkpoint).map_err(stage)?;
            let split = LocationSplit::read(&split).map_err(stage)?;
            let synth = pipeline::generate(&cfg, &ck.network, &ck.schedule, &split).map_err(stage)?;
            write_dataset(&out, &synth).map_err(stage)?;
            println!("generated {} samples at {} unseen locations", synth.len(), split.unseen.len());
        }
        Command::Evaluate { train, test, out } => {
            let stage = |e: Error| e.in_stage(pipeline::STAGE_LOCALIZE);
            let mut map = load(&train[0], &cfg).map_err(stage)?;
            for path in &train[1..] {
                map = map.merge(&load(path, &cfg).map_err(stage)?).map_err(stage)?;
            }
            let test = load(&test, &cfg).map_err(stage)?;
            let report = pipeline::localize(&cfg, &map, &test).map_err(stage)?;
            report.write(&out).map_err(stage)?;
            println!(
                "mean error {:.3} m, median error {:.3} m over {} test samples",
                report.mean_error_m,
                report.median_error_m,
                report.per_sample_errors.len()
            );
        }
        Command::Pipeline { out_dir } => {
            let result = pipeline::run_experiment(&cfg)?;
            let io = |e| Error::io(&out_dir, e);
            fs::create_dir_all(&out_dir).map_err(io)?;
            result.report.write(out_dir.join("report.csv"))?;
            result.write_summary(out_dir.join("summary.csv"))?;
            result.split.write(out_dir.join("split.csv"))?;
            fs::write(out_dir.join("config.cfg"), &result.config_echo).map_err(io)?;
            println!(
                "{} seen / {} unseen locations, overhead {:.1} min",
                result.n_seen(),
                result.n_unseen(),
                result.collection_overhead_min
            );
            println!(
                "mean error {:.3} m, median error {:.3} m ({:.1} s)",
                result.report.mean_error_m, result.report.median_error_m, result.wall_clock_seconds
            );
        }
        Command::Sweep { fractions, out } => {
            let results = pipeline::sweep_ratio(&cfg, &fractions)?;
            pipeline::write_sweep(&out, &fractions, &results)?;
            println!("fraction  overhead_min  mean_error_m");
            for (f, r) in fractions.iter().zip(&results) {
                println!("{f:8.2}  {:12.1}  {:12.3}", r.collection_overhead_min, r.report.mean_error_m);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
