use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbr::detector::ModelKind;
use cbr::workbench::{cmd_ablation, cmd_eval, cmd_gen_data, cmd_noise_sweep, cmd_report, cmd_train, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cbr", version, about = "Calibration-free BEV detection workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); defaults are used for missing sections.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for data generation, training and calibration noise.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Calibration noise range in degrees (eval), or the single sweep level (noise-sweep).
    #[arg(long = "noise-deg", global = true, value_name = "F")]
    noise_deg: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Number of frames (overrides the config).
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a CBR or baseline model.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// cbr or baseline (overrides the config).
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from `last.ckpt` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Evaluate both models across calibration noise levels.
    NoiseSweep {
        #[arg(long, value_name = "PATH")]
        cbr: PathBuf,
        #[arg(long, value_name = "PATH")]
        baseline: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Train and compare the fusion variants over several seeds.
    Ablation {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Render tables and plots for a run directory.
    Report {
        /// Run directory (defaults to --out).
        run: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = cli.common;
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::GenData { frames } => {
            if let Some(n) = frames {
                cfg.dataset.n_frames = n;
            }
            let ds = cmd_gen_data(&cfg, &out, c.force)?;
            println!(
                "{} frames ({} train / {} val) in {}",
                ds.manifest.n_frames,
                ds.manifest.train.len(),
                ds.manifest.val.len(),
                out.display()
            );
        }
        Command::Train { data, model, epochs, resume } => {
            if let Some(m) = model {
                cfg.arch = m;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let best = cmd_train(&cfg, &data, &out, resume)?;
            println!("best checkpoint: {}", best.display());
        }
        Command::Eval { ckpt, data } => {
            let report = cmd_eval(&cfg, &ckpt, &data, &out, c.noise_deg.unwrap_or(0.0))?;
            print!("{}", report.to_table());
        }
        Command::NoiseSweep { cbr, baseline, data } => {
            if let Some(level) = c.noise_deg {
                cfg.noise.levels = vec![level];
            }
            let rows = cmd_noise_sweep(&cfg, &cbr, &baseline, &data, &out)?;
            print!("{}", cbr::workbench::sweep_csv(&rows));
        }
        Command::Ablation { data } => {
            if let Some(seed) = c.seed {
                cfg.ablation.seeds = vec![seed];
            }
            let runs = cmd_ablation(&cfg, &data, &out)?;
            print!("{}", cbr::workbench::ablation_table(&runs, cfg.eval.metrics.iou_thresholds[0]));
        }
        Command::Report { run } => {
            let dir = run.unwrap_or(out);
            for p in cmd_report(&dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
