//! The experiment workbench end to end on a toy budget: generate data,
//! train both models briefly, evaluate, sweep calibration noise and render
//! the report. The CLI binary runs the same commands.
//!
//! cargo run --release --example workbench_pipeline -- /tmp/cbr-run

use std::path::PathBuf;

use cbr::detector::ModelKind;
use cbr::model::ModelConfig;
use cbr::workbench::{cmd_eval, cmd_gen_data, cmd_noise_sweep, cmd_report, cmd_train, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/workbench_pipeline".into()));
    let mut cfg = ExperimentConfig::default().with_seed(3);
    cfg.model = ModelConfig::compact();
    cfg.dataset.scene.image_size = cfg.model.input_size;
    cfg.dataset.n_frames = 24;
    cfg.train.epochs = 2;
    cfg.noise.levels = vec![0.0, 1.0, 5.0];

    let data = root.join("data");
    cmd_gen_data(&cfg, &data, true)?;
    let cbr_ckpt = cmd_train(&cfg, &data, &root.join("cbr"), false)?;
    cfg.arch = ModelKind::Baseline;
    let base_ckpt = cmd_train(&cfg, &data, &root.join("baseline"), false)?;

    let report = cmd_eval(&cfg, &cbr_ckpt, &data, &root, 0.0)?;
    print!("{}", report.to_table());
    let rows = cmd_noise_sweep(&cfg, &cbr_ckpt, &base_ckpt, &data, &root)?;
    println!("{} sweep rows", rows.len());
    for p in cmd_report(&root)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
