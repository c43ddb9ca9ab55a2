//! Train a compact model on freshly generated scenes and evaluate it.
//!
//! cargo run --release --example train_eval -- [frames] [epochs] [cbr|baseline] [none|sgf|cpf|scf]

use cbr::detector::{predict, DecodeConfig, ModelKind};
use cbr::eval::{evaluate, EvalConfig, FrameResult};
use cbr::model::{FusionKind, ModelConfig};
use cbr::scene::{generate_frames, SceneSpec};
use cbr::train::{samples_from_frames, TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(Ok(200), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(10), |s| s.parse())?;
    let kind: ModelKind = args.get(3).map_or(Ok(ModelKind::Cbr), |s| s.parse())?;
    let fusion: FusionKind = args.get(4).map_or(Ok(FusionKind::Scf), |s| s.parse())?;

    let model_cfg = ModelConfig::compact().with_fusion(fusion);
    let spec = SceneSpec {
        image_size: model_cfg.input_size,
        ..SceneSpec::default()
    };
    let frames = generate_frames(&spec, 11, n)?;
    let n_val = n / 4;
    let (train_frames, val_frames) = frames.split_at(n - n_val);
    let train = samples_from_frames(train_frames, &model_cfg)?;
    let val = samples_from_frames(val_frames, &model_cfg)?;

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::desk()
    };
    let mut trainer = Trainer::new(kind, model_cfg, cfg)?;
    for _ in 0..epochs {
        let t0 = std::time::Instant::now();
        let tr = trainer.run_epoch(&train)?;
        let va = trainer.evaluate_loss(&val)?;
        println!(
            "epoch {:3}  train {:.4} (heat {:.3} reg {:.3} fv {:.3} bev {:.3})  val {:.4}  {:.1}s",
            trainer.epoch,
            tr.total,
            tr.heat,
            tr.reg,
            tr.seg_fv,
            tr.seg_bev,
            va.total,
            t0.elapsed().as_secs_f64()
        );
    }

    let preds = predict(&mut trainer.model, val_frames, 8, &DecodeConfig::default(), &|f| f.calib)?;
    let results: Vec<FrameResult> = preds
        .into_iter()
        .zip(val_frames)
        .map(|(p, f)| FrameResult {
            frame_id: f.id,
            preds: p.detections,
            gts: f.boxes.clone(),
        })
        .collect();
    let report = evaluate(&results, &EvalConfig::default())?;
    println!("\n{}", report.to_table());
    Ok(())
}
