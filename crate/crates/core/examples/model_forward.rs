//! The calibration-free network: stage shapes for each preset, parameter
//! counts, and a check that perturbing the calibration changes nothing.
//!
//! cargo run --release --example model_forward

use cbr::detector::{image_pixels, normalize_batch, Detector, ModelKind};
use cbr::model::{CbrNet, FusionKind, ModelConfig};
use cbr::nn::param_count;
use cbr::noise::perturb_calibration;
use cbr::scene::{sample_scene, SceneSpec};
use ndarray::Array4;

fn main() -> cbr::Result<()> {
    for (name, cfg) in [("compact", ModelConfig::compact()), ("desk", ModelConfig::desk())] {
        let mut net = CbrNet::<f32>::new(cfg, 0)?;
        let h = cfg.input_size;
        let (out, trace) = net.forward_traced(&Array4::zeros((1, 3, h, h)), false)?;
        println!("{name:>8}: input {h}x{h}, {} parameters", param_count(&mut net));
        println!("          perspective {:?} -> front {:?} / BEV {:?} -> fused {:?}", trace.pv, trace.fv, trace.bev, trace.fused);
        println!("          heatmap {:?}", out.heads.heatmap.shape());
    }

    let cfg = ModelConfig::compact().with_fusion(FusionKind::Scf);
    let frame = sample_scene(&SceneSpec { image_size: cfg.input_size, ..SceneSpec::default() }, 1)?;
    let images = normalize_batch::<f32>(&[&image_pixels(&frame.image)])?;
    let mut model = Detector::<f32>::new(ModelKind::Cbr, cfg, 0)?;
    let clean = model.forward(&images, &[frame.calib], false)?;
    let tilted = perturb_calibration(&frame.calib, [5.0, -5.0, 5.0]);
    let noisy = model.forward(&images, &[tilted], false)?;
    println!(
        "\nCBR heatmap with clean vs 5-degree-perturbed calibration identical: {}",
        clean.heads.heatmap == noisy.heads.heatmap && clean.bev_logits == noisy.bev_logits
    );
    Ok(())
}
