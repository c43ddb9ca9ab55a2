//! Evaluation protocol on hand-made predictions: AP|R40 tables by
//! difficulty and distance, the error-source ablation, and seg metrics.
//!
//! cargo run --example eval_metrics

use cbr::eval::{evaluate, seg_metrics, EvalConfig, FrameResult};
use cbr::geometry::GridSpec;
use cbr::labels::bev_foreground_mask;
use cbr::model::Detection;
use cbr::scene::{sample_scene, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cbr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = SceneSpec { image_size: 64, ..SceneSpec::default() };
    let grid = GridSpec::bev(64);
    let mut frames = Vec::new();
    let (mut probs, mut masks) = (Vec::new(), Vec::new());
    for id in 0..40 {
        let gts = sample_scene(&spec, id)?.boxes;
        let mut preds = Vec::new();
        for g in &gts {
            if rng.random_bool(0.8) {
                let mut b = *g;
                let spread = 0.02 * g.planar_distance();
                b.center[0] += rng.random_range(-spread..spread);
                b.center[1] += rng.random_range(-spread..spread);
                b.center[2] += rng.random_range(-0.4..0.4);
                b.dims[2] *= rng.random_range(0.8..1.2);
                preds.push(Detection { bbox: b, score: rng.random_range(0.3..1.0) });
            }
        }
        let mask = bev_foreground_mask(&gts, &grid)?;
        probs.push(mask.cells.mapv(|v| if v > 0 { rng.random_range(0.4..1.0) } else { rng.random_range(0.0..0.6) }));
        masks.push(mask.cells);
        frames.push(FrameResult { frame_id: id as usize, preds, gts });
    }
    let mut report = evaluate(&frames, &EvalConfig::default())?;
    report.seg_bev = Some(seg_metrics(&probs, &masks)?);
    print!("{}", report.to_table());
    Ok(())
}
