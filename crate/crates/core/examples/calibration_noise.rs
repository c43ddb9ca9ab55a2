//! Rotation noise on the extrinsics: per-angle statistics of the sampled
//! offsets and the resulting pixel displacement of ground points.
//!
//! cargo run --example calibration_noise

use cbr::geometry::CameraProjector;
use cbr::noise::{noisy_calibration, sample_rotation_noise, NoiseSpec, SWEEP_LEVELS};
use cbr::scene::{sample_scene, SceneSpec};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cbr::Result<()> {
    let spec = NoiseSpec::new(1.0, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws: Vec<[f64; 3]> = (0..20_000).map(|_| sample_rotation_noise(&spec, &mut rng)).collect();
    for (k, name) in ["pitch", "yaw", "roll"].iter().enumerate() {
        let n = draws.len() as f64;
        let mean = draws.iter().map(|d| d[k]).sum::<f64>() / n;
        let std = (draws.iter().map(|d| (d[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        println!("{name:>5}: mean {mean:+.4} deg, std {std:.4} deg at range 1");
    }

    let frame = sample_scene(&SceneSpec::default(), 2)?;
    let clean = CameraProjector::new(&frame.calib)?;
    let points: Vec<Vector3<f64>> = (1..=8).map(|i| Vector3::new(0.0, 10.0 * i as f64, 0.0)).collect();
    println!("\n{:>9} {:>22}", "range deg", "mean pixel shift (256 px)");
    for level in SWEEP_LEVELS {
        let mut total = 0.0;
        let mut count = 0;
        for id in 0..50 {
            let noisy = CameraProjector::new(&noisy_calibration(&frame.calib, &NoiseSpec::new(level, 1)?, id))?;
            for p in &points {
                let (a, b) = (clean.project(p), noisy.project(p));
                if a.valid && b.valid {
                    total += (a.pixel[0] - b.pixel[0]).hypot(a.pixel[1] - b.pixel[1]);
                    count += 1;
                }
            }
        }
        println!("{level:>9.1} {:>22.2}", total / count.max(1) as f64);
    }
    Ok(())
}
