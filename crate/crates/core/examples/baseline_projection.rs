//! The calibration-based baseline lifts image features to BEV through the
//! camera model. This shows how its voxel-to-pixel sampling table moves as
//! the rotation angles are perturbed.
//!
//! cargo run --release --example baseline_projection

use cbr::baseline::{SamplingTable, VoxelSpec};
use cbr::geometry::GridSpec;
use cbr::noise::perturb_calibration;
use cbr::scene::{sample_scene, SceneSpec};

fn centroid(t: &SamplingTable, cell: usize) -> Option<(f64, f64)> {
    let (_, fw) = t.feature_shape;
    let taps: Vec<_> = t.entries.iter().filter(|e| e.0 == cell).collect();
    let w: f64 = taps.iter().map(|e| e.2).sum();
    (w > 0.0).then(|| {
        let r = taps.iter().map(|e| (e.1 / fw) as f64 * e.2).sum::<f64>() / w;
        let c = taps.iter().map(|e| (e.1 % fw) as f64 * e.2).sum::<f64>() / w;
        (r, c)
    })
}

fn main() -> cbr::Result<()> {
    let frame = sample_scene(&SceneSpec { image_size: 128, ..SceneSpec::default() }, 4)?;
    let spec = VoxelSpec::new(GridSpec::bev(32), 4);
    let clean = SamplingTable::build(&frame.calib, &spec, (32, 32), 4)?;
    let covered = (0..32 * 32).filter(|&c| centroid(&clean, c).is_some()).count();
    println!("camera pitch {:.1} deg, height {:.2} m", frame.calib.pitch.to_degrees(), frame.calib.position[2]);
    println!("{} sampling taps, {covered} of 1024 BEV cells inside the frustum", clean.entries.len());

    println!("\n{:>10} {:>24}", "noise deg", "mean tap shift (feature px)");
    for deg in [0.1, 0.5, 1.0, 2.0, 5.0] {
        let noisy = SamplingTable::build(&perturb_calibration(&frame.calib, [deg, deg, deg]), &spec, (32, 32), 4)?;
        let shifts: Vec<f64> = (0..32 * 32)
            .filter_map(|c| Some((centroid(&clean, c)?, centroid(&noisy, c)?)))
            .map(|((r0, c0), (r1, c1))| (r1 - r0).hypot(c1 - c0))
            .collect();
        println!("{deg:>10.1} {:>24.3}", shifts.iter().sum::<f64>() / shifts.len().max(1) as f64);
    }
    Ok(())
}
