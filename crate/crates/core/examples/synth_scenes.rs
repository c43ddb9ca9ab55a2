//! Generates a handful of synthetic roadside frames and writes them as a
//! dataset directory (images, labels, calibrations, masks, split).
//!
//! cargo run --example synth_scenes -- /tmp/cbr-scenes 8

use std::path::PathBuf;

use cbr::scene::{generate_frames, write_dataset, SceneSpec};

fn main() -> cbr::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/synth_scenes".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);

    let spec = SceneSpec::default();
    let frames = generate_frames(&spec, 7, n)?;
    for f in &frames {
        println!(
            "frame {:06}: pitch {:5.1} deg, height {:.2} m, {} vehicles",
            f.id,
            f.calib.pitch.to_degrees(),
            f.calib.position[2],
            f.boxes.len()
        );
    }
    let manifest = write_dataset(&frames, &out, 0.25)?;
    println!(
        "wrote {} frames ({} train / {} val) to {}",
        manifest.n_frames,
        manifest.train.len(),
        manifest.val.len(),
        out.display()
    );
    Ok(())
}
