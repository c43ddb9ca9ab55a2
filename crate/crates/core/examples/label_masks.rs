//! Boxes-induced supervision: BEV and front-view foreground masks and the
//! center-heatmap detection targets of one synthetic scene, written as PNGs.
//!
//! cargo run --example label_masks -- /tmp/cbr-labels

use std::path::PathBuf;

use cbr::geometry::GridSpec;
use cbr::labels::{bev_foreground_mask, detection_targets, fv_foreground_mask};
use cbr::scene::{sample_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/label_masks".into()));
    std::fs::create_dir_all(&out)?;
    let frame = sample_scene(&SceneSpec::default(), 3)?;
    let (bev, fv) = (GridSpec::bev(64), GridSpec::fv(64));
    let bev_mask = bev_foreground_mask(&frame.boxes, &bev)?;
    let fv_mask = fv_foreground_mask(&frame.boxes, &fv)?;
    let targets = detection_targets(&frame.boxes, &bev, 1)?;

    println!("{} vehicles", frame.boxes.len());
    for b in &frame.boxes {
        let cell = bev.world_to_cell(b.center[0], b.center[1]);
        println!("  center ({:6.2}, {:6.2}) m -> BEV cell {cell:?}, yaw {:5.2} rad", b.center[0], b.center[1], b.yaw);
    }
    println!("BEV foreground cells: {} / {}", bev_mask.count(), bev.rows * bev.cols);
    println!("FV foreground cells:  {} / {}", fv_mask.count(), fv.rows * fv.cols);
    println!("heatmap peaks: {}, shared-cell collisions: {}", targets.n_valid(), targets.collisions);

    frame.image.save(out.join("image.png"))?;
    bev_mask.save_png(&out.join("bev_mask.png"))?;
    fv_mask.save_png(&out.join("fv_mask.png"))?;
    let heat = targets.heatmap.index_axis(ndarray::Axis(0), 0).mapv(|v| (v * 255.0) as u8);
    let (h, w) = heat.dim();
    image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([heat[[y as usize, x as usize]]])).save(out.join("heatmap.png"))?;
    println!("wrote image, masks and heatmap to {}", out.display());
    Ok(())
}
