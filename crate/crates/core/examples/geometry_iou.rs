//! Box geometry: projection of a vehicle into a roadside camera and
//! rotated BEV / 3D IoU between nearby boxes.
//!
//! cargo run --example geometry_iou

use cbr::geometry::{box_corners, iou_3d, rotated_iou_bev, Box3D, CameraCalib, CameraProjector};

fn main() -> cbr::Result<()> {
    let calib = CameraCalib {
        fx: 256.0,
        fy: 256.0,
        cx: 128.0,
        cy: 128.0,
        pitch: 18f64.to_radians(),
        yaw: 0.0,
        roll: 0.0,
        position: [0.0, 0.0, 6.5],
    };
    calib.validate()?;
    let car = Box3D::car([3.0, 25.0, 0.8], [4.5, 1.9, 1.6], 0.3);
    let proj = CameraProjector::new(&calib)?;
    println!("corners of {:?} in a {}x{} image:", car.center, 2.0 * calib.cx, 2.0 * calib.cy);
    for (i, p) in box_corners(&car).iter().enumerate() {
        let q = proj.project(p);
        println!("  {i}: ({:6.2}, {:6.2}, {:5.2}) m -> ({:7.2}, {:7.2}) px, depth {:.2} m", p.x, p.y, p.z, q.pixel[0], q.pixel[1], q.depth);
    }

    println!("\n{:>10} {:>10} {:>8} {:>8}", "shift (m)", "turn (deg)", "BEV IoU", "3D IoU");
    for (shift, turn) in [(0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (0.0, 15.0), (0.0, 90.0), (1.0, 30.0), (3.0, 0.0)] {
        let mut other = car;
        other.center[1] += shift;
        other.center[2] += 0.5 * shift;
        other.yaw += f64::to_radians(turn);
        println!(
            "{shift:>10.1} {turn:>10.0} {:>8.4} {:>8.4}",
            rotated_iou_bev(&car, &other)?,
            iou_3d(&car, &other)?
        );
    }
    Ok(())
}
