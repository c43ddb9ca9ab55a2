//! Box-induced supervision: orthographic BEV / front-view foreground masks
//! and center-based detection targets on the BEV grid.

use std::path::Path;

use image::GrayImage;
use ndarray::{Array2, Array3, Array4};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, GridSpec, Plane};
use crate::model::HeadOutputs;
use crate::nn::Real;

/// Binary occupancy of a BEV or FV grid, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub plane: Plane,
    pub cells: Array2<u8>,
}

impl ForegroundMask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 1).count()
    }

    /// Column reversal (mirror across `x = 0`).
    pub fn flipped(&self) -> Self {
        let mut cells = self.cells.clone();
        cells.invert_axis(ndarray::Axis(1));
        Self {
            plane: self.plane,
            cells: cells.as_standard_layout().into_owned(),
        }
    }

    pub fn to_f32(&self) -> Array2<f32> {
        self.cells.mapv(f32::from)
    }

    /// Writes an 8-bit PNG with values `{0, 255}`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (rows, cols) = self.cells.dim();
        let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
            image::Luma([self.cells[[y as usize, x as usize]] * 255])
        });
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path, plane: Plane) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        let cells = Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
            u8::from(img.get_pixel(c as u32, r as u32)[0] >= 128)
        });
        Ok(Self { plane, cells })
    }
}

fn check_plane(spec: &GridSpec, plane: Plane) -> Result<()> {
    spec.validate()?;
    if spec.plane != plane {
        return Err(Error::InvalidGrid(format!("expected a {plane:?} grid, got {:?}", spec.plane)));
    }
    Ok(())
}

/// True when ground point `(x, y)` lies inside the box footprint.
pub fn footprint_contains(b: &Box3D, x: f64, y: f64) -> bool {
    let (u, v) = b.axes();
    let dx = x - b.center[0];
    let dy = y - b.center[1];
    let along = dx * u[0] + dy * u[1];
    let across = dx * v[0] + dy * v[1];
    along.abs() <= b.dims[0] / 2.0 && across.abs() <= b.dims[1] / 2.0
}

/// Lateral extent `[min x, max x]` of the box footprint.
pub fn lateral_extent(b: &Box3D) -> (f64, f64) {
    b.bev_corners()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])))
}

/// Cell is foreground iff its center lies inside any box footprint.
pub fn bev_foreground_mask(boxes: &[Box3D], spec: &GridSpec) -> Result<ForegroundMask> {
    check_plane(spec, Plane::Bev)?;
    let cells = Array2::from_shape_fn((spec.rows, spec.cols), |(r, c)| {
        let (x, y) = spec.cell_center(r, c);
        u8::from(boxes.iter().any(|b| footprint_contains(b, x, y)))
    });
    Ok(ForegroundMask { plane: Plane::Bev, cells })
}

/// Orthographic projection onto the `x`-`z` plane: a cell is foreground iff
/// its center lies within some box's lateral extent and height interval.
pub fn fv_foreground_mask(boxes: &[Box3D], spec: &GridSpec) -> Result<ForegroundMask> {
    check_plane(spec, Plane::Fv)?;
    let spans: Vec<((f64, f64), (f64, f64))> =
        boxes.iter().map(|b| (lateral_extent(b), b.z_range())).collect();
    let cells = Array2::from_shape_fn((spec.rows, spec.cols), |(r, c)| {
        let (x, z) = spec.cell_center(r, c);
        u8::from(
            spans
                .iter()
                .any(|((x0, x1), (z0, z1))| x >= *x0 && x <= *x1 && z >= *z0 && z <= *z1),
        )
    });
    Ok(ForegroundMask { plane: Plane::Fv, cells })
}

/// Per-cell supervision for the four detection heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTargets {
    /// `[classes, rows, cols]` Gaussian heatmap with exact 1 at each center.
    pub heatmap: Array3<f32>,
    /// `[3, rows, cols]`: column offset, row offset (cells, in `[-0.5, 0.5)`), center z (m).
    pub offset_z: Array3<f32>,
    /// `[3, rows, cols]`: log length, width, height.
    pub dims: Array3<f32>,
    /// `[2, rows, cols]`: `(sin yaw, cos yaw)`.
    pub yaw: Array3<f32>,
    /// `[rows, cols]`: 1 where regression targets are defined.
    pub valid: Array2<f32>,
    /// Objects dropped because a nearer object owns their center cell.
    pub collisions: usize,
}

impl DetectionTargets {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v > 0.0).count()
    }
}

/// CornerNet radius for a `height x width` footprint (in cells) such that a
/// corner-shifted box still reaches `min_overlap` IoU.
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let b1 = height + width;
    let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;
    let b2 = 2.0 * (height + width);
    let c2 = (1.0 - min_overlap) * width * height;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).sqrt()) / 2.0;
    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (height + width);
    let c3 = (min_overlap - 1.0) * width * height;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

/// Encodes boxes as heatmap + offset/z + log-dims + (sin, cos) targets.
///
/// Boxes whose center falls outside the grid are skipped. When two boxes
/// share a center cell the one nearer the origin wins and the other is
/// counted in `collisions`.
pub fn detection_targets(boxes: &[Box3D], spec: &GridSpec, n_classes: usize) -> Result<DetectionTargets> {
    check_plane(spec, Plane::Bev)?;
    let (rows, cols) = (spec.rows, spec.cols);
    let mut t = DetectionTargets {
        heatmap: Array3::zeros((n_classes, rows, cols)),
        offset_z: Array3::zeros((3, rows, cols)),
        dims: Array3::zeros((3, rows, cols)),
        yaw: Array3::zeros((2, rows, cols)),
        valid: Array2::zeros((rows, cols)),
        collisions: 0,
    };
    let mut order: Vec<&Box3D> = boxes.iter().collect();
    order.sort_by(|a, b| a.planar_distance().total_cmp(&b.planar_distance()));
    let cw = spec.cell_width();
    for b in order {
        b.validate()?;
        let Some((r, c)) = spec.world_to_cell(b.center[0], b.center[1]) else {
            continue;
        };
        if t.valid[[r, c]] > 0.0 {
            log::warn!("two objects share BEV cell ({r}, {c}); keeping the nearer one");
            t.collisions += 1;
            continue;
        }
        let cls = b.class.index().min(n_classes - 1);
        let radius = gaussian_radius(b.dims[0] / cw, b.dims[1] / cw, 0.7).floor().max(1.0) as i64;
        let sigma = (2 * radius + 1) as f64 / 6.0;
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                    continue;
                }
                let g = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp() as f32;
                let cell = &mut t.heatmap[[cls, rr as usize, cc as usize]];
                *cell = cell.max(g);
            }
        }
        let (row_f, col_f) = spec.to_continuous(b.center[0], b.center[1]);
        t.offset_z[[0, r, c]] = (col_f - (c as f64 + 0.5)) as f32;
        t.offset_z[[1, r, c]] = (row_f - (r as f64 + 0.5)) as f32;
        t.offset_z[[2, r, c]] = b.center[2] as f32;
        for k in 0..3 {
            t.dims[[k, r, c]] = b.dims[k].ln() as f32;
        }
        let (s, co) = b.yaw.sin_cos();
        t.yaw[[0, r, c]] = s as f32;
        t.yaw[[1, r, c]] = co as f32;
        t.valid[[r, c]] = 1.0;
    }
    Ok(t)
}

/// Head outputs that decode exactly to the encoded boxes: heatmap
/// probabilities are turned into logits (clamped away from 0 and 1).
pub fn targets_as_head_outputs<T: Real>(t: &DetectionTargets) -> HeadOutputs<T> {
    let lift = |a: &Array3<f32>, f: &dyn Fn(f32) -> f64| {
        let (c, r, k) = a.dim();
        Array4::from_shape_fn((1, c, r, k), |(_, ci, ri, ki)| T::lit(f(a[[ci, ri, ki]])))
    };
    let logit = |p: f32| {
        let p = (p as f64).clamp(1e-4, 1.0 - 1e-4);
        (p / (1.0 - p)).ln()
    };
    HeadOutputs {
        heatmap: lift(&t.heatmap, &logit),
        offset_z: lift(&t.offset_z, &|v| v as f64),
        dims: lift(&t.dims, &|v| v as f64),
        yaw: lift(&t.yaw, &|v| v as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ObjectClass;
    use crate::model::decode_detections;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn empty_scene_masks_are_zero() {
        assert_eq!(bev_foreground_mask(&[], &GridSpec::bev(64)).unwrap().count(), 0);
        assert_eq!(fv_foreground_mask(&[], &GridSpec::fv(64)).unwrap().count(), 0);
        let t = detection_targets(&[], &GridSpec::bev(64), 1).unwrap();
        assert!(t.heatmap.iter().all(|&v| v == 0.0));
        assert_eq!(t.n_valid(), 0);
    }

    #[test]
    fn wrong_plane_is_rejected() {
        assert!(bev_foreground_mask(&[], &GridSpec::fv(8)).is_err());
        assert!(fv_foreground_mask(&[], &GridSpec::bev(8)).is_err());
    }

    #[test]
    fn single_car_blob_matches_point_in_polygon_oracle() {
        let spec = GridSpec::bev(64);
        let b = Box3D::car([0.0, 45.0, 0.75], [4.5, 2.0, 1.5], 0.0);
        let mask = bev_foreground_mask(&[b], &spec).unwrap();
        // oracle: ray-casting point-in-polygon on the corner list
        let poly = b.bev_corners();
        let inside = |x: f64, y: f64| {
            let mut odd = false;
            for i in 0..4 {
                let (p, q) = (poly[i], poly[(i + 1) % 4]);
                if (p[1] > y) != (q[1] > y) && x < p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1]) {
                    odd = !odd;
                }
            }
            odd
        };
        for r in 0..64 {
            for c in 0..64 {
                let (x, y) = spec.cell_center(r, c);
                assert_eq!(mask.cells[[r, c]] == 1, inside(x, y), "cell ({r}, {c})");
            }
        }
        // length along y: 3-4 rows, width along x: 1-2 columns, around (32, 32)
        let rows: Vec<usize> = (0..64).filter(|&r| mask.cells.row(r).iter().any(|&v| v == 1)).collect();
        let cols: Vec<usize> = (0..64).filter(|&c| mask.cells.column(c).iter().any(|&v| v == 1)).collect();
        assert!((3..=4).contains(&rows.len()) && (1..=2).contains(&cols.len()), "{rows:?} {cols:?}");
        assert!(rows.contains(&31) || rows.contains(&32));
        assert!(cols.contains(&31) || cols.contains(&32));
    }

    #[test]
    fn quarter_turn_equals_swapped_dims() {
        let spec = GridSpec::bev(64);
        let a = Box3D::car([3.3, 40.1, 0.75], [4.5, 2.0, 1.5], FRAC_PI_2);
        let b = Box3D::car([3.3, 40.1, 0.75], [2.0, 4.5, 1.5], 0.0);
        assert_eq!(
            bev_foreground_mask(&[a], &spec).unwrap(),
            bev_foreground_mask(&[b], &spec).unwrap()
        );
    }

    #[test]
    fn ground_resting_box_fills_bottom_rows() {
        let spec = GridSpec::fv(64);
        let b = Box3D::car([0.0, 30.0, 0.75], [4.5, 2.0, 1.5], 0.0);
        let mask = fv_foreground_mask(&[b], &spec).unwrap();
        let rows: Vec<usize> = (0..64).filter(|&r| mask.cells.row(r).iter().any(|&v| v == 1)).collect();
        assert_eq!(rows.len(), 19);
        assert_eq!(*rows.last().unwrap(), 63);
        assert_eq!(rows[0], 64 - 19);
    }

    #[test]
    fn disjoint_lateral_extents_give_disjoint_columns() {
        let spec = GridSpec::fv(64);
        let a = Box3D::car([-10.0, 30.0, 0.75], [4.5, 2.0, 1.5], 0.0);
        let b = Box3D::car([10.0, 50.0, 0.9], [4.5, 2.0, 1.8], 0.3);
        let ma = fv_foreground_mask(&[a], &spec).unwrap();
        let mb = fv_foreground_mask(&[b], &spec).unwrap();
        for c in 0..64 {
            let ca = ma.cells.column(c).iter().any(|&v| v == 1);
            let cb = mb.cells.column(c).iter().any(|&v| v == 1);
            assert!(!(ca && cb));
        }
    }

    #[test]
    fn centered_box_has_zero_offset_and_unit_peak() {
        let spec = GridSpec::bev(64);
        let (x, y) = spec.cell_center(20, 40);
        let b = Box3D::car([x, y, 0.8], [4.5, 1.9, 1.6], 0.2);
        let t = detection_targets(&[b], &spec, 1).unwrap();
        assert_eq!(t.heatmap[[0, 20, 40]], 1.0);
        assert_eq!(t.offset_z[[0, 20, 40]], 0.0);
        assert_eq!(t.offset_z[[1, 20, 40]], 0.0);
        assert_eq!(t.n_valid(), 1);
        let (s, c) = (t.yaw[[0, 20, 40]], t.yaw[[1, 20, 40]]);
        assert!((s * s + c * c - 1.0).abs() < 1e-6);
        assert!(t.heatmap.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn shared_center_keeps_nearer_object() {
        let spec = GridSpec::bev(16);
        let near = Box3D::car([0.1, 40.1, 0.8], [4.5, 1.9, 1.6], 0.0);
        let far = Box3D::new(ObjectClass::Car, [0.2, 40.2, 0.8], [4.0, 1.8, 1.5], 0.0);
        let t = detection_targets(&[far, near], &spec, 1).unwrap();
        assert_eq!(t.collisions, 1);
        assert_eq!(t.n_valid(), 1);
        let (r, c) = spec.world_to_cell(0.1, 40.1).unwrap();
        assert!((t.dims[[0, r, c]] - 4.5f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn encode_decode_round_trip() {
        let spec = GridSpec::bev(32);
        let boxes = [
            Box3D::car([-12.3, 20.7, 0.81], [4.4, 1.85, 1.62], 0.3),
            Box3D::car([5.55, 44.4, 0.77], [3.9, 1.7, 1.54], -2.9),
            Box3D::car([17.0, 61.25, 0.9], [4.8, 2.0, 1.8], 1.57),
        ];
        let t = detection_targets(&boxes, &spec, 1).unwrap();
        let heads = targets_as_head_outputs::<f64>(&t);
        let dets = decode_detections(&heads, 0, &spec, 0.99, 100);
        assert_eq!(dets.len(), 3);
        for b in &boxes {
            let d = dets
                .iter()
                .min_by(|p, q| {
                    let dp = (p.bbox.center[0] - b.center[0]).hypot(p.bbox.center[1] - b.center[1]);
                    let dq = (q.bbox.center[0] - b.center[0]).hypot(q.bbox.center[1] - b.center[1]);
                    dp.total_cmp(&dq)
                })
                .unwrap();
            for k in 0..3 {
                assert!((d.bbox.center[k] - b.center[k]).abs() < 1e-6);
                assert!((d.bbox.dims[k] - b.dims[k]).abs() < 1e-6);
            }
            assert!(crate::geometry::normalize_angle(d.bbox.yaw - b.yaw).abs() < 1e-6);
        }
    }
}
