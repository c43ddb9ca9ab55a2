//! Frames, the pinhole camera, oriented boxes and box overlap.
//!
//! All labels and predictions live in the canonical ground frame: the origin
//! is the camera's vertical projection onto the ground plane, `x` points
//! right, `y` forward and `z` up. The camera frame is the usual optical one
//! (`x` right, `y` down, `z` along the optical axis).
//!
//! Camera orientation is given by pitch/yaw/roll angles composed as
//! `Rz(yaw) * Ry(pitch) * Rx(roll)` (extrinsic Z-Y-X) in a forward-left-up
//! body frame whose forward axis coincides with ground `+y` when all angles
//! are zero. Positive pitch tilts the optical axis down towards the ground.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points whose camera-frame depth is at or below this are not projected.
pub const MIN_DEPTH: f64 = 1e-3;

/// Builds `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn euler_to_rotation(pitch: f64, yaw: f64, roll: f64) -> Result<Matrix3<f64>> {
    if !(pitch.is_finite() && yaw.is_finite() && roll.is_finite()) {
        return Err(Error::NonFiniteAngle { pitch, yaw, roll });
    }
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let (sr, cr) = roll.sin_cos();
    Ok(Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    ))
}

/// Forward-left-up body axes expressed in the ground frame.
fn ground_from_body() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}

/// Optical camera axes expressed in the body frame.
fn body_from_optical() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

/// Pinhole intrinsics plus extrinsic pose of an infrastructure camera.
///
/// Serialized as
/// `{"fx","fy","cx","cy","pitch","yaw","roll","position":[x,y,z]}` with
/// angles in radians and the position in ground-frame meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraCalib {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    pub position: [f64; 3],
}

impl CameraCalib {
    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.pitch, self.yaw, self.roll];
        if all.iter().chain(self.position.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCalib("non-finite field".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidCalib(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.position[2] <= 0.0 {
            return Err(Error::InvalidCalib(format!(
                "camera height must be positive, got {}",
                self.position[2]
            )));
        }
        Ok(())
    }

    /// Rotation taking optical-frame vectors to ground-frame vectors.
    pub fn ground_from_camera(&self) -> Result<Matrix3<f64>> {
        let r = euler_to_rotation(self.pitch, self.yaw, self.roll)?;
        Ok(ground_from_body() * r * body_from_optical())
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let calib: CameraCalib = serde_json::from_str(s)?;
        calib.validate()?;
        Ok(calib)
    }
}

/// Result of projecting one ground-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
    pub valid: bool,
}

/// Projects ground-frame points into the image. Points at depth
/// `<= MIN_DEPTH` are flagged invalid and carry a NaN pixel.
pub fn project_points(calib: &CameraCalib, pts: &[Vector3<f64>]) -> Result<Vec<Projection>> {
    let cam = CameraProjector::new(calib)?;
    Ok(pts.iter().map(|p| cam.project(p)).collect())
}

/// Precomputed world-to-camera transform for repeated projection.
#[derive(Debug, Clone, Copy)]
pub struct CameraProjector {
    camera_from_ground: Matrix3<f64>,
    origin: Vector3<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl CameraProjector {
    pub fn new(calib: &CameraCalib) -> Result<Self> {
        let r = calib.ground_from_camera()?;
        Ok(Self {
            camera_from_ground: r.transpose(),
            origin: Vector3::from(calib.position),
            fx: calib.fx,
            fy: calib.fy,
            cx: calib.cx,
            cy: calib.cy,
        })
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.camera_from_ground * (p - self.origin)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        let pc = self.to_camera(p);
        if pc.z <= MIN_DEPTH {
            return Projection {
                pixel: [f64::NAN, f64::NAN],
                depth: pc.z,
                valid: false,
            };
        }
        Projection {
            pixel: [
                self.fx * pc.x / pc.z + self.cx,
                self.fy * pc.y / pc.z + self.cy,
            ],
            depth: pc.z,
            valid: true,
        }
    }

    /// Ray direction (ground frame, unnormalized) through a pixel.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.camera_from_ground.transpose() * d
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }
}

/// Object categories. Only `Car` is generated by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Van,
    Truck,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Van, ObjectClass::Truck];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Oriented cuboid in the ground frame.
///
/// `center[2]` is the height of the box center. `dims` is
/// `(length, width, height)`. At `yaw = 0` the length axis points along
/// `+y`; positive yaw rotates counter-clockwise seen from above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub class: ObjectClass,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    pub fn new(class: ObjectClass, center: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self {
            class,
            center,
            dims,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn car(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self::new(ObjectClass::Car, center, dims, yaw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::DegenerateBox(format!("dims {:?}", self.dims)));
        }
        if self.center.iter().any(|c| !c.is_finite()) || !self.yaw.is_finite() {
            return Err(Error::DegenerateBox(format!(
                "non-finite center/yaw {:?} {}",
                self.center, self.yaw
            )));
        }
        Ok(())
    }

    /// Unit vectors of the length and width axes in the ground plane.
    pub fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.yaw.sin_cos();
        ([-s, c], [c, s])
    }

    /// Footprint rectangle, counter-clockwise seen from above.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (u, v) = self.axes();
        let hl = self.dims[0] / 2.0;
        let hw = self.dims[1] / 2.0;
        let [x, y, _] = self.center;
        let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)];
        signs.map(|(a, b)| {
            [
                x + a * hl * u[0] + b * hw * v[0],
                y + a * hl * u[1] + b * hw * v[1],
            ]
        })
    }

    pub fn z_range(&self) -> (f64, f64) {
        let hh = self.dims[2] / 2.0;
        (self.center[2] - hh, self.center[2] + hh)
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn planar_distance(&self) -> f64 {
        self.center[0].hypot(self.center[1])
    }

    /// Mirror across the `x = 0` plane.
    pub fn flipped_x(&self) -> Self {
        Self::new(
            self.class,
            [-self.center[0], self.center[1], self.center[2]],
            self.dims,
            -self.yaw,
        )
    }
}

/// The eight corners: bottom face counter-clockwise (seen from above)
/// followed by the top face in the same order.
pub fn box_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let bev = b.bev_corners();
    let (z0, z1) = b.z_range();
    std::array::from_fn(|k| {
        let [x, y] = bev[k % 4];
        Vector3::new(x, y, if k < 4 { z0 } else { z1 })
    })
}

/// Signed area of a polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Sutherland-Hodgman clip of `subject` against a convex counter-clockwise
/// `clip` polygon.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if out.is_empty() {
            break;
        }
        let a = clip[e];
        let b = clip[(e + 1) % m];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let sc = side(cur);
            let sp = side(prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection area of two box footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let inter = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&inter).max(0.0)
}

fn check_pair(a: &Box3D, b: &Box3D) -> Result<()> {
    a.validate()?;
    b.validate()
}

/// Rotated-rectangle IoU of the two footprints.
pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> Result<f64> {
    check_pair(a, b)?;
    let inter = bev_intersection_area(a, b);
    let area_a = a.dims[0] * a.dims[1];
    let area_b = b.dims[0] * b.dims[1];
    let union = area_a + area_b - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Volumetric IoU: footprint intersection times vertical overlap over the
/// union of volumes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    check_pair(a, b)?;
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return Ok(0.0);
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Orthographic plane a grid rasterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plane {
    /// Ground plane; rows run along `y`.
    Bev,
    /// Lateral-height plane; rows run along `z`.
    Fv,
}

/// Metric-to-cell mapping. Row 0 is the far edge (max `y` for BEV, max `z`
/// for FV) and column 0 the minimum `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub plane: Plane,
    pub x_range: (f64, f64),
    /// `y` range for BEV grids, `z` range for FV grids.
    pub v_range: (f64, f64),
    pub rows: usize,
    pub cols: usize,
}

/// Lateral extent of the perception volume.
pub const PERCEPTION_X: (f64, f64) = (-45.0, 45.0);
/// Forward extent of the perception volume.
pub const PERCEPTION_Y: (f64, f64) = (0.0, 90.0);
/// Vertical extent of the perception volume.
pub const PERCEPTION_Z: (f64, f64) = (0.0, 5.0);

impl GridSpec {
    pub fn bev(cells: usize) -> Self {
        Self {
            plane: Plane::Bev,
            x_range: PERCEPTION_X,
            v_range: PERCEPTION_Y,
            rows: cells,
            cols: cells,
        }
    }

    pub fn fv(cells: usize) -> Self {
        Self {
            plane: Plane::Fv,
            x_range: PERCEPTION_X,
            v_range: PERCEPTION_Z,
            rows: cells,
            cols: cells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rows > 0
            && self.cols > 0
            && self.x_range.1 > self.x_range.0
            && self.v_range.1 > self.v_range.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidGrid(format!("{self:?}")))
        }
    }

    pub fn cell_width(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.v_range.1 - self.v_range.0) / self.rows as f64
    }

    /// Continuous `(row, col)` coordinates; integer parts index the cell.
    pub fn to_continuous(&self, x: f64, v: f64) -> (f64, f64) {
        (
            (self.v_range.1 - v) / self.cell_height(),
            (x - self.x_range.0) / self.cell_width(),
        )
    }

    pub fn from_continuous(&self, row: f64, col: f64) -> (f64, f64) {
        (
            self.x_range.0 + col * self.cell_width(),
            self.v_range.1 - row * self.cell_height(),
        )
    }

    /// Cell containing `(x, v)`, or `None` outside the closed range. Points on
    /// the max edges fall into the last cell.
    pub fn world_to_cell(&self, x: f64, v: f64) -> Option<(usize, usize)> {
        let inside = (self.x_range.0..=self.x_range.1).contains(&x)
            && (self.v_range.0..=self.v_range.1).contains(&v);
        if !inside {
            return None;
        }
        let (r, c) = self.to_continuous(x, v);
        Some((
            (r.floor() as usize).min(self.rows - 1),
            (c.floor() as usize).min(self.cols - 1),
        ))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        self.from_continuous(row as f64 + 0.5, col as f64 + 0.5)
    }

    pub fn shares_x_axis(&self, other: &GridSpec) -> bool {
        self.x_range == other.x_range && self.cols == other.cols
    }
}
