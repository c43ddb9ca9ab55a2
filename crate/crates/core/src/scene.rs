//! Procedural roadside scenes: a tilted camera above a flat road with
//! cuboid vehicles, rendered with a painter's algorithm.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    box_corners, Box3D, CameraCalib, CameraProjector, GridSpec, ObjectClass,
    PERCEPTION_Y, PERCEPTION_Z,
};
use crate::labels::{bev_foreground_mask, fv_foreground_mask, ForegroundMask};

/// Scene distribution. Angles in degrees, lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub image_size: usize,
    /// Inclusive object-count interval.
    pub n_objects: (usize, usize),
    pub camera_height: (f64, f64),
    pub pitch_deg: (f64, f64),
    /// `fx = fy = focal_scale * image_size`.
    pub focal_scale: f64,
    /// Number of object classes drawn (1 = cars only).
    pub n_classes: usize,
    /// Fraction of vehicles aligned with the road (yaw near 0 or pi).
    pub road_aligned: f64,
    /// Std of additive pixel noise, in 8-bit levels.
    pub pixel_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_size: 256,
            n_objects: (3, 10),
            camera_height: (5.5, 7.5),
            pitch_deg: (8.0, 30.0),
            focal_scale: 1.0,
            n_classes: 1,
            road_aligned: 0.7,
            pixel_noise: 3.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("scene: {m}")));
        if self.image_size == 0 {
            return bad("image_size must be positive");
        }
        if self.n_objects.0 > self.n_objects.1 {
            return bad("empty n_objects interval");
        }
        let (h0, h1) = self.camera_height;
        if !(h0 > 0.0 && h0 <= h1) {
            return bad("camera_height must be a positive, non-empty interval");
        }
        let (p0, p1) = self.pitch_deg;
        if !(0.0..=35.0).contains(&p0) || !(0.0..=35.0).contains(&p1) || p0 > p1 {
            return bad("pitch_deg must be a non-empty interval inside [0, 35]");
        }
        if !(self.focal_scale > 0.0) {
            return bad("focal_scale must be positive");
        }
        if !(1..=ObjectClass::ALL.len()).contains(&self.n_classes) {
            return bad("n_classes must be 1..=3");
        }
        if !(0.0..=1.0).contains(&self.road_aligned) || !(self.pixel_noise >= 0.0) {
            return bad("road_aligned must lie in [0, 1] and pixel_noise be >= 0");
        }
        Ok(())
    }
}

/// One rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub image: RgbImage,
    pub boxes: Vec<Box3D>,
    pub calib: CameraCalib,
}

/// Per-frame seed derived from the master seed and frame index.
pub fn frame_seed(master: u64, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(master ^ mix(index as u64))
}

const PLACEMENT_ATTEMPTS: usize = 200;
const MIN_GAP: f64 = 0.5;

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sample_dims(rng: &mut ChaCha8Rng, class: ObjectClass) -> [f64; 3] {
    let (l, w, h) = match class {
        ObjectClass::Car => ((3.8, 4.9), (1.7, 2.0), (1.4, 1.7)),
        ObjectClass::Van => ((4.8, 5.6), (1.9, 2.1), (1.9, 2.4)),
        ObjectClass::Truck => ((7.0, 10.0), (2.3, 2.6), (2.8, 3.6)),
    };
    [uniform(rng, l), uniform(rng, w), uniform(rng, h)]
}

fn in_image(p: &[f64; 2], size: f64, margin: f64) -> bool {
    p[0] >= margin && p[0] <= size - margin && p[1] >= margin && p[1] <= size - margin
}

/// Draws a scene for `(spec, seed)`. Object placement retries are bounded;
/// a crowded scene ends up with fewer objects rather than overlaps.
pub fn sample_scene(spec: &SceneSpec, seed: u64) -> Result<Frame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = spec.image_size as f64;
    let f = spec.focal_scale * size;
    let calib = CameraCalib {
        fx: f,
        fy: f,
        cx: size / 2.0,
        cy: size / 2.0,
        pitch: uniform(&mut rng, spec.pitch_deg).to_radians(),
        yaw: 0.0,
        roll: 0.0,
        position: [0.0, 0.0, uniform(&mut rng, spec.camera_height)],
    };
    let proj = CameraProjector::new(&calib)?;
    let target = rng.random_range(spec.n_objects.0..=spec.n_objects.1);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(target);
    let mut attempts = 0;
    while boxes.len() < target && attempts < PLACEMENT_ATTEMPTS * target.max(1) {
        attempts += 1;
        let class = ObjectClass::ALL[rng.random_range(0..spec.n_classes)];
        let dims = sample_dims(&mut rng, class);
        let yaw = if rng.random_bool(spec.road_aligned) {
            let base = if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::PI };
            base + rng.random_range(-0.15..0.15)
        } else {
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
        };
        let x = rng.random_range(-ROAD_HALF_WIDTH - 1.0..ROAD_HALF_WIDTH + 1.0);
        let y = rng.random_range(PERCEPTION_Y.0 + 3.0..PERCEPTION_Y.1 - 3.0);
        let candidate = Box3D::new(class, [x, y, dims[2] / 2.0], dims, yaw);
        if candidate.center[2] + dims[2] / 2.0 > PERCEPTION_Z.1 {
            continue;
        }
        let corners = box_corners(&candidate);
        let projected: Vec<_> = corners.iter().map(|c| proj.project(c)).collect();
        if projected.iter().any(|p| !p.valid) {
            continue;
        }
        let center = proj.project(&Vector3::from(candidate.center));
        if !center.valid || !in_image(&center.pixel, size, 1.0) {
            continue;
        }
        let radius = |b: &Box3D| b.dims[0].hypot(b.dims[1]) / 2.0;
        let clear = boxes.iter().all(|b| {
            let d = (b.center[0] - x).hypot(b.center[1] - y);
            d >= radius(b) + radius(&candidate) + MIN_GAP
        });
        if clear {
            boxes.push(candidate);
        }
    }
    let mut frame = Frame {
        id: 0,
        image: RgbImage::new(spec.image_size as u32, spec.image_size as u32),
        boxes,
        calib,
    };
    let noise_seed = rng.random();
    frame.image = render_image(&frame, spec.pixel_noise, noise_seed)?;
    Ok(frame)
}

/// Frames `0..n` with seeds derived from `master_seed`.
pub fn generate_frames(spec: &SceneSpec, master_seed: u64, n: usize) -> Result<Vec<Frame>> {
    (0..n)
        .map(|i| {
            let mut f = sample_scene(spec, frame_seed(master_seed, i))?;
            f.id = i;
            Ok(f)
        })
        .collect()
}

type Color = [f64; 3];

const SKY_TOP: Color = [110.0, 150.0, 205.0];
const SKY_HORIZON: Color = [190.0, 205.0, 220.0];
const ASPHALT: Color = [92.0, 94.0, 98.0];
const VERGE: Color = [88.0, 118.0, 70.0];
const PAINT: Color = [225.0, 225.0, 215.0];
const LANE_WIDTH: f64 = 3.5;
const ROAD_HALF_WIDTH: f64 = 6.0 * LANE_WIDTH;

fn mix(a: Color, b: Color, t: f64) -> Color {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

fn scale(c: Color, s: f64) -> Color {
    c.map(|v| v * s)
}

fn ground_color(x: f64, y: f64, dist: f64) -> Color {
    let mut c = if x.abs() <= ROAD_HALF_WIDTH { ASPHALT } else { VERGE };
    // alternating 10 m bands give a depth cue at every pitch
    if (y / 10.0).floor().rem_euclid(2.0) == 1.0 {
        c = scale(c, 0.9);
    }
    let lane = (x / LANE_WIDTH).round();
    let on_line = (x - lane * LANE_WIDTH).abs() < 0.15 && lane.abs() <= 6.0;
    let solid = lane == 0.0 || lane.abs() == 6.0;
    if on_line && (solid || y.rem_euclid(9.0) < 4.5) {
        c = PAINT;
    }
    mix(c, SKY_HORIZON, 1.0 - (-dist / 300.0).exp())
}

fn hsv(h: f64, s: f64, v: f64) -> Color {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Per-object body color, a pure function of the box so renders are
/// reproducible from labels alone.
fn object_color(b: &Box3D) -> Color {
    let h = b.center[0].to_bits() ^ b.center[1].to_bits().rotate_left(17) ^ b.yaw.to_bits().rotate_left(31);
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    hsv(rng.random(), rng.random_range(0.35..0.9), rng.random_range(0.45..0.95))
}

fn fill_polygon(img: &mut [Color], size: usize, poly: &[[f64; 2]], color: Color) {
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in poly {
        u0 = u0.min(p[0]);
        u1 = u1.max(p[0]);
        v0 = v0.min(p[1]);
        v1 = v1.max(p[1]);
    }
    let lo = |a: f64| (a - 0.5).ceil().max(0.0) as usize;
    let hi = |a: f64| ((a - 0.5).floor() as i64).min(size as i64 - 1);
    let (c0, c1, r0, r1) = (lo(u0), hi(u1), lo(v0), hi(v1));
    if c1 < 0 || r1 < 0 {
        return;
    }
    let n = poly.len();
    for r in r0..=r1 as usize {
        let y = r as f64 + 0.5;
        for c in c0..=c1 as usize {
            let x = c as f64 + 0.5;
            let (mut pos, mut neg) = (false, false);
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
                pos |= cross > 0.0;
                neg |= cross < 0.0;
            }
            if !(pos && neg) {
                img[r * size + c] = color;
            }
        }
    }
}

/// Renders sky, textured ground, contact shadows, then visible cuboid
/// faces far-to-near, and adds Gaussian pixel noise drawn from `noise_seed`.
pub fn render_image(frame: &Frame, pixel_noise: f64, noise_seed: u64) -> Result<RgbImage> {
    let (w, h) = frame.image.dimensions();
    if w != h {
        return Err(Error::Frame {
            frame_id: frame.id,
            reason: format!("image must be square, got {w}x{h}"),
        });
    }
    let size = w as usize;
    let proj = CameraProjector::new(&frame.calib)?;
    let origin = proj.origin();
    let mut canvas = vec![[0.0; 3]; size * size];
    for r in 0..size {
        for c in 0..size {
            let d = proj.pixel_ray(c as f64 + 0.5, r as f64 + 0.5);
            canvas[r * size + c] = if d.z < -1e-9 {
                let t = -origin.z / d.z;
                let p = origin + d * t;
                ground_color(p.x, p.y, (p - origin).norm())
            } else {
                let elev = (d.z / d.norm()).clamp(0.0, 1.0);
                mix(SKY_HORIZON, SKY_TOP, elev.sqrt())
            };
        }
    }

    let mut order: Vec<&Box3D> = frame.boxes.iter().collect();
    let cam_dist = |b: &Box3D| (Vector3::from(b.center) - origin).norm();
    order.sort_by(|a, b| cam_dist(b).total_cmp(&cam_dist(a)));

    let project_all = |pts: &[Vector3<f64>]| -> Option<Vec<[f64; 2]>> {
        pts.iter()
            .map(|p| {
                let q = proj.project(p);
                q.valid.then_some(q.pixel)
            })
            .collect()
    };
    for b in &order {
        let grown = Box3D::new(b.class, [b.center[0], b.center[1], 0.0], [b.dims[0] + 0.6, b.dims[1] + 0.6, 0.0], b.yaw);
        let shadow: Vec<Vector3<f64>> = grown.bev_corners().iter().map(|p| Vector3::new(p[0], p[1], 0.01)).collect();
        if let Some(poly) = project_all(&shadow) {
            fill_polygon(&mut canvas, size, &poly, [35.0, 36.0, 40.0]);
        }
    }

    let light = Vector3::new(0.45, -0.6, 0.0).normalize();
    for b in &order {
        let base = object_color(b);
        let corners = box_corners(b);
        let center = Vector3::from(b.center);
        let mut faces: Vec<[usize; 4]> = (0..4).map(|i| [i, (i + 1) % 4, (i + 1) % 4 + 4, i + 4]).collect();
        faces.push([4, 5, 6, 7]);
        for face in faces {
            let pts = face.map(|i| corners[i]);
            let fc = (pts[0] + pts[1] + pts[2] + pts[3]) / 4.0;
            let normal = (fc - center).normalize();
            if normal.dot(&(origin - fc)) <= 0.0 {
                continue;
            }
            let shade = if normal.z > 0.5 {
                1.0
            } else {
                0.55 + 0.35 * normal.dot(&light).max(0.0)
            };
            if let Some(poly) = project_all(&pts) {
                fill_polygon(&mut canvas, size, &poly, scale(base, shade));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = Normal::new(0.0, pixel_noise.max(0.0)).expect("finite std");
    let mut img = RgbImage::new(w, h);
    for (i, px) in img.pixels_mut().enumerate() {
        let c = canvas[i];
        *px = Rgb([0, 1, 2].map(|k| {
            let n = if pixel_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (c[k] + n).round().clamp(0.0, 255.0) as u8
        }));
    }
    Ok(img)
}

/// Train/val partition plus basic counts, stored as `split.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub n_frames: usize,
    pub image_size: usize,
    pub mask_cells: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl SplitManifest {
    /// The last `round(n * val_fraction)` frames form the validation split.
    pub fn new(ids: &[usize], image_size: usize, val_fraction: f64) -> Self {
        let n_val = ((ids.len() as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
        let cut = ids.len() - n_val.min(ids.len());
        Self {
            n_frames: ids.len(),
            image_size,
            mask_cells: image_size / 4,
            train: ids[..cut].to_vec(),
            val: ids[cut..].to_vec(),
        }
    }
}

fn frame_file(root: &Path, dir: &str, id: usize, ext: &str) -> PathBuf {
    root.join(dir).join(format!("{id:06}.{ext}"))
}

/// Writes images, labels, calibrations, BEV/FV masks and `split.json`.
pub fn write_dataset(frames: &[Frame], root: &Path, val_fraction: f64) -> Result<SplitManifest> {
    for dir in ["images", "labels", "calib", "masks/bev", "masks/fv"] {
        fs::create_dir_all(root.join(dir))?;
    }
    let size = frames.first().map_or(0, |f| f.image.width() as usize);
    let cells = size / 4;
    for f in frames {
        if f.image.width() as usize != size {
            return Err(Error::Frame {
                frame_id: f.id,
                reason: "image sizes differ within the dataset".into(),
            });
        }
        f.image.save(frame_file(root, "images", f.id, "png"))?;
        fs::write(frame_file(root, "labels", f.id, "json"), serde_json::to_string_pretty(&f.boxes)?)?;
        fs::write(frame_file(root, "calib", f.id, "json"), f.calib.to_json()?)?;
        if cells > 0 {
            bev_foreground_mask(&f.boxes, &GridSpec::bev(cells))?
                .save_png(&frame_file(root, "masks/bev", f.id, "png"))?;
            fv_foreground_mask(&f.boxes, &GridSpec::fv(cells))?
                .save_png(&frame_file(root, "masks/fv", f.id, "png"))?;
        }
    }
    let ids: Vec<usize> = frames.iter().map(|f| f.id).collect();
    let manifest = SplitManifest::new(&ids, size, val_fraction);
    fs::write(root.join("split.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn frame_err(id: usize, what: &str, e: impl std::fmt::Display) -> Error {
    Error::Frame {
        frame_id: id,
        reason: format!("{what}: {e}"),
    }
}

/// Dataset directory handle.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: SplitManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("split.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::Dataset {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let manifest: SplitManifest = serde_json::from_str(&text).map_err(|e| Error::Dataset {
            path,
            reason: e.to_string(),
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn ids(&self) -> Vec<usize> {
        let all: BTreeSet<usize> = self.manifest.train.iter().chain(&self.manifest.val).copied().collect();
        all.into_iter().collect()
    }

    pub fn load_frame(&self, id: usize) -> Result<Frame> {
        let read = |dir: &str| {
            fs::read_to_string(frame_file(&self.root, dir, id, "json")).map_err(|e| frame_err(id, &format!("{dir} file"), e))
        };
        let boxes: Vec<Box3D> = serde_json::from_str(&read("labels")?).map_err(|e| frame_err(id, "labels", e))?;
        for b in &boxes {
            b.validate().map_err(|e| frame_err(id, "labels", e))?;
        }
        let calib = CameraCalib::from_json(&read("calib")?).map_err(|e| frame_err(id, "calib", e))?;
        let image = image::open(frame_file(&self.root, "images", id, "png"))
            .map_err(|e| frame_err(id, "image", e))?
            .to_rgb8();
        Ok(Frame { id, image, boxes, calib })
    }

    pub fn load_masks(&self, id: usize) -> Result<(ForegroundMask, ForegroundMask)> {
        use crate::geometry::Plane;
        let bev = ForegroundMask::load_png(&frame_file(&self.root, "masks/bev", id, "png"), Plane::Bev)
            .map_err(|e| frame_err(id, "bev mask", e))?;
        let fv = ForegroundMask::load_png(&frame_file(&self.root, "masks/fv", id, "png"), Plane::Fv)
            .map_err(|e| frame_err(id, "fv mask", e))?;
        Ok((bev, fv))
    }

    pub fn load_split(&self, ids: &[usize]) -> Result<Vec<Frame>> {
        ids.iter().map(|&id| self.load_frame(id)).collect()
    }
}

/// Reads every frame listed in the manifest, in id order.
pub fn read_dataset(root: &Path) -> Result<Vec<Frame>> {
    let ds = Dataset::open(root)?;
    ds.load_split(&ds.ids())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotated_iou_bev;

    fn small() -> SceneSpec {
        SceneSpec {
            image_size: 128,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn same_seed_same_frame() {
        let a = sample_scene(&small(), 11).unwrap();
        let b = sample_scene(&small(), 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_scene(&small(), 12).unwrap());
    }

    #[test]
    fn empty_scene_is_background() {
        let spec = SceneSpec {
            n_objects: (0, 0),
            ..small()
        };
        let f = sample_scene(&spec, 3).unwrap();
        assert!(f.boxes.is_empty());
        assert_eq!(f.image.dimensions(), (128, 128));
    }

    #[test]
    fn boxes_satisfy_frame_invariants() {
        let spec = small();
        for seed in 0..40 {
            let f = sample_scene(&spec, seed).unwrap();
            let proj = CameraProjector::new(&f.calib).unwrap();
            for (i, a) in f.boxes.iter().enumerate() {
                assert!(a.center[0].abs() <= 45.0 && (0.0..=90.0).contains(&a.center[1]));
                assert!(a.z_range().1 <= 5.0);
                let seen = box_corners(a)
                    .iter()
                    .map(|c| proj.project(c))
                    .any(|p| p.valid && in_image(&p.pixel, 128.0, 0.0));
                assert!(seen);
                for b in &f.boxes[i + 1..] {
                    assert_eq!(rotated_iou_bev(a, b).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn silhouette_centroid_near_projected_center() {
        let calib = CameraCalib {
            fx: 256.0,
            fy: 256.0,
            cx: 128.0,
            cy: 128.0,
            pitch: 15f64.to_radians(),
            yaw: 0.0,
            roll: 0.0,
            position: [0.0, 0.0, 6.0],
        };
        let proj = CameraProjector::new(&calib).unwrap();
        // ground point on the optical axis
        let axis = proj.pixel_ray(128.0, 128.0);
        let t = -6.0 / axis.z;
        let y = axis.y * t;
        let b = Box3D::car([0.0, y, 0.75], [4.5, 2.0, 1.5], 0.0);
        let empty = Frame {
            id: 0,
            image: RgbImage::new(256, 256),
            boxes: vec![],
            calib,
        };
        let full = Frame {
            boxes: vec![b],
            ..empty.clone()
        };
        let bg = render_image(&empty, 0.0, 0).unwrap();
        let fg = render_image(&full, 0.0, 0).unwrap();
        assert_eq!(fg, render_image(&full, 0.0, 0).unwrap());
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for (x, yy, p) in fg.enumerate_pixels() {
            if *p != *bg.get_pixel(x, yy) {
                su += x as f64 + 0.5;
                sv += yy as f64 + 0.5;
                n += 1.0;
            }
        }
        assert!(n > 50.0);
        let c = proj.project(&Vector3::from(b.center)).pixel;
        assert!((su / n - c[0]).hypot(sv / n - c[1]) < 5.0, "{} {} vs {:?}", su / n, sv / n, c);
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = generate_frames(&small(), 5, 6).unwrap();
        let m = write_dataset(&frames, dir.path(), 0.34).unwrap();
        assert_eq!(m.train.len() + m.val.len(), 6);
        assert_eq!(m.val, vec![4, 5]);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, frames);
        let ds = Dataset::open(dir.path()).unwrap();
        let (bev, fv) = ds.load_masks(2).unwrap();
        assert_eq!(bev, bev_foreground_mask(&frames[2].boxes, &GridSpec::bev(32)).unwrap());
        assert_eq!(fv, fv_foreground_mask(&frames[2].boxes, &GridSpec::fv(32)).unwrap());
    }

    #[test]
    fn missing_label_names_frame() {
        let dir = tempfile::tempdir().unwrap();
        let frames = generate_frames(&small(), 5, 3).unwrap();
        write_dataset(&frames, dir.path(), 0.0).unwrap();
        fs::remove_file(dir.path().join("labels/000001.json")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000001"), "{err}");
    }

    #[test]
    fn invalid_pitch_range_rejected() {
        let spec = SceneSpec {
            pitch_deg: (10.0, 40.0),
            ..small()
        };
        assert!(sample_scene(&spec, 0).is_err());
    }
}
