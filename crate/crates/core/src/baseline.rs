//! Calibration-based comparison detector: a shallow image encoder whose
//! stride-4 features are lifted to BEV by projecting voxel centers through
//! the camera calibration.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraCalib, CameraProjector, GridSpec, Plane, PERCEPTION_Z};
use crate::model::{DetHeads, HeadOutputs, ModelConfig};
use crate::nn::{join, ConvBlock, Module, Param, Real};
use nalgebra::Vector3;

/// BEV grid plus `n_z` height levels spanning the perception height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpec {
    pub grid: GridSpec,
    pub n_z: usize,
}

impl VoxelSpec {
    pub fn new(grid: GridSpec, n_z: usize) -> Self {
        Self { grid, n_z }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.grid.plane != Plane::Bev || self.n_z == 0 {
            return Err(Error::InvalidGrid("voxel grid needs a BEV plane and n_z >= 1".into()));
        }
        Ok(())
    }

    pub fn level_height(&self, k: usize) -> f64 {
        let (z0, z1) = PERCEPTION_Z;
        z0 + (k as f64 + 0.5) * (z1 - z0) / self.n_z as f64
    }
}

/// Sparse linear map from a stride-`stride` feature map to BEV cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingTable {
    /// `(bev cell, feature cell, weight)`; weights already include `1 / n_z`.
    pub entries: Vec<(usize, usize, f64)>,
    pub bev_shape: (usize, usize),
    pub feature_shape: (usize, usize),
}

impl SamplingTable {
    /// Projects each voxel center into the image and records its bilinear
    /// footprint on the feature map; taps outside the map contribute zero.
    pub fn build(calib: &CameraCalib, spec: &VoxelSpec, feature_shape: (usize, usize), stride: usize) -> Result<Self> {
        spec.validate()?;
        let proj = CameraProjector::new(calib)?;
        let (fh, fw) = feature_shape;
        let g = &spec.grid;
        let inv_z = 1.0 / spec.n_z as f64;
        let mut entries = Vec::new();
        for r in 0..g.rows {
            for c in 0..g.cols {
                let (x, y) = g.cell_center(r, c);
                for k in 0..spec.n_z {
                    let p = proj.project(&Vector3::new(x, y, spec.level_height(k)));
                    if !p.valid {
                        continue;
                    }
                    let fu = p.pixel[0] / stride as f64 - 0.5;
                    let fv = p.pixel[1] / stride as f64 - 0.5;
                    let (u0, v0) = (fu.floor(), fv.floor());
                    let (au, av) = (fu - u0, fv - v0);
                    for (dv, wv) in [(0.0, 1.0 - av), (1.0, av)] {
                        for (du, wu) in [(0.0, 1.0 - au), (1.0, au)] {
                            let (uu, vv) = (u0 + du, v0 + dv);
                            let w = wu * wv * inv_z;
                            if w == 0.0 || uu < 0.0 || vv < 0.0 || uu >= fw as f64 || vv >= fh as f64 {
                                continue;
                            }
                            entries.push((r * g.cols + c, vv as usize * fw + uu as usize, w));
                        }
                    }
                }
            }
        }
        Ok(Self {
            entries,
            bev_shape: (g.rows, g.cols),
            feature_shape,
        })
    }

    /// `features`: `[channels, fh * fw]` -> `[channels, rows * cols]`.
    pub fn apply<T: Real>(&self, features: &Array2<T>) -> Array2<T> {
        let mut out = Array2::zeros((features.nrows(), self.bev_shape.0 * self.bev_shape.1));
        for &(cell, src, w) in &self.entries {
            let w = T::lit(w);
            for ch in 0..features.nrows() {
                out[[ch, cell]] += w * features[[ch, src]];
            }
        }
        out
    }

    pub fn apply_transpose<T: Real>(&self, d_out: &Array2<T>) -> Array2<T> {
        let mut d = Array2::zeros((d_out.nrows(), self.feature_shape.0 * self.feature_shape.1));
        for &(cell, src, w) in &self.entries {
            let w = T::lit(w);
            for ch in 0..d_out.nrows() {
                d[[ch, src]] += w * d_out[[ch, cell]];
            }
        }
        d
    }
}

/// Lifts perspective features `[n, c, fh, fw]` to BEV `[n, c, rows, cols]`
/// using one calibration per sample.
pub fn project_bev_features<T: Real>(
    features: &Array4<T>,
    calibs: &[CameraCalib],
    spec: &VoxelSpec,
    stride: usize,
) -> Result<Array4<T>> {
    let tables = build_tables(features.dim(), calibs, spec, stride)?;
    Ok(apply_tables(features, &tables))
}

fn build_tables(
    (n, _, fh, fw): (usize, usize, usize, usize),
    calibs: &[CameraCalib],
    spec: &VoxelSpec,
    stride: usize,
) -> Result<Vec<SamplingTable>> {
    if calibs.len() != n {
        return Err(Error::Shape(format!("{} calibrations for a batch of {n}", calibs.len())));
    }
    calibs.iter().map(|c| SamplingTable::build(c, spec, (fh, fw), stride)).collect()
}

fn apply_tables<T: Real>(features: &Array4<T>, tables: &[SamplingTable]) -> Array4<T> {
    let (n, c, fh, fw) = features.dim();
    let (rows, cols) = tables[0].bev_shape;
    let mut out = Array4::zeros((n, c, rows, cols));
    for (b, t) in tables.iter().enumerate() {
        let f = features
            .index_axis(ndarray::Axis(0), b)
            .to_owned()
            .into_shape_with_order((c, fh * fw))
            .expect("flatten");
        let y = t.apply(&f).into_shape_with_order((c, rows, cols)).expect("shape");
        out.index_axis_mut(ndarray::Axis(0), b).assign(&y);
    }
    out
}

/// Stride of the baseline encoder.
pub const ENCODER_STRIDE: usize = 4;
/// Height levels averaged per BEV cell.
pub const DEFAULT_NZ: usize = 4;

/// Encoder -> voxel projection -> BEV neck -> shared detection heads.
#[derive(Debug, Clone)]
pub struct BaselineNet<T> {
    pub config: ModelConfig,
    pub voxels: VoxelSpec,
    encoder: Vec<ConvBlock<T>>,
    neck: Vec<ConvBlock<T>>,
    pub det: DetHeads<T>,
    tables: Vec<SamplingTable>,
}

impl<T: Real> BaselineNet<T> {
    /// Uses `config.input_size` for the image and grid sizes and
    /// `config.decoded_channels` as the feature width.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.decoded_channels;
        let mut net = Self {
            config,
            voxels: VoxelSpec::new(config.bev_grid(), DEFAULT_NZ),
            encoder: vec![
                ConvBlock::new(3, 16, 3, 2),
                ConvBlock::new(16, 32, 3, 2),
                ConvBlock::new(32, c, 3, 1),
                ConvBlock::new(c, c, 3, 1),
            ],
            neck: vec![ConvBlock::new(c, c, 3, 1), ConvBlock::new(c, c, 3, 1)],
            det: DetHeads::new(c, config.n_classes),
            tables: Vec::new(),
        };
        crate::nn::initialize(&mut net, seed);
        Ok(net)
    }

    pub fn encode(&mut self, images: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let (_, ch, h, w) = images.dim();
        let s = self.config.input_size;
        if ch != 3 || h != s || w != s {
            return Err(Error::Shape(format!("expected [n, 3, {s}, {s}] images, got {:?}", images.shape())));
        }
        let mut x = images.clone();
        for block in &mut self.encoder {
            x = block.forward(&x, train);
        }
        Ok(x)
    }

    pub fn forward(&mut self, images: &Array4<T>, calibs: &[CameraCalib], train: bool) -> Result<HeadOutputs<T>> {
        let feats = self.encode(images, train)?;
        self.tables = build_tables(feats.dim(), calibs, &self.voxels, ENCODER_STRIDE)?;
        let mut x = apply_tables(&feats, &self.tables);
        for block in &mut self.neck {
            x = block.forward(&x, train);
        }
        Ok(self.det.forward(&x, train))
    }

    pub fn backward(&mut self, grads: &HeadOutputs<T>) {
        let mut d = self.det.backward(grads);
        for block in self.neck.iter_mut().rev() {
            d = block.backward(&d);
        }
        let (n, c, _, _) = d.dim();
        let s = self.config.input_size / ENCODER_STRIDE;
        let mut d_feat = Array4::<T>::zeros((n, c, s, s));
        for (b, t) in self.tables.iter().enumerate() {
            let g = d
                .index_axis(ndarray::Axis(0), b)
                .to_owned()
                .into_shape_with_order((c, t.bev_shape.0 * t.bev_shape.1))
                .expect("flatten");
            let back = t.apply_transpose(&g).into_shape_with_order((c, s, s)).expect("shape");
            d_feat.index_axis_mut(ndarray::Axis(0), b).assign(&back);
        }
        for block in self.encoder.iter_mut().rev() {
            d_feat = block.backward(&d_feat);
        }
    }
}

impl<T: Real> Module<T> for BaselineNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("encoder{i}")), f);
        }
        for (i, b) in self.neck.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("neck{i}")), f);
        }
        self.det.visit_params(&join(prefix, "det"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_points;
    use crate::model::FusionKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn calib(pitch_deg: f64) -> CameraCalib {
        CameraCalib {
            fx: 64.0,
            fy: 64.0,
            cx: 32.0,
            cy: 32.0,
            pitch: pitch_deg.to_radians(),
            yaw: 0.0,
            roll: 0.0,
            position: [0.0, 0.0, 6.0],
        }
    }

    fn spec() -> VoxelSpec {
        VoxelSpec::new(GridSpec::bev(16), 4)
    }

    fn features(seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((1, 3, 16, 16), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn voxels_behind_camera_give_zero() {
        // looking straight up: nothing on the ground grid is in front
        let mut c = calib(0.0);
        c.pitch = -80f64.to_radians();
        let out = project_bev_features(&features(0), &[c], &spec(), 4).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_map_samples_constant_inside_frustum() {
        let f = Array4::<f64>::from_elem((1, 2, 16, 16), 3.0);
        let c = calib(20.0);
        let out = project_bev_features(&f, &[c], &spec(), 4).unwrap();
        let proj = CameraProjector::new(&c).unwrap();
        let s = spec();
        let mut checked = 0;
        for r in 0..16 {
            for col in 0..16 {
                let (x, y) = s.grid.cell_center(r, col);
                // all levels well inside the map (one feature cell of margin)
                let inside = (0..4).all(|k| {
                    let p = proj.project(&Vector3::new(x, y, s.level_height(k)));
                    p.valid && (p.pixel[0] / 4.0 - 0.5) >= 0.0 && (p.pixel[0] / 4.0 - 0.5) <= 15.0
                        && (p.pixel[1] / 4.0 - 0.5) >= 0.0 && (p.pixel[1] / 4.0 - 0.5) <= 15.0
                });
                if inside {
                    checked += 1;
                    for ch in 0..2 {
                        assert!((out[[0, ch, r, col]] - 3.0).abs() < 1e-12);
                    }
                }
            }
        }
        assert!(checked > 5);
    }

    #[test]
    fn matches_per_voxel_loop() {
        let f = features(3);
        let c = calib(18.0);
        let s = spec();
        let out = project_bev_features(&f, &[c], &s, 4).unwrap();
        for r in 0..16 {
            for col in 0..16 {
                let (x, y) = s.grid.cell_center(r, col);
                let pts: Vec<_> = (0..4).map(|k| Vector3::new(x, y, s.level_height(k))).collect();
                let projs = project_points(&c, &pts).unwrap();
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for p in &projs {
                        if !p.valid {
                            continue;
                        }
                        let (fu, fv) = (p.pixel[0] / 4.0 - 0.5, p.pixel[1] / 4.0 - 0.5);
                        let tap = |u: i64, v: i64| {
                            if u < 0 || v < 0 || u >= 16 || v >= 16 {
                                0.0
                            } else {
                                f[[0, ch, v as usize, u as usize]]
                            }
                        };
                        let (u0, v0) = (fu.floor() as i64, fv.floor() as i64);
                        let (a, b) = (fu - fu.floor(), fv - fv.floor());
                        acc += (1.0 - a) * (1.0 - b) * tap(u0, v0)
                            + a * (1.0 - b) * tap(u0 + 1, v0)
                            + (1.0 - a) * b * tap(u0, v0 + 1)
                            + a * b * tap(u0 + 1, v0 + 1);
                    }
                    assert!((out[[0, ch, r, col]] - acc / 4.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn projection_is_linear_and_transpose_is_adjoint() {
        let s = spec();
        let t = SamplingTable::build(&calib(22.0), &s, (16, 16), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Array2<f64> = Array2::from_shape_fn((2, 256), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((2, 256), |_| rng.random_range(-1.0..1.0));
        let lhs = t.apply(&(&a * 2.0 - &b));
        let rhs = &t.apply(&a) * 2.0 - &t.apply(&b);
        assert!((&lhs - &rhs).iter().all(|v| v.abs() < 1e-12));
        let y = Array2::from_shape_fn((2, 256), |_| rng.random_range(-1.0..1.0));
        let dot1: f64 = (&t.apply(&a) * &y).sum();
        let dot2: f64 = (&a * &t.apply_transpose(&y)).sum();
        assert!((dot1 - dot2).abs() < 1e-10);
    }

    #[test]
    fn forward_depends_on_calibration() {
        let cfg = ModelConfig {
            input_size: 64,
            backbone_widths: [4, 4, 4, 4],
            bottleneck_channels: 4,
            decoded_channels: 4,
            mlp_hidden: 8,
            n_classes: 1,
            fusion: FusionKind::None,
        };
        let mut net = BaselineNet::<f64>::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Array4::from_shape_fn((1, 3, 64, 64), |_| rng.random_range(-1.0..1.0));
        let a = net.forward(&img, &[calib(15.0)], false).unwrap();
        let b = net.forward(&img, &[calib(15.0)], false).unwrap();
        let c = net.forward(&img, &[calib(17.0)], false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let z = net.forward(&Array4::zeros((1, 3, 64, 64)), &[calib(15.0)], false).unwrap();
        assert!(z.all_finite());
    }
}
