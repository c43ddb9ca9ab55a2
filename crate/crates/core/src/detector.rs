//! A trained network of either kind, plus image batching and inference.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use ndarray::{s, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineNet;
use crate::error::{Error, Result};
use crate::geometry::CameraCalib;
use crate::model::{decode_detections, CbrNet, Detection, ModelConfig, NetOutputs};
use crate::nn::{Module, Param, Real};
use crate::scene::Frame;

/// Per-channel normalization applied to 8-bit pixels.
pub const PIXEL_MEAN: f32 = 127.5;
pub const PIXEL_SCALE: f32 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cbr,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cbr => "cbr",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cbr" => Ok(ModelKind::Cbr),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Either network behind one training / inference interface.
#[derive(Debug, Clone)]
pub enum Detector<T> {
    Cbr(CbrNet<T>),
    Baseline(BaselineNet<T>),
}

impl<T: Real> Detector<T> {
    pub fn new(kind: ModelKind, config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Cbr => Detector::Cbr(CbrNet::new(config, seed)?),
            ModelKind::Baseline => Detector::Baseline(BaselineNet::new(config, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Detector::Cbr(_) => ModelKind::Cbr,
            Detector::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Detector::Cbr(n) => &n.config,
            Detector::Baseline(n) => &n.config,
        }
    }

    /// The CBR network never sees `calibs`; the baseline needs one per image.
    pub fn forward(&mut self, images: &Array4<T>, calibs: &[CameraCalib], train: bool) -> Result<NetOutputs<T>> {
        match self {
            Detector::Cbr(net) => net.forward(images, train),
            Detector::Baseline(net) => Ok(NetOutputs {
                fv_logits: None,
                bev_logits: None,
                heads: net.forward(images, calibs, train)?,
            }),
        }
    }

    pub fn backward(&mut self, grads: &NetOutputs<T>) {
        match self {
            Detector::Cbr(net) => net.backward(grads),
            Detector::Baseline(net) => net.backward(&grads.heads),
        }
    }
}

impl<T: Real> Module<T> for Detector<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Detector::Cbr(n) => n.visit_params(prefix, f),
            Detector::Baseline(n) => n.visit_params(prefix, f),
        }
    }
}

/// `[3, H, W]` floats, still in 8-bit units.
pub fn image_pixels(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        f32::from(img.get_pixel(x as u32, y as u32)[c])
    })
}

/// Stacks `[3, H, W]` pixel arrays into a normalized `[n, 3, H, W]` batch.
pub fn normalize_batch<T: Real>(pixels: &[&Array3<f32>]) -> Result<Array4<T>> {
    let first = pixels.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (c, h, w) = first.dim();
    let mut out = Array4::zeros((pixels.len(), c, h, w));
    for (i, p) in pixels.iter().enumerate() {
        if p.dim() != (c, h, w) {
            return Err(Error::Shape(format!("image {i} has shape {:?}, expected {:?}", p.dim(), (c, h, w))));
        }
        out.slice_mut(s![i, .., .., ..])
            .zip_mut_with(p, |o, &v| *o = T::lit(f64::from((v - PIXEL_MEAN) / PIXEL_SCALE)));
    }
    Ok(out)
}

/// Decoding settings used at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub conf_threshold: f64,
    pub max_dets: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.05,
            max_dets: 50,
        }
    }
}

/// Per-frame detections plus sigmoid seg probabilities (CBR only).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frame_id: usize,
    pub detections: Vec<Detection>,
    pub fv_prob: Option<ndarray::Array2<f32>>,
    pub bev_prob: Option<ndarray::Array2<f32>>,
}

/// Runs the network in inference mode over `frames`, `batch` at a time.
/// `calib_for` supplies the calibration handed to the model (it may be a
/// perturbed copy); CBR ignores it.
pub fn predict(
    model: &mut Detector<f32>,
    frames: &[Frame],
    batch: usize,
    decode: &DecodeConfig,
    calib_for: &dyn Fn(&Frame) -> CameraCalib,
) -> Result<Vec<Prediction>> {
    let grid = model.config().bev_grid();
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(batch.max(1)) {
        let pixels: Vec<Array3<f32>> = chunk.iter().map(|f| image_pixels(&f.image)).collect();
        let images = normalize_batch::<f32>(&pixels.iter().collect::<Vec<_>>())?;
        let calibs: Vec<CameraCalib> = chunk.iter().map(calib_for).collect();
        let net = model.forward(&images, &calibs, false)?;
        let prob = |a: &Option<Array4<f32>>, i: usize| {
            a.as_ref().map(|a| a.slice(s![i, 0, .., ..]).mapv(crate::nn::sigmoid))
        };
        for (i, f) in chunk.iter().enumerate() {
            out.push(Prediction {
                frame_id: f.id,
                detections: decode_detections(&net.heads, i, &grid, decode.conf_threshold, decode.max_dets),
                fv_prob: prob(&net.fv_logits, i),
                bev_prob: prob(&net.bev_logits, i),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionKind;
    use crate::scene::{sample_scene, SceneSpec};

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_size: 64,
            backbone_widths: [4, 4, 8, 8],
            bottleneck_channels: 8,
            decoded_channels: 4,
            mlp_hidden: 16,
            n_classes: 1,
            fusion: FusionKind::Scf,
        }
    }

    #[test]
    fn kind_parses_case_insensitively() {
        assert_eq!("CBR".parse::<ModelKind>().unwrap(), ModelKind::Cbr);
        assert_eq!("baseline".parse::<ModelKind>().unwrap(), ModelKind::Baseline);
        assert!("voxel".parse::<ModelKind>().is_err());
    }

    #[test]
    fn normalization_centers_pixels() {
        let a = Array3::from_elem((3, 2, 2), 127.5f32);
        let b = Array3::from_elem((3, 2, 2), 191.5f32);
        let x = normalize_batch::<f64>(&[&a, &b]).unwrap();
        assert_eq!(x.dim(), (2, 3, 2, 2));
        assert!(x.slice(s![0, .., .., ..]).iter().all(|&v| v == 0.0));
        assert!(x.slice(s![1, .., .., ..]).iter().all(|&v| v == 1.0));
        assert!(normalize_batch::<f32>(&[]).is_err());
    }

    #[test]
    fn cbr_prediction_ignores_calibration() {
        let spec = SceneSpec {
            image_size: 64,
            ..SceneSpec::default()
        };
        let frames = vec![sample_scene(&spec, 1).unwrap(), sample_scene(&spec, 2).unwrap()];
        let mut model = Detector::<f32>::new(ModelKind::Cbr, tiny(), 3).unwrap();
        let decode = DecodeConfig {
            conf_threshold: 0.0,
            max_dets: 5,
        };
        let a = predict(&mut model, &frames, 2, &decode, &|f| f.calib).unwrap();
        let b = predict(&mut model, &frames, 1, &decode, &|f| crate::noise::perturb_calibration(&f.calib, [5.0, -3.0, 2.0]))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].bev_prob.as_ref().unwrap().dim(), (16, 16));
        assert_eq!(a[0].detections.len(), 5);
    }
}
