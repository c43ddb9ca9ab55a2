//! The calibration-free detector: backbone, view decoupling, cross-view
//! fusion, segmentation and detection heads, and box decoding.
//!
//! Nothing in this module takes a [`CameraCalib`](crate::geometry::CameraCalib);
//! predictions are a function of the image alone.

mod backbone;
mod decode;
mod fusion;
mod fvd;
mod heads;

pub use backbone::Backbone;
pub use decode::{decode_detections, Detection};
pub use fusion::{
    column_similarity, condense_front_view, global_attention, pushed_input, Fusion, FusionKind,
};
pub use fvd::ViewBranch;
pub use heads::{DetHeads, HeadOutputs, SegHead, HEAD_CHANNELS};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::nn::{join, Module, Param, Real};

/// Which plane a feature grid's spatial axes span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Perspective,
    /// Rows are height (`z`), columns lateral `x`.
    Front,
    /// Rows are depth (`y`), columns lateral `x`.
    Bird,
}

/// Batched `[n, channels, rows, cols]` features tagged with their view.
#[derive(Debug, Clone)]
pub struct FeatureGrid<T> {
    pub data: Array4<T>,
    pub view: View,
}

impl<T: Real> FeatureGrid<T> {
    pub fn new(data: Array4<T>, view: View) -> Self {
        Self { data, view }
    }

    pub fn shape(&self) -> [usize; 4] {
        let (n, c, h, w) = self.data.dim();
        [n, c, h, w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input side `H = W` in pixels; must be a multiple of 64.
    pub input_size: usize,
    /// Channel widths of the four residual stages.
    pub backbone_widths: [usize; 4],
    /// Perspective feature channels after the bottleneck convolution.
    pub bottleneck_channels: usize,
    /// Channels of the decoded front-view and BEV grids.
    pub decoded_channels: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub fusion: FusionKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 256x256 input, standard ResNet-18 widths.
    pub fn desk() -> Self {
        Self {
            input_size: 256,
            backbone_widths: [64, 128, 256, 512],
            bottleneck_channels: 128,
            decoded_channels: 64,
            mlp_hidden: 1024,
            n_classes: 1,
            fusion: FusionKind::Scf,
        }
    }

    /// Thin variant that trains in minutes on a single CPU core.
    pub fn compact() -> Self {
        Self {
            input_size: 128,
            backbone_widths: [16, 24, 32, 64],
            bottleneck_channels: 64,
            decoded_channels: 24,
            mlp_hidden: 512,
            n_classes: 1,
            fusion: FusionKind::Scf,
        }
    }

    /// The full-resolution layout: 1024x1024 input and 1024 bottleneck channels.
    pub fn paper() -> Self {
        Self {
            input_size: 1024,
            backbone_widths: [64, 128, 256, 512],
            bottleneck_channels: 1024,
            decoded_channels: 64,
            mlp_hidden: 1024,
            n_classes: 1,
            fusion: FusionKind::Scf,
        }
    }

    pub fn with_fusion(mut self, fusion: FusionKind) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(64) {
            return Err(Error::InvalidConfig(format!(
                "input size {} is not a positive multiple of 64",
                self.input_size
            )));
        }
        let widths_ok = self.backbone_widths.iter().all(|&w| w > 0);
        if !widths_ok
            || self.bottleneck_channels == 0
            || self.decoded_channels == 0
            || self.mlp_hidden == 0
            || self.n_classes == 0
        {
            return Err(Error::InvalidConfig("all widths must be positive".into()));
        }
        Ok(())
    }

    /// Side of the perspective feature grid, `H / 64`.
    pub fn pv_cells(&self) -> usize {
        self.input_size / 64
    }

    /// Side of the decoded view grids, `H / 4`.
    pub fn grid_cells(&self) -> usize {
        self.input_size / 4
    }

    pub fn bev_grid(&self) -> GridSpec {
        GridSpec::bev(self.grid_cells())
    }

    pub fn fv_grid(&self) -> GridSpec {
        GridSpec::fv(self.grid_cells())
    }
}

/// Raw network outputs for a batch. Segmentation logits are absent for
/// models without segmentation branches.
#[derive(Debug, Clone)]
pub struct NetOutputs<T> {
    pub fv_logits: Option<Array4<T>>,
    pub bev_logits: Option<Array4<T>>,
    pub heads: HeadOutputs<T>,
}

/// Stage-by-stage output shapes of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub pv: [usize; 4],
    pub fv: [usize; 4],
    pub bev: [usize; 4],
    pub fused: [usize; 4],
}

#[derive(Debug, Clone)]
pub struct CbrNet<T> {
    pub config: ModelConfig,
    pub backbone: Backbone<T>,
    pub fv_branch: ViewBranch<T>,
    pub bev_branch: ViewBranch<T>,
    pub fusion: Fusion<T>,
    pub fv_seg: SegHead<T>,
    pub bev_seg: SegHead<T>,
    pub det: DetHeads<T>,
}

impl<T: Real> CbrNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cd = config.decoded_channels;
        let mut net = Self {
            config,
            backbone: Backbone::new(config.backbone_widths, config.bottleneck_channels),
            fv_branch: ViewBranch::new(&config),
            bev_branch: ViewBranch::new(&config),
            fusion: Fusion::new(config.fusion, cd),
            fv_seg: SegHead::new(cd),
            bev_seg: SegHead::new(cd),
            det: DetHeads::new(cd, config.n_classes),
        };
        crate::nn::initialize(&mut net, seed);
        Ok(net)
    }

    pub fn check_input(&self, images: &Array4<T>) -> Result<()> {
        let (_, c, h, w) = images.dim();
        let s = self.config.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Shape(format!(
                "expected [n, 3, {s}, {s}] images, got {:?}",
                images.shape()
            )));
        }
        Ok(())
    }

    pub fn backbone_forward(&mut self, images: &Array4<T>, train: bool) -> Result<FeatureGrid<T>> {
        self.check_input(images)?;
        Ok(FeatureGrid::new(self.backbone.forward(images, train), View::Perspective))
    }

    /// Decouples perspective features into front-view and BEV grids.
    pub fn fvd_forward(
        &mut self,
        pv: &FeatureGrid<T>,
        train: bool,
    ) -> Result<(FeatureGrid<T>, FeatureGrid<T>)> {
        if pv.view != View::Perspective {
            return Err(Error::Shape("view decoupling expects perspective features".into()));
        }
        let fv = self.fv_branch.forward(&pv.data, train);
        let bev = self.bev_branch.forward(&pv.data, train);
        Ok((FeatureGrid::new(fv, View::Front), FeatureGrid::new(bev, View::Bird)))
    }

    pub fn forward_traced(
        &mut self,
        images: &Array4<T>,
        train: bool,
    ) -> Result<(NetOutputs<T>, ShapeTrace)> {
        let pv = self.backbone_forward(images, train)?;
        let (fv, bev) = self.fvd_forward(&pv, train)?;
        let fv_logits = self.fv_seg.forward(&fv.data, train);
        let bev_logits = self.bev_seg.forward(&bev.data, train);
        let fused = self.fusion.forward(&fv, &bev, train)?;
        let heads = self.det.forward(&fused.data, train);
        let trace = ShapeTrace {
            pv: pv.shape(),
            fv: fv.shape(),
            bev: bev.shape(),
            fused: fused.shape(),
        };
        Ok((
            NetOutputs {
                fv_logits: Some(fv_logits),
                bev_logits: Some(bev_logits),
                heads,
            },
            trace,
        ))
    }

    pub fn forward(&mut self, images: &Array4<T>, train: bool) -> Result<NetOutputs<T>> {
        Ok(self.forward_traced(images, train)?.0)
    }

    /// Backpropagates output gradients through the whole network,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, grads: &NetOutputs<T>) {
        let d_fused = self.det.backward(&grads.heads);
        let (mut d_fv, mut d_bev) = self.fusion.backward(&d_fused);
        if let Some(g) = &grads.fv_logits {
            d_fv += &self.fv_seg.backward(g);
        }
        if let Some(g) = &grads.bev_logits {
            d_bev += &self.bev_seg.backward(g);
        }
        let mut d_pv = self.fv_branch.backward(&d_fv);
        d_pv += &self.bev_branch.backward(&d_bev);
        self.backbone.backward(&d_pv);
    }
}

impl<T: Real> Module<T> for CbrNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.backbone.visit_params(&join(prefix, "backbone"), f);
        self.fv_branch.visit_params(&join(prefix, "fvd.fv"), f);
        self.bev_branch.visit_params(&join(prefix, "fvd.bev"), f);
        self.fusion.visit_params(&join(prefix, "fusion"), f);
        self.fv_seg.visit_params(&join(prefix, "seg.fv"), f);
        self.bev_seg.visit_params(&join(prefix, "seg.bev"), f);
        self.det.visit_params(&join(prefix, "det"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{param_count, zero_grad};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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

    fn images(n: usize, size: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((n, 3, size, size), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn shape_schedule_small() {
        let mut net = CbrNet::<f64>::new(tiny(), 1).unwrap();
        let (out, trace) = net.forward_traced(&images(2, 64, 0), true).unwrap();
        assert_eq!(trace.pv, [2, 8, 1, 1]);
        assert_eq!(trace.fv, [2, 4, 16, 16]);
        assert_eq!(trace.bev, [2, 4, 16, 16]);
        assert_eq!(trace.fused, [2, 4, 16, 16]);
        assert_eq!(out.bev_logits.unwrap().dim(), (2, 1, 16, 16));
        assert_eq!(out.heads.heatmap.dim(), (2, 1, 16, 16));
    }

    #[test]
    fn wrong_input_size_rejected() {
        let mut net = CbrNet::<f32>::new(tiny(), 1).unwrap();
        let bad = Array4::<f32>::zeros((1, 3, 128, 128));
        assert!(net.forward(&bad, false).is_err());
        assert!(ModelConfig { input_size: 96, ..tiny() }.validate().is_err());
    }

    #[test]
    fn segmentation_is_independent_of_fusion_variant() {
        let x = images(2, 64, 3);
        let mut outs = Vec::new();
        for kind in [FusionKind::None, FusionKind::Scf, FusionKind::Cpf, FusionKind::Sgf] {
            let mut net = CbrNet::<f64>::new(tiny().with_fusion(kind), 42).unwrap();
            outs.push(net.forward(&x, false).unwrap());
        }
        for o in &outs[1..] {
            assert_eq!(o.bev_logits, outs[0].bev_logits);
            assert_eq!(o.fv_logits, outs[0].fv_logits);
        }
    }

    #[test]
    fn backward_runs_and_fills_gradients() {
        let mut net = CbrNet::<f64>::new(tiny(), 5).unwrap();
        let out = net.forward(&images(2, 64, 1), true).unwrap();
        zero_grad(&mut net);
        let ones = |a: &Array4<f64>| Array4::from_elem(a.dim(), 1.0);
        let grads = NetOutputs {
            fv_logits: out.fv_logits.as_ref().map(ones),
            bev_logits: out.bev_logits.as_ref().map(ones),
            heads: out.heads.map(ones),
        };
        net.backward(&grads);
        let mut nonzero = 0;
        net.visit_params("", &mut |_, p| {
            if p.trainable && p.grad.iter().any(|g| *g != 0.0) {
                nonzero += 1;
            }
        });
        assert!(nonzero > 10);
        assert!(param_count(&mut net) > 1000);
    }
}
