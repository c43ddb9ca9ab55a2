//! Losses, augmentation and the optimization loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array3, Array4, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::detector::{image_pixels, normalize_batch, Detector, ModelKind};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraCalib};
use crate::labels::{bev_foreground_mask, detection_targets, fv_foreground_mask, DetectionTargets, ForegroundMask};
use crate::model::{HeadOutputs, ModelConfig, NetOutputs};
use crate::nn::{sigmoid, softplus, zero_grad, Adam, Real};
use crate::scene::{frame_seed, Dataset, Frame};

/// Multipliers of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub seg_fv: f64,
    pub seg_bev: f64,
    pub heat: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            seg_fv: 1.0,
            seg_bev: 1.0,
            heat: 1.0,
            reg: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.seg_fv, self.seg_bev, self.heat, self.reg].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()))
        }
    }
}

/// Unweighted loss terms and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub seg_fv: f64,
    pub seg_bev: f64,
    pub heat: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 5] = ["total", "seg_fv", "seg_bev", "heat", "reg"];

    pub fn values(&self) -> [f64; 5] {
        [self.total, self.seg_fv, self.seg_bev, self.heat, self.reg]
    }

    fn add_scaled(&mut self, o: &LossTerms, s: f64) {
        self.seg_fv += o.seg_fv * s;
        self.seg_bev += o.seg_bev * s;
        self.heat += o.heat * s;
        self.reg += o.reg * s;
        self.total += o.total * s;
    }
}

/// Stacked supervision for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    /// `[n, 1, rows, cols]` in `{0, 1}`.
    pub fv_mask: Array4<f32>,
    pub bev_mask: Array4<f32>,
    pub heatmap: Array4<f32>,
    pub offset_z: Array4<f32>,
    pub dims: Array4<f32>,
    pub yaw: Array4<f32>,
    /// `[n, rows, cols]`.
    pub valid: Array3<f32>,
}

impl TargetBatch {
    pub fn stack(items: &[(&ForegroundMask, &ForegroundMask, &DetectionTargets)]) -> Result<Self> {
        let (fv0, bev0, t0) = items.first().ok_or_else(|| Error::Shape("empty target batch".into()))?;
        let n = items.len();
        let (fr, fc) = fv0.cells.dim();
        let (br, bc) = bev0.cells.dim();
        let ncls = t0.heatmap.dim().0;
        let mut out = Self {
            fv_mask: Array4::zeros((n, 1, fr, fc)),
            bev_mask: Array4::zeros((n, 1, br, bc)),
            heatmap: Array4::zeros((n, ncls, br, bc)),
            offset_z: Array4::zeros((n, 3, br, bc)),
            dims: Array4::zeros((n, 3, br, bc)),
            yaw: Array4::zeros((n, 2, br, bc)),
            valid: Array3::zeros((n, br, bc)),
        };
        for (i, (fv, bev, t)) in items.iter().enumerate() {
            if fv.cells.dim() != (fr, fc) || bev.cells.dim() != (br, bc) || t.heatmap.dim() != (ncls, br, bc) {
                return Err(Error::Shape(format!("target {i} does not match the batch layout")));
            }
            out.fv_mask.slice_mut(s![i, 0, .., ..]).assign(&fv.to_f32());
            out.bev_mask.slice_mut(s![i, 0, .., ..]).assign(&bev.to_f32());
            out.heatmap.slice_mut(s![i, .., .., ..]).assign(&t.heatmap);
            out.offset_z.slice_mut(s![i, .., .., ..]).assign(&t.offset_z);
            out.dims.slice_mut(s![i, .., .., ..]).assign(&t.dims);
            out.yaw.slice_mut(s![i, .., .., ..]).assign(&t.yaw);
            out.valid.slice_mut(s![i, .., ..]).assign(&t.valid);
        }
        Ok(out)
    }
}

fn check_shape<T>(name: &str, a: &Array4<T>, b: &Array4<f32>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{name}: prediction {:?} vs target {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits and its gradient.
pub fn bce_with_logits<T: Real>(logits: &Array4<T>, target: &Array4<f32>) -> (f64, Array4<T>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array4::zeros(logits.raw_dim());
    Zip::from(&mut grad).and(logits).and(target).for_each(|g, &x, &y| {
        let (x, y) = (x.as_f64(), f64::from(y));
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        *g = T::lit((sigmoid(x) - y) / n);
    });
    (loss / n, grad)
}

/// Penalty-reduced focal loss (alpha = 2, beta = 4) normalized by the
/// number of exact-1 peaks, and its gradient.
pub fn focal_loss<T: Real>(logits: &Array4<T>, target: &Array4<f32>) -> (f64, Array4<T>) {
    const ALPHA: i32 = 2;
    const BETA: i32 = 4;
    let n_pos = target.iter().filter(|&&y| y == 1.0).count().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array4::zeros(logits.raw_dim());
    Zip::from(&mut grad).and(logits).and(target).for_each(|g, &x, &y| {
        let x = x.as_f64();
        let p = sigmoid(x);
        let log_p = -softplus(-x);
        let log_1p = -softplus(x);
        let (l, d) = if y == 1.0 {
            let q = 1.0 - p;
            (
                -q.powi(ALPHA) * log_p,
                ALPHA as f64 * p * q.powi(ALPHA) * log_p - q.powi(ALPHA + 1),
            )
        } else {
            let w = (1.0 - f64::from(y)).powi(BETA);
            (
                -w * p.powi(ALPHA) * log_1p,
                w * (p.powi(ALPHA + 1) - ALPHA as f64 * p.powi(ALPHA) * (1.0 - p) * log_1p),
            )
        };
        loss += l;
        *g = T::lit(d / n_pos);
    });
    (loss / n_pos, grad)
}

/// L1 over regression channels on valid cells, normalized by the number of
/// valid cells; returns the summed loss and per-head gradients.
fn regression_l1<T: Real>(heads: &HeadOutputs<T>, t: &TargetBatch) -> (f64, [Array4<T>; 3]) {
    let n_valid = t.valid.iter().filter(|&&v| v > 0.0).count();
    let norm = n_valid.max(1) as f64;
    let mut loss = 0.0;
    let mut grads = [
        Array4::zeros(heads.offset_z.raw_dim()),
        Array4::zeros(heads.dims.raw_dim()),
        Array4::zeros(heads.yaw.raw_dim()),
    ];
    let pairs = [(&heads.offset_z, &t.offset_z), (&heads.dims, &t.dims), (&heads.yaw, &t.yaw)];
    for ((pred, target), grad) in pairs.into_iter().zip(grads.iter_mut()) {
        for ((b, c, r, k), &x) in pred.indexed_iter() {
            if t.valid[[b, r, k]] <= 0.0 {
                continue;
            }
            let diff = x.as_f64() - f64::from(target[[b, c, r, k]]);
            loss += diff.abs();
            grad[[b, c, r, k]] = T::lit(diff.signum() * f64::from(u8::from(diff != 0.0)) / norm);
        }
    }
    (loss / norm, grads)
}

/// Weighted sum of seg BCE (both views), heatmap focal and regression L1,
/// with gradients with respect to every network output. Seg terms are zero
/// for networks without seg heads.
pub fn total_loss<T: Real>(out: &NetOutputs<T>, t: &TargetBatch, w: &LossWeights) -> Result<(LossTerms, NetOutputs<T>)> {
    check_shape("heatmap", &out.heads.heatmap, &t.heatmap)?;
    check_shape("offset_z", &out.heads.offset_z, &t.offset_z)?;
    check_shape("dims", &out.heads.dims, &t.dims)?;
    check_shape("yaw", &out.heads.yaw, &t.yaw)?;
    let mut terms = LossTerms::default();
    let scale = |mut g: Array4<T>, s: f64| {
        let s = T::lit(s);
        g.mapv_inplace(|v| v * s);
        g
    };
    let fv_grad = match &out.fv_logits {
        Some(x) => {
            check_shape("fv mask", x, &t.fv_mask)?;
            let (l, g) = bce_with_logits(x, &t.fv_mask);
            terms.seg_fv = l;
            Some(scale(g, w.seg_fv))
        }
        None => None,
    };
    let bev_grad = match &out.bev_logits {
        Some(x) => {
            check_shape("bev mask", x, &t.bev_mask)?;
            let (l, g) = bce_with_logits(x, &t.bev_mask);
            terms.seg_bev = l;
            Some(scale(g, w.seg_bev))
        }
        None => None,
    };
    let (heat, heat_grad) = focal_loss(&out.heads.heatmap, &t.heatmap);
    terms.heat = heat;
    let (reg, [g_oz, g_dims, g_yaw]) = regression_l1(&out.heads, t);
    terms.reg = reg;
    terms.total = w.seg_fv * terms.seg_fv + w.seg_bev * terms.seg_bev + w.heat * terms.heat + w.reg * terms.reg;
    Ok((
        terms,
        NetOutputs {
            fv_logits: fv_grad,
            bev_logits: bev_grad,
            heads: HeadOutputs {
                heatmap: scale(heat_grad, w.heat),
                offset_z: scale(g_oz, w.reg),
                dims: scale(g_dims, w.reg),
                yaw: scale(g_yaw, w.reg),
            },
        },
    ))
}

/// Training-time augmentation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Horizontal flip with probability 0.5.
    pub flip: bool,
    /// Brightness, contrast and saturation factors drawn from `[0.8, 1.2]`.
    pub color_jitter: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            color_jitter: true,
        }
    }
}

/// Image, labels and derived supervision for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// `[3, H, W]` in 8-bit units.
    pub pixels: Array3<f32>,
    pub calib: CameraCalib,
    pub boxes: Vec<Box3D>,
    pub fv_mask: ForegroundMask,
    pub bev_mask: ForegroundMask,
    pub targets: DetectionTargets,
}

impl Sample {
    pub fn from_frame(frame: &Frame, config: &ModelConfig) -> Result<Self> {
        let pixels = image_pixels(&frame.image);
        if pixels.dim().1 != config.input_size || pixels.dim().2 != config.input_size {
            return Err(Error::Frame {
                frame_id: frame.id,
                reason: format!(
                    "image is {}x{}, model expects {}",
                    pixels.dim().2,
                    pixels.dim().1,
                    config.input_size
                ),
            });
        }
        Self::from_parts(frame.id, pixels, frame.calib, frame.boxes.clone(), config)
    }

    fn from_parts(id: usize, pixels: Array3<f32>, calib: CameraCalib, boxes: Vec<Box3D>, config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            id,
            fv_mask: fv_foreground_mask(&boxes, &config.fv_grid())?,
            bev_mask: bev_foreground_mask(&boxes, &config.bev_grid())?,
            targets: detection_targets(&boxes, &config.bev_grid(), config.n_classes)?,
            pixels,
            calib,
            boxes,
        })
    }
}

/// Calibration of the horizontally mirrored image.
pub fn flip_calibration(c: &CameraCalib, image_width: f64) -> CameraCalib {
    CameraCalib {
        cx: image_width - c.cx,
        yaw: -c.yaw,
        roll: -c.roll,
        ..*c
    }
}

/// Mirrors image, boxes, calibration and masks across the vertical axis;
/// detection targets are re-encoded from the mirrored boxes.
pub fn flip_sample(s: &Sample, config: &ModelConfig) -> Result<Sample> {
    let mut pixels = s.pixels.clone();
    pixels.invert_axis(Axis(2));
    let pixels = pixels.as_standard_layout().into_owned();
    let boxes: Vec<Box3D> = s.boxes.iter().map(Box3D::flipped_x).collect();
    Ok(Sample {
        id: s.id,
        pixels,
        calib: flip_calibration(&s.calib, config.input_size as f64),
        targets: detection_targets(&boxes, &config.bev_grid(), config.n_classes)?,
        boxes,
        fv_mask: s.fv_mask.flipped(),
        bev_mask: s.bev_mask.flipped(),
    })
}

/// Photometric jitter on pixels only (labels untouched).
pub fn color_jitter(pixels: &mut Array3<f32>, brightness: f32, contrast: f32, saturation: f32) {
    pixels.mapv_inplace(|v| v * brightness);
    let mean = pixels.mean().unwrap_or(0.0);
    pixels.mapv_inplace(|v| (v - mean) * contrast + mean);
    let (_, h, w) = pixels.dim();
    for y in 0..h {
        for x in 0..w {
            let lum = 0.299 * pixels[[0, y, x]] + 0.587 * pixels[[1, y, x]] + 0.114 * pixels[[2, y, x]];
            for c in 0..3 {
                let v = &mut pixels[[c, y, x]];
                *v = ((*v - lum) * saturation + lum).clamp(0.0, 255.0);
            }
        }
    }
}

pub fn augment(s: &Sample, config: &ModelConfig, aug: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let mut out = if aug.flip && rng.random_bool(0.5) {
        flip_sample(s, config)?
    } else {
        s.clone()
    };
    if aug.color_jitter {
        let mut f = || rng.random_range(0.8f32..1.2);
        let (b, c, sat) = (f(), f(), f());
        color_jitter(&mut out.pixels, b, c, sat);
    }
    Ok(out)
}

/// Optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Periodic checkpoint interval in epochs (0 disables periodic files).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 60 epochs, batch 8, constant learning rate.
    pub fn desk() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 8,
            epochs: 60,
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            checkpoint_every: 10,
        }
    }

    /// 200 epochs at batch 6.
    pub fn paper() -> Self {
        Self {
            batch_size: 6,
            epochs: 200,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::InvalidConfig("lr must be > 0 and batch_size >= 1".into()));
        }
        Ok(())
    }
}

/// Loss record for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossTerms,
    pub val: Option<LossTerms>,
    pub seconds: f64,
}

/// Model, optimizer and progress of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Detector<f32>,
    pub optimizer: Adam<f32>,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn batch_tensors(samples: &[&Sample]) -> Result<(Array4<f32>, Vec<CameraCalib>, TargetBatch)> {
    let images = normalize_batch::<f32>(&samples.iter().map(|s| &s.pixels).collect::<Vec<_>>())?;
    let calibs = samples.iter().map(|s| s.calib).collect();
    let items: Vec<_> = samples.iter().map(|s| (&s.fv_mask, &s.bev_mask, &s.targets)).collect();
    Ok((images, calibs, TargetBatch::stack(&items)?))
}

impl Trainer {
    pub fn new(kind: ModelKind, model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: Detector::new(kind, model_config, config.seed)?,
            optimizer: Adam::new(config.lr),
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// One gradient step; returns the batch loss terms.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<LossTerms> {
        let (images, calibs, targets) = batch_tensors(batch)?;
        let out = self.model.forward(&images, &calibs, true)?;
        let (terms, grads) = total_loss(&out, &targets, &self.config.weights)?;
        if !terms.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch + 1,
                batch: 0,
                frame_ids: batch.iter().map(|s| s.id).collect(),
            });
        }
        zero_grad(&mut self.model);
        self.model.backward(&grads);
        self.optimizer.step(&mut self.model);
        Ok(terms)
    }

    /// Shuffles, augments and steps through `train` once.
    pub fn run_epoch(&mut self, train: &[Sample]) -> Result<LossTerms> {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(self.config.seed ^ 0x5eed, self.epoch));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let cfg = *self.model.config();
        let mut sum = LossTerms::default();
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(self.config.batch_size).enumerate() {
            if chunk.len() < 2 && order.len() >= 2 {
                continue;
            }
            let aug: Vec<Sample> = chunk
                .iter()
                .map(|&i| augment(&train[i], &cfg, &self.config.augment, &mut rng))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = aug.iter().collect();
            let terms = self.step(&refs).map_err(|e| match e {
                Error::NonFiniteLoss { epoch, frame_ids, .. } => {
                    log::error!("non-finite loss at epoch {epoch}, batch {bi}, frames {frame_ids:?}");
                    Error::NonFiniteLoss { epoch, batch: bi, frame_ids }
                }
                other => other,
            })?;
            sum.add_scaled(&terms, chunk.len() as f64);
            count += chunk.len();
        }
        self.epoch += 1;
        let mut mean = LossTerms::default();
        mean.add_scaled(&sum, 1.0 / count.max(1) as f64);
        Ok(mean)
    }

    /// Mean loss over `samples` in inference mode, without augmentation.
    pub fn evaluate_loss(&mut self, samples: &[Sample]) -> Result<LossTerms> {
        let mut sum = LossTerms::default();
        for chunk in samples.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let (images, calibs, targets) = batch_tensors(&refs)?;
            let out = self.model.forward(&images, &calibs, false)?;
            let (terms, _) = total_loss(&out, &targets, &self.config.weights)?;
            sum.add_scaled(&terms, chunk.len() as f64);
        }
        let mut mean = LossTerms::default();
        mean.add_scaled(&sum, 1.0 / samples.len().max(1) as f64);
        Ok(mean)
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "train": self.config, "history": self.history })
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let meta = self.meta();
        save_checkpoint(path, &mut self.model, Some(&self.optimizer), self.epoch, meta)
    }

    /// Restores model, optimizer state, epoch counter and loss history.
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ck = load_checkpoint(path)?;
        let history = ck
            .meta
            .get("history")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .unwrap_or_default();
        let mut optimizer = ck.optimizer.unwrap_or_else(|| Adam::new(config.lr));
        optimizer.lr = config.lr;
        Ok(Self {
            model: ck.model,
            optimizer,
            config,
            epoch: ck.epoch,
            history,
        })
    }
}

pub fn samples_from_frames(frames: &[Frame], config: &ModelConfig) -> Result<Vec<Sample>> {
    frames.iter().map(|f| Sample::from_frame(f, config)).collect()
}

/// Writes the loss history in long format: `epoch,term,value`.
pub fn write_loss_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,term,value\n");
    for r in history {
        for (name, v) in LossTerms::NAMES.iter().zip(r.train.values()) {
            s.push_str(&format!("{},train_{name},{v}\n", r.epoch));
        }
        if let Some(val) = r.val {
            for (name, v) in LossTerms::NAMES.iter().zip(val.values()) {
                s.push_str(&format!("{},val_{name},{v}\n", r.epoch));
            }
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Files produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: PathBuf,
    pub best: PathBuf,
    pub loss_csv: PathBuf,
    pub history: Vec<EpochRecord>,
}

/// Trains on the dataset's train split, validating on its val split.
///
/// Writes `last.ckpt` every epoch, `best.ckpt` on each new minimum of the
/// validation loss (train loss when there is no val split),
/// `epoch_NNN.ckpt` every `checkpoint_every` epochs and `loss_curve.csv`.
/// With `resume` and an existing `last.ckpt`, training continues from it.
pub fn train(
    dataset: &Dataset,
    kind: ModelKind,
    model_config: ModelConfig,
    config: TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir)?;
    let train_frames = dataset.load_split(&dataset.manifest.train)?;
    let val_frames = dataset.load_split(&dataset.manifest.val)?;
    let train_samples = samples_from_frames(&train_frames, &model_config)?;
    let val_samples = samples_from_frames(&val_frames, &model_config)?;
    let last = out_dir.join("last.ckpt");
    let best = out_dir.join("best.ckpt");
    let loss_csv = out_dir.join("loss_curve.csv");
    let mut trainer = if resume && last.exists() {
        log::info!("resuming from {}", last.display());
        Trainer::resume(&last, config)?
    } else {
        Trainer::new(kind, model_config, config)?
    };
    if trainer.model.kind() != kind {
        return Err(Error::InvalidConfig(format!(
            "checkpoint holds a {} model, asked to train {kind}",
            trainer.model.kind()
        )));
    }
    let score = |r: &EpochRecord| r.val.map_or(r.train.total, |v| v.total);
    let mut best_score = trainer.history.iter().map(score).fold(f64::INFINITY, f64::min);
    while trainer.epoch < config.epochs {
        let t0 = Instant::now();
        let train_terms = trainer.run_epoch(&train_samples)?;
        let val_terms = if val_samples.is_empty() {
            None
        } else {
            Some(trainer.evaluate_loss(&val_samples)?)
        };
        let record = EpochRecord {
            epoch: trainer.epoch,
            train: train_terms,
            val: val_terms,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "{kind} epoch {}/{}: train {:.4} val {} ({:.1}s)",
            record.epoch,
            config.epochs,
            train_terms.total,
            val_terms.map_or("-".to_string(), |v| format!("{:.4}", v.total)),
            record.seconds
        );
        trainer.history.push(record);
        trainer.save(&last)?;
        if score(&record) < best_score {
            best_score = score(&record);
            fs::copy(&last, &best)?;
        }
        if config.checkpoint_every > 0 && trainer.epoch % config.checkpoint_every == 0 {
            fs::copy(&last, out_dir.join(format!("epoch_{:03}.ckpt", trainer.epoch)))?;
        }
        write_loss_csv(&loss_csv, &trainer.history)?;
    }
    if !best.exists() && last.exists() {
        fs::copy(&last, &best)?;
    }
    write_loss_csv(&loss_csv, &trainer.history)?;
    Ok(TrainOutcome {
        last,
        best,
        loss_csv,
        history: trainer.history,
    })
}
