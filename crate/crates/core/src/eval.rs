//! Detection and segmentation metrics: greedy matching, AP over 40 recall
//! points, distance slicing, error-source ablation, mask mIoU / PR-AUC.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, rotated_iou_bev, Box3D};
use crate::model::Detection;

/// Overlap measure used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::ThreeD, Task::Bev];

    pub fn name(self) -> &'static str {
        match self {
            Task::Bev => "AP_BEV",
            Task::ThreeD => "AP_3D",
        }
    }
}

/// Prediction attributes replaced by the candidate ground truth's before
/// computing IoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorSource {
    None,
    IgnoreZ,
    IgnoreHeight,
}

impl ErrorSource {
    pub const ALL: [ErrorSource; 3] = [ErrorSource::None, ErrorSource::IgnoreZ, ErrorSource::IgnoreHeight];

    pub fn name(self) -> &'static str {
        match self {
            ErrorSource::None => "NONE",
            ErrorSource::IgnoreZ => "IGNORE_Z",
            ErrorSource::IgnoreHeight => "IGNORE_HEIGHT",
        }
    }

    pub fn apply(self, pred: &Box3D, gt: &Box3D) -> Box3D {
        let mut p = *pred;
        match self {
            ErrorSource::None => {}
            ErrorSource::IgnoreZ => p.center[2] = gt.center[2],
            ErrorSource::IgnoreHeight => p.dims[2] = gt.dims[2],
        }
        p
    }
}

/// Distance-based difficulty: a box counts when its planar distance from
/// the origin is below the level's limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "mod.",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Limits for easy / moderate / hard, meters.
    pub difficulty_limits: [f64; 3],
    /// Boundaries of the distance bins, meters.
    pub distance_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.5, 0.7],
            difficulty_limits: [30.0, 60.0, 90.0],
            distance_thresholds: vec![30.0, 60.0, 90.0],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite());
        if self.iou_thresholds.is_empty() || !increasing(&self.iou_thresholds) {
            return Err(Error::InvalidConfig("IoU thresholds must be strictly increasing".into()));
        }
        if !increasing(&self.difficulty_limits) || !increasing(&self.distance_thresholds) {
            return Err(Error::InvalidConfig("distance limits must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn limit(&self, d: Difficulty) -> f64 {
        self.difficulty_limits[d as usize]
    }

    /// Half-open bins `[0, t0), [t0, t1), ..., [t_last, inf)`.
    pub fn distance_bins(&self) -> Vec<(f64, f64)> {
        let mut edges = vec![0.0];
        edges.extend(&self.distance_thresholds);
        edges.push(f64::INFINITY);
        edges.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Predictions (any order) and ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_id: usize,
    pub preds: Vec<Detection>,
    pub gts: Vec<Box3D>,
}

/// IoU after removing `source`'s error. A height substitution can shrink
/// the vertical overlap of an off-center prediction, so the ablated value is
/// never allowed below the plain one.
pub fn iou(task: Task, source: ErrorSource, pred: &Box3D, gt: &Box3D) -> f64 {
    let raw = |p: &Box3D| {
        match task {
            Task::Bev => rotated_iou_bev(p, gt),
            Task::ThreeD => iou_3d(p, gt),
        }
        .unwrap_or(0.0)
    };
    match source {
        ErrorSource::None => raw(pred),
        _ => raw(&source.apply(pred, gt)).max(raw(pred)),
    }
}

/// Greedy matching: in order, each prediction takes the unmatched ground
/// truth with the highest IoU at or above `threshold`. Returns the matched
/// ground-truth index per prediction.
pub fn match_detections(
    preds: &[Box3D],
    gts: &[Box3D],
    iou_fn: &dyn Fn(&Box3D, &Box3D) -> f64,
    threshold: f64,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let v = iou_fn(p, g);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            best.map(|(j, _)| {
                taken[j] = true;
                j
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// AP over recall points `1/40 .. 40/40` (precision interpolated as the max
/// precision at recall >= r), in percent. Ground truths failing `care` are
/// neither matchable targets nor counted; a prediction matching one of them,
/// or unmatched with its own location failing `care`, is ignored. `None`
/// when no ground truth passes the filter.
pub fn ap_r40(
    frames: &[FrameResult],
    task: Task,
    threshold: f64,
    source: ErrorSource,
    care: &dyn Fn(&Box3D) -> bool,
) -> Option<f64> {
    let mut scored: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for f in frames {
        let (cared, ignored): (Vec<Box3D>, Vec<Box3D>) = f.gts.iter().partition(|g| care(g));
        n_gt += cared.len();
        let mut order: Vec<usize> = (0..f.preds.len()).collect();
        order.sort_by(|&a, &b| f.preds[b].score.total_cmp(&f.preds[a].score));
        let mut taken_c = vec![false; cared.len()];
        let mut taken_i = vec![false; ignored.len()];
        for &pi in &order {
            let p = &f.preds[pi].bbox;
            let best = |gts: &[Box3D], taken: &[bool]| {
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in gts.iter().enumerate() {
                    if taken[j] {
                        continue;
                    }
                    let v = iou(task, source, p, g);
                    if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
                best.map(|(j, _)| j)
            };
            let outcome = if let Some(j) = best(&cared, &taken_c) {
                taken_c[j] = true;
                Outcome::Tp
            } else if let Some(j) = best(&ignored, &taken_i) {
                taken_i[j] = true;
                Outcome::Ignored
            } else if care(p) {
                Outcome::Fp
            } else {
                Outcome::Ignored
            };
            if outcome != Outcome::Ignored {
                scored.push((f.preds[pi].score, f.frame_id, pi, outcome == Outcome::Tp));
            }
        }
    }
    if n_gt == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let flags: Vec<bool> = scored.iter().map(|s| s.3).collect();
    Some(ap_from_flags(&flags, n_gt))
}

/// AP|R40 from score-sorted TP flags and the ground-truth count.
pub fn ap_from_flags(flags: &[bool], n_gt: usize) -> f64 {
    let mut tp = 0usize;
    let mut pr: Vec<(f64, f64)> = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        pr.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0;
        let p = pr
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, prec)| *prec)
            .fold(0.0, f64::max);
        sum += p;
    }
    sum / 40.0 * 100.0
}

pub fn difficulty_filter(limit: f64) -> impl Fn(&Box3D) -> bool {
    move |b: &Box3D| b.planar_distance() < limit
}

pub fn bin_filter((lo, hi): (f64, f64)) -> impl Fn(&Box3D) -> bool {
    move |b: &Box3D| {
        let d = b.planar_distance();
        d >= lo && d < hi
    }
}

/// Per-bin AP with out-of-bin ground truth ignored.
pub fn eval_by_distance(frames: &[FrameResult], task: Task, threshold: f64, cfg: &EvalConfig) -> Vec<DistanceEntry> {
    cfg.distance_bins()
        .into_iter()
        .map(|bin| DistanceEntry {
            task,
            iou: threshold,
            lo: bin.0,
            hi: bin.1.is_finite().then_some(bin.1),
            ap: ap_r40(frames, task, threshold, ErrorSource::None, &bin_filter(bin)),
        })
        .collect()
}

/// Pixel-level segmentation quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub miou: f64,
    /// `None` when no frame has foreground.
    pub map: Option<f64>,
    pub fg_iou: Option<f64>,
    pub bg_iou: f64,
}

/// Area under the precision-recall curve of `prob` against `gt`, with one
/// point per distinct threshold and a leading `(0, first precision)` point.
/// `None` when `gt` has no positives.
pub fn pr_auc(prob: &[f32], gt: &[bool]) -> Option<f64> {
    let n_pos = gt.iter().filter(|&&g| g).count();
    if n_pos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..prob.len()).collect();
    idx.sort_by(|&a, &b| prob[b].total_cmp(&prob[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let t = prob[idx[i]];
        while i < idx.len() && prob[idx[i]] == t {
            if gt[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, points[0].1);
    for (r, p) in points {
        area += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    Some(area)
}

/// Binarizes at 0.5 and averages per-class IoU over frames (frames with an
/// empty class union are skipped for that class); mAP is the mean PR-AUC
/// over frames that contain foreground.
pub fn seg_metrics(probs: &[Array2<f32>], gts: &[Array2<u8>]) -> Result<SegMetrics> {
    if probs.is_empty() || probs.len() != gts.len() {
        return Err(Error::Shape(format!("{} probability maps for {} masks", probs.len(), gts.len())));
    }
    let (mut fg, mut bg, mut ap) = (Vec::new(), Vec::new(), Vec::new());
    for (p, g) in probs.iter().zip(gts) {
        if p.dim() != g.dim() {
            return Err(Error::Shape(format!("mask {:?} vs prediction {:?}", g.dim(), p.dim())));
        }
        let mut counts = [[0usize; 2]; 2];
        for (&pv, &gv) in p.iter().zip(g.iter()) {
            counts[usize::from(pv >= 0.5)][usize::from(gv > 0)] += 1;
        }
        let class_iou = |c: usize| {
            let inter = counts[c][c];
            let union = counts[c][0] + counts[c][1] + counts[1 - c][c];
            (union > 0).then(|| inter as f64 / union as f64)
        };
        if g.iter().any(|&v| v > 0) {
            fg.extend(class_iou(1));
        }
        bg.extend(class_iou(0));
        let flat_p: Vec<f32> = p.iter().copied().collect();
        let flat_g: Vec<bool> = g.iter().map(|&v| v > 0).collect();
        ap.extend(pr_auc(&flat_p, &flat_g));
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| 100.0 * v.iter().sum::<f64>() / v.len() as f64);
    let (fg_iou, bg_iou) = (mean(&fg), mean(&bg).unwrap_or(0.0));
    Ok(SegMetrics {
        miou: fg_iou.map_or(bg_iou, |f| (f + bg_iou) / 2.0),
        map: mean(&ap),
        fg_iou,
        bg_iou,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub task: Task,
    pub iou: f64,
    pub difficulty: Difficulty,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub task: Task,
    pub iou: f64,
    pub lo: f64,
    /// `None` for the open last bin.
    pub hi: Option<f64>,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSourceEntry {
    pub mode: ErrorSource,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub frames: usize,
    pub gt: usize,
    pub predictions: usize,
    /// True positives at BEV IoU 0.5 without distance filtering.
    pub matches: usize,
}

/// All metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: Vec<ApEntry>,
    pub distance: Vec<DistanceEntry>,
    /// AP_3D at the lowest IoU threshold over every ground truth.
    pub error_source: Vec<ErrorSourceEntry>,
    pub seg_fv: Option<SegMetrics>,
    pub seg_bev: Option<SegMetrics>,
    pub counts: Counts,
}

impl EvalReport {
    pub fn get(&self, task: Task, iou: f64, difficulty: Difficulty) -> Option<f64> {
        self.ap
            .iter()
            .find(|e| e.task == task && e.iou == iou && e.difficulty == difficulty)
            .and_then(|e| e.ap)
    }

    pub fn error_source_ap(&self, mode: ErrorSource) -> Option<f64> {
        self.error_source.iter().find(|e| e.mode == mode).and_then(|e| e.ap)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text tables: AP by task / IoU / difficulty, distance bins,
    /// error sources and segmentation.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let mut out = String::new();
        let mut ious: Vec<f64> = self.ap.iter().map(|e| e.iou).collect();
        ious.sort_by(f64::total_cmp);
        ious.dedup();
        let _ = writeln!(out, "{:<8} {:>5} {:>8} {:>8} {:>8}", "metric", "IoU", "easy", "mod.", "hard");
        for task in Task::ALL {
            for &iou in &ious {
                let _ = write!(out, "{:<8} {:>5.2}", task.name(), iou);
                for d in Difficulty::ALL {
                    let _ = write!(out, " {:>8}", fmt(self.get(task, iou, d)));
                }
                out.push('\n');
            }
        }
        if !self.distance.is_empty() {
            out.push('\n');
            let _ = writeln!(out, "{:<8} {:>5} {:>12} {:>8}", "metric", "IoU", "distance", "AP");
            for e in &self.distance {
                let bin = match e.hi {
                    Some(hi) => format!("[{:.0},{hi:.0})", e.lo),
                    None => format!("[{:.0},inf)", e.lo),
                };
                let _ = writeln!(out, "{:<8} {:>5.2} {:>12} {:>8}", e.task.name(), e.iou, bin, fmt(e.ap));
            }
        }
        if !self.error_source.is_empty() {
            out.push('\n');
            let _ = writeln!(out, "{:<14} {:>8}", "error source", "AP_3D");
            for e in &self.error_source {
                let _ = writeln!(out, "{:<14} {:>8}", e.mode.name(), fmt(e.ap));
            }
        }
        for (name, seg) in [("FV", self.seg_fv), ("BEV", self.seg_bev)] {
            if let Some(s) = seg {
                let _ = writeln!(out, "\n{name} segmentation: mIoU {:.2}  mAP {}", s.miou, fmt(s.map));
            }
        }
        let c = self.counts;
        let _ = writeln!(
            out,
            "\nframes {}  gt {}  predictions {}  matches@BEV0.5 {}",
            c.frames, c.gt, c.predictions, c.matches
        );
        out
    }
}

/// Runs every detection metric; segmentation is added by the caller when
/// probability maps exist.
pub fn evaluate(frames: &[FrameResult], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut ap = Vec::new();
    for task in Task::ALL {
        for &iou_t in &cfg.iou_thresholds {
            for d in Difficulty::ALL {
                ap.push(ApEntry {
                    task,
                    iou: iou_t,
                    difficulty: d,
                    ap: ap_r40(frames, task, iou_t, ErrorSource::None, &difficulty_filter(cfg.limit(d))),
                });
            }
        }
    }
    let base = cfg.iou_thresholds[0];
    let mut distance = Vec::new();
    for task in Task::ALL {
        distance.extend(eval_by_distance(frames, task, base, cfg));
    }
    let error_source = ErrorSource::ALL
        .iter()
        .map(|&mode| ErrorSourceEntry {
            mode,
            ap: ap_r40(frames, Task::ThreeD, base, mode, &|_| true),
        })
        .collect();
    let mut counts = Counts {
        frames: frames.len(),
        ..Counts::default()
    };
    for f in frames {
        counts.gt += f.gts.len();
        counts.predictions += f.preds.len();
        let mut sorted = f.preds.clone();
        sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
        let boxes: Vec<Box3D> = sorted.iter().map(|d| d.bbox).collect();
        counts.matches += match_detections(&boxes, &f.gts, &|p, g| iou(Task::Bev, ErrorSource::None, p, g), 0.5)
            .iter()
            .filter(|m| m.is_some())
            .count();
    }
    Ok(EvalReport {
        ap,
        distance,
        error_source,
        seg_fv: None,
        seg_bev: None,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, y: f64) -> Box3D {
        Box3D::car([x, y, 0.8], [4.5, 2.0, 1.6], 0.0)
    }

    fn det(b: Box3D, score: f64) -> Detection {
        Detection { bbox: b, score }
    }

    fn all(_: &Box3D) -> bool {
        true
    }

    #[test]
    fn greedy_matching_basics() {
        let gt = [car(0.0, 20.0)];
        let f = |p: &Box3D, g: &Box3D| iou(Task::Bev, ErrorSource::None, p, g);
        assert_eq!(match_detections(&[car(0.0, 20.2)], &gt, &f, 0.5), vec![Some(0)]);
        assert_eq!(match_detections(&[car(0.0, 20.2), car(0.0, 20.1)], &gt, &f, 0.5), vec![Some(0), None]);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gts = vec![car(0.0, 20.0), car(5.0, 40.0)];
        let perfect = FrameResult {
            frame_id: 0,
            preds: gts.iter().map(|&g| det(g, 0.9)).collect(),
            gts: gts.clone(),
        };
        assert_eq!(ap_r40(&[perfect], Task::ThreeD, 0.7, ErrorSource::None, &all), Some(100.0));
        let none = FrameResult {
            frame_id: 0,
            preds: vec![],
            gts,
        };
        assert_eq!(ap_r40(&[none], Task::Bev, 0.5, ErrorSource::None, &all), Some(0.0));
    }

    #[test]
    fn half_recall_gives_fifty() {
        let f = FrameResult {
            frame_id: 0,
            preds: vec![det(car(0.0, 20.0), 0.8)],
            gts: vec![car(0.0, 20.0), car(8.0, 50.0)],
        };
        assert_eq!(ap_r40(&[f], Task::Bev, 0.5, ErrorSource::None, &all), Some(50.0));
    }

    #[test]
    fn no_ground_truth_is_absent() {
        let f = FrameResult {
            frame_id: 0,
            preds: vec![det(car(0.0, 20.0), 0.8)],
            gts: vec![],
        };
        assert_eq!(ap_r40(&[f], Task::Bev, 0.5, ErrorSource::None, &all), None);
    }

    #[test]
    fn ignored_ground_truth_does_not_create_false_positives() {
        let near = car(0.0, 20.0);
        let far = car(0.0, 70.0);
        let f = FrameResult {
            frame_id: 0,
            preds: vec![det(far, 0.95), det(near, 0.9)],
            gts: vec![near, far],
        };
        let easy = difficulty_filter(30.0);
        assert_eq!(ap_r40(&[f], Task::Bev, 0.5, ErrorSource::None, &easy), Some(100.0));
    }

    #[test]
    fn distance_bins_are_half_open() {
        let cfg = EvalConfig::default();
        let f = FrameResult {
            frame_id: 0,
            preds: vec![],
            gts: vec![car(0.0, 30.0)],
        };
        let bins = eval_by_distance(&[f], Task::Bev, 0.5, &cfg);
        assert_eq!(bins.len(), 4);
        assert_eq!(bins[0].ap, None);
        assert_eq!(bins[1].ap, Some(0.0));
        assert_eq!(bins[2].ap, None);
        assert_eq!(bins[3].ap, None);
    }

    #[test]
    fn ignore_z_recovers_shifted_predictions() {
        let gts = vec![car(0.0, 20.0), car(6.0, 35.0)];
        let shifted: Vec<Detection> = gts
            .iter()
            .map(|g| {
                let mut b = *g;
                b.center[2] += 10.0;
                det(b, 0.9)
            })
            .collect();
        let f = FrameResult {
            frame_id: 0,
            preds: shifted,
            gts,
        };
        let fr = [f];
        assert_eq!(ap_r40(&fr, Task::ThreeD, 0.5, ErrorSource::None, &all), Some(0.0));
        assert_eq!(ap_r40(&fr, Task::ThreeD, 0.5, ErrorSource::IgnoreZ, &all), Some(100.0));
        assert_eq!(
            ap_r40(&fr, Task::ThreeD, 0.5, ErrorSource::IgnoreHeight, &all),
            ap_r40(&fr, Task::ThreeD, 0.5, ErrorSource::None, &all)
        );
    }

    #[test]
    fn height_substitution_never_lowers_iou() {
        let gt = Box3D::car([0.0, 20.0, 0.5], [4.0, 2.0, 1.0], 0.0);
        let pred = Box3D::car([0.0, 20.0, 0.9], [4.0, 2.0, 2.0], 0.0);
        let plain = iou(Task::ThreeD, ErrorSource::None, &pred, &gt);
        let swapped = iou_3d(&ErrorSource::IgnoreHeight.apply(&pred, &gt), &gt).unwrap();
        assert!((plain - 0.5).abs() < 1e-12);
        assert!((swapped - 0.6 / 1.4).abs() < 1e-12);
        assert_eq!(iou(Task::ThreeD, ErrorSource::IgnoreHeight, &pred, &gt), plain);
    }

    #[test]
    fn perfect_mask_scores_full() {
        let g = Array2::from_shape_fn((8, 8), |(r, c)| u8::from(r > 3 && c < 5));
        let p = g.mapv(f32::from);
        let m = seg_metrics(&[p], std::slice::from_ref(&g)).unwrap();
        assert_eq!((m.miou, m.map), (100.0, Some(100.0)));
        let inv = g.mapv(|v| 1.0 - f32::from(v));
        let m = seg_metrics(&[inv], &[g]).unwrap();
        assert_eq!(m.fg_iou, Some(0.0));
    }

    #[test]
    fn pr_auc_small_case() {
        // scores 0.9 (pos), 0.8 (neg), 0.7 (pos): points (0.5,1), (0.5,0.5), (1,2/3)
        let a = pr_auc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        let expect = 0.5 * 1.0 + 0.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((a - expect).abs() < 1e-12);
    }

    #[test]
    fn report_renders_and_serializes() {
        let gts = vec![car(0.0, 20.0), car(5.0, 45.0)];
        let f = FrameResult {
            frame_id: 3,
            preds: vec![det(gts[0], 0.9)],
            gts,
        };
        let r = evaluate(&[f], &EvalConfig::default()).unwrap();
        assert_eq!(r.get(Task::Bev, 0.5, Difficulty::Easy), Some(100.0));
        assert_eq!(r.get(Task::Bev, 0.5, Difficulty::Moderate), Some(50.0));
        let table = r.to_table();
        assert!(table.contains("AP_BEV") && table.contains("IGNORE_Z"));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
