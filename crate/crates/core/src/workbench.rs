//! Reproducible experiment commands: dataset generation, training,
//! evaluation, calibration-noise sweeps, fusion ablations and reports.
//!
//! Every command writes the resolved [`ExperimentConfig`] next to its
//! outputs as `config.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::detector::{predict, DecodeConfig, Detector, ModelKind, Prediction};
use crate::error::{Error, Result};
use crate::eval::{evaluate, seg_metrics, Difficulty, EvalConfig, EvalReport, FrameResult, Task};
use crate::geometry::{Box3D, CameraCalib};
use crate::model::{Detection, FusionKind, ModelConfig};
use crate::noise::{noisy_calibration, NoiseSpec, SWEEP_LEVELS};
use crate::plot::{bar_chart, bev_overlay, line_chart, Series};
use crate::scene::{generate_frames, write_dataset, Dataset, Frame, SceneSpec};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub scene: SceneSpec,
    pub n_frames: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            scene: SceneSpec {
                image_size: ModelConfig::default().input_size,
                ..SceneSpec::default()
            },
            n_frames: 200,
            seed: 0,
            val_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    /// Sweep levels in degrees.
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            levels: SWEEP_LEVELS.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub metrics: EvalConfig,
    pub decode: DecodeConfig,
    pub batch_size: usize,
    /// BEV overlays rendered by `report`.
    pub n_overlays: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: EvalConfig::default(),
            decode: DecodeConfig::default(),
            batch_size: 8,
            n_overlays: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSection {
    pub variants: Vec<FusionKind>,
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            variants: FusionKind::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

/// Every setting of an experiment, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub arch: ModelKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub noise: NoiseSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSection::default(),
            arch: ModelKind::Cbr,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            noise: NoiseSection::default(),
            eval: EvalSection::default(),
            ablation: AblationSection::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Applies `--seed` to every random stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.noise.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.metrics.validate()?;
        if self.dataset.scene.image_size != self.model.input_size {
            return Err(Error::InvalidConfig(format!(
                "scene image size {} differs from model input size {}",
                self.dataset.scene.image_size, self.model.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.dataset.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must lie in [0, 1)".into()));
        }
        for &l in &self.noise.levels {
            NoiseSpec::new(l, 0)?;
        }
        Ok(())
    }
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Generates the synthetic dataset into `out`. Refuses a non-empty
/// directory unless `force`, in which case its contents are replaced.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<Dataset> {
    cfg.validate()?;
    if is_nonempty_dir(out) {
        if !force {
            return Err(Error::Dataset {
                path: out.to_path_buf(),
                reason: "directory is not empty (use --force to overwrite)".into(),
            });
        }
        fs::remove_dir_all(out)?;
    }
    fs::create_dir_all(out)?;
    let d = &cfg.dataset;
    let frames = generate_frames(&d.scene, d.seed, d.n_frames)?;
    write_dataset(&frames, out, d.val_fraction)?;
    cfg.save(&out.join("config.json"))?;
    log::info!("wrote {} frames to {}", frames.len(), out.display());
    Dataset::open(out)
}

pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, out: &Path, resume: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let ds = Dataset::open(data)?;
    check_dataset(&ds, &cfg.model)?;
    fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    let outcome = train(&ds, cfg.arch, cfg.model, cfg.train, out, resume)?;
    Ok(outcome.best)
}

fn check_dataset(ds: &Dataset, model: &ModelConfig) -> Result<()> {
    if ds.manifest.image_size != model.input_size {
        return Err(Error::Dataset {
            path: ds.root.clone(),
            reason: format!(
                "images are {} px but the model expects {} px",
                ds.manifest.image_size, model.input_size
            ),
        });
    }
    Ok(())
}

/// Stored form of one frame's detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePredictions {
    pub frame_id: usize,
    pub detections: Vec<Detection>,
}

/// Evaluates a model on `frames`; the calibration handed to the model is
/// perturbed at `noise.n_range` degrees (ignored by CBR). Segmentation
/// metrics are added when the dataset masks and seg outputs both exist.
pub fn evaluate_model(
    model: &mut Detector<f32>,
    frames: &[Frame],
    ds: Option<&Dataset>,
    noise: &NoiseSpec,
    eval: &EvalSection,
) -> Result<(EvalReport, Vec<Prediction>)> {
    let calib_for = |f: &Frame| -> CameraCalib { noisy_calibration(&f.calib, noise, f.id) };
    let preds = predict(model, frames, eval.batch_size, &eval.decode, &calib_for)?;
    let results: Vec<FrameResult> = preds
        .iter()
        .zip(frames)
        .map(|(p, f)| FrameResult {
            frame_id: f.id,
            preds: p.detections.clone(),
            gts: f.boxes.clone(),
        })
        .collect();
    let mut report = evaluate(&results, &eval.metrics)?;
    if let Some(ds) = ds {
        if preds.iter().all(|p| p.fv_prob.is_some() && p.bev_prob.is_some()) && !preds.is_empty() {
            let (mut fv_p, mut fv_g, mut bev_p, mut bev_g) = (vec![], vec![], vec![], vec![]);
            for p in &preds {
                let (bev, fv) = ds.load_masks(p.frame_id)?;
                fv_p.push(p.fv_prob.clone().expect("checked"));
                bev_p.push(p.bev_prob.clone().expect("checked"));
                fv_g.push(fv.cells);
                bev_g.push(bev.cells);
            }
            report.seg_fv = Some(seg_metrics(&fv_p, &fv_g)?);
            report.seg_bev = Some(seg_metrics(&bev_p, &bev_g)?);
        }
    }
    Ok((report, preds))
}

pub fn load_model(path: &Path) -> Result<Detector<f32>> {
    if !path.exists() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "file not found".into(),
        });
    }
    Ok(load_checkpoint(path)?.model)
}

/// Evaluates a checkpoint on the dataset's validation split and writes
/// `eval.json`, `eval.txt`, `distance.csv`, `error_source.csv` and
/// `predictions.json` to `out`.
pub fn cmd_eval(cfg: &ExperimentConfig, ckpt: &Path, data: &Path, out: &Path, noise_deg: f64) -> Result<EvalReport> {
    cfg.validate()?;
    let mut model = load_model(ckpt)?;
    let ds = Dataset::open(data)?;
    check_dataset(&ds, model.config())?;
    let frames = ds.load_split(&eval_ids(&ds))?;
    let noise = NoiseSpec::new(noise_deg, cfg.noise.seed)?;
    let (report, preds) = evaluate_model(&mut model, &frames, Some(&ds), &noise, &cfg.eval)?;
    fs::create_dir_all(out)?;
    let mut resolved = cfg.clone();
    resolved.arch = model.kind();
    resolved.model = *model.config();
    resolved.save(&out.join("config.json"))?;
    write_eval_outputs(out, &report, &preds, data)?;
    Ok(report)
}

fn eval_ids(ds: &Dataset) -> Vec<usize> {
    if ds.manifest.val.is_empty() {
        ds.manifest.train.clone()
    } else {
        ds.manifest.val.clone()
    }
}

/// Where a run's evaluation came from, for `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EvalSource {
    dataset: PathBuf,
}

fn write_eval_outputs(out: &Path, report: &EvalReport, preds: &[Prediction], data: &Path) -> Result<()> {
    fs::write(out.join("eval.json"), report.to_json()?)?;
    fs::write(out.join("eval.txt"), report.to_table())?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    let mut dist = String::from("task,iou,lo,hi,ap\n");
    for e in &report.distance {
        let _ = writeln!(
            dist,
            "{},{},{},{},{}",
            e.task.name(),
            e.iou,
            e.lo,
            e.hi.map_or("inf".to_string(), |h| h.to_string()),
            fmt(e.ap)
        );
    }
    fs::write(out.join("distance.csv"), dist)?;
    let mut es = String::from("mode,ap\n");
    for e in &report.error_source {
        let _ = writeln!(es, "{},{}", e.mode.name(), fmt(e.ap));
    }
    fs::write(out.join("error_source.csv"), es)?;
    let stored: Vec<FramePredictions> = preds
        .iter()
        .map(|p| FramePredictions {
            frame_id: p.frame_id,
            detections: p.detections.clone(),
        })
        .collect();
    fs::write(out.join("predictions.json"), serde_json::to_string(&stored)?)?;
    let source = EvalSource {
        dataset: fs::canonicalize(data).unwrap_or_else(|_| data.to_path_buf()),
    };
    fs::write(out.join("eval_source.json"), serde_json::to_string_pretty(&source)?)?;
    Ok(())
}

/// One row of the noise sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: f64,
    pub model: ModelKind,
    pub task: Task,
    pub iou: f64,
    pub ap: Option<f64>,
}

/// Evaluates both models at every noise level (moderate difficulty).
pub fn noise_sweep(
    cbr: &mut Detector<f32>,
    baseline: &mut Detector<f32>,
    frames: &[Frame],
    levels: &[f64],
    seed: u64,
    eval: &EvalSection,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &level in levels {
        let noise = NoiseSpec::new(level, seed)?;
        for model in [&mut *baseline, &mut *cbr] {
            let (report, _) = evaluate_model(model, frames, None, &noise, eval)?;
            for task in Task::ALL {
                for &iou in &eval.metrics.iou_thresholds {
                    rows.push(SweepRow {
                        level,
                        model: model.kind(),
                        task,
                        iou,
                        ap: report.get(task, iou, Difficulty::Moderate),
                    });
                }
            }
            log::info!("noise {level} deg, {}: done", model.kind());
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("level,model,task,iou,ap\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.level,
            r.model,
            r.task.name(),
            r.iou,
            r.ap.map_or(String::new(), |v| v.to_string())
        );
    }
    s
}

/// AP against noise level: baseline solid, CBR dotted.
pub fn sweep_plot(rows: &[SweepRow], iou: f64) -> String {
    let mut series = Vec::new();
    for model in [ModelKind::Baseline, ModelKind::Cbr] {
        for task in Task::ALL {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.model == model && r.task == task && r.iou == iou)
                .filter_map(|r| r.ap.map(|a| (r.level, a)))
                .collect();
            if !points.is_empty() {
                series.push(Series {
                    name: format!("{model} {}", task.name()),
                    points,
                    dashed: model == ModelKind::Cbr,
                });
            }
        }
    }
    line_chart(
        &format!("AP (IoU {iou}, moderate) under calibration noise"),
        "noise range (deg)",
        "AP (%)",
        &series,
        true,
    )
}

/// Writes `noise_sweep.csv` and `noise_sweep.svg` to `out`.
pub fn cmd_noise_sweep(
    cfg: &ExperimentConfig,
    cbr_ckpt: &Path,
    baseline_ckpt: &Path,
    data: &Path,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut cbr = load_model(cbr_ckpt)?;
    let mut baseline = load_model(baseline_ckpt)?;
    if cbr.kind() != ModelKind::Cbr || baseline.kind() != ModelKind::Baseline {
        return Err(Error::InvalidConfig("expected a CBR checkpoint and a baseline checkpoint".into()));
    }
    let ds = Dataset::open(data)?;
    check_dataset(&ds, cbr.config())?;
    check_dataset(&ds, baseline.config())?;
    let frames = ds.load_split(&eval_ids(&ds))?;
    let rows = noise_sweep(&mut cbr, &mut baseline, &frames, &cfg.noise.levels, cfg.noise.seed, &cfg.eval)?;
    fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    fs::write(out.join("noise_sweep.csv"), sweep_csv(&rows))?;
    let iou = cfg.eval.metrics.iou_thresholds[0];
    fs::write(out.join("noise_sweep.svg"), sweep_plot(&rows, iou))?;
    Ok(rows)
}

/// AP of one trained ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub fusion: FusionKind,
    pub seed: u64,
    pub ap_3d: Option<f64>,
    pub ap_bev: Option<f64>,
}

/// Mean and sample standard deviation over seeds.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Trains each fusion variant for each seed under `out/<variant>_s<seed>`
/// (finished runs are reused) and evaluates AP at the first IoU threshold,
/// moderate difficulty, on the validation split.
pub fn run_ablation(cfg: &ExperimentConfig, ds: &Dataset, out: &Path) -> Result<Vec<AblationRun>> {
    check_dataset(ds, &cfg.model)?;
    let frames = ds.load_split(&eval_ids(ds))?;
    let iou = cfg.eval.metrics.iou_thresholds[0];
    let mut runs = Vec::new();
    for &seed in &cfg.ablation.seeds {
        for &fusion in &cfg.ablation.variants {
            let dir = out.join(format!("{}_s{seed}", fusion.name().to_lowercase()));
            let train_cfg = TrainConfig { seed, ..cfg.train };
            let outcome = train(ds, ModelKind::Cbr, cfg.model.with_fusion(fusion), train_cfg, &dir, true)?;
            let mut model = load_model(&outcome.last)?;
            let (report, _) = evaluate_model(&mut model, &frames, None, &NoiseSpec::new(0.0, 0)?, &cfg.eval)?;
            let run = AblationRun {
                fusion,
                seed,
                ap_3d: report.get(Task::ThreeD, iou, Difficulty::Moderate),
                ap_bev: report.get(Task::Bev, iou, Difficulty::Moderate),
            };
            log::info!("ablation {} seed {seed}: 3D {:?} BEV {:?}", fusion.name(), run.ap_3d, run.ap_bev);
            runs.push(run);
        }
    }
    Ok(runs)
}

/// Per-variant `(mean, std)` of AP_3D and AP_BEV, in variant order.
pub fn ablation_summary(runs: &[AblationRun]) -> Vec<(FusionKind, (f64, f64), (f64, f64))> {
    let mut order: Vec<FusionKind> = Vec::new();
    for r in runs {
        if !order.contains(&r.fusion) {
            order.push(r.fusion);
        }
    }
    order
        .into_iter()
        .map(|f| {
            let pick = |g: fn(&AblationRun) -> Option<f64>| {
                let v: Vec<f64> = runs.iter().filter(|r| r.fusion == f).filter_map(g).collect();
                mean_std(&v)
            };
            (f, pick(|r| r.ap_3d), pick(|r| r.ap_bev))
        })
        .collect()
}

pub fn ablation_table(runs: &[AblationRun], iou: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>16} {:>16}", "fusion", format!("AP_3D@{iou}"), format!("AP_BEV@{iou}"));
    for (f, a3, ab) in ablation_summary(runs) {
        let cell = |(m, sd): (f64, f64)| format!("{m:.2} ± {sd:.2}");
        let _ = writeln!(s, "{:<8} {:>16} {:>16}", f.name(), cell(a3), cell(ab));
    }
    s
}

/// Writes `ablation.csv`, `ablation.json` and `ablation.txt` to `out`.
pub fn cmd_ablation(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<Vec<AblationRun>> {
    cfg.validate()?;
    let ds = Dataset::open(data)?;
    fs::create_dir_all(out)?;
    cfg.save(&out.join("config.json"))?;
    let runs = run_ablation(cfg, &ds, out)?;
    let mut csv = String::from("fusion,seed,ap_3d,ap_bev\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &runs {
        let _ = writeln!(csv, "{},{},{},{}", r.fusion.name(), r.seed, fmt(r.ap_3d), fmt(r.ap_bev));
    }
    fs::write(out.join("ablation.csv"), csv)?;
    fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&runs)?)?;
    fs::write(out.join("ablation.txt"), ablation_table(&runs, cfg.eval.metrics.iou_thresholds[0]))?;
    Ok(runs)
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| head.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect())
}

/// Renders whatever a run directory holds into `run/report/`: AP tables,
/// the distance curve, error-source bars, BEV overlays (ground truth red,
/// predictions green), the noise sweep, the ablation table and the loss
/// curve. Missing pieces are skipped with a warning; a directory with none
/// of them is an error. Returns the list of written files.
pub fn cmd_report(run: &Path) -> Result<Vec<PathBuf>> {
    let dir = run.join("report");
    let mut written = Vec::new();
    let mut summary = String::new();
    let put = |name: &str, bytes: &[u8], written: &mut Vec<PathBuf>| -> Result<()> {
        fs::create_dir_all(&dir)?;
        let p = dir.join(name);
        fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };

    let eval_path = run.join("eval.json");
    if eval_path.exists() {
        let report: EvalReport = serde_json::from_str(&fs::read_to_string(&eval_path)?)?;
        let _ = writeln!(summary, "## Detection\n\n```\n{}```\n", report.to_table());
        let rows = read_csv(&run.join("distance.csv"))?;
        let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
        for r in &rows {
            let (Ok(lo), Ok(ap)) = (r["lo"].parse::<f64>(), r["ap"].parse::<f64>()) else {
                continue;
            };
            let hi = r["hi"].parse::<f64>().unwrap_or(lo + 30.0);
            series
                .entry((r["task"].clone(), r["iou"].clone()))
                .or_default()
                .push(((lo + hi) / 2.0, ap));
        }
        let series: Vec<Series> = series
            .into_iter()
            .map(|((task, iou), points)| Series {
                name: format!("{task}@{iou}"),
                points,
                dashed: false,
            })
            .collect();
        put(
            "distance.svg",
            line_chart("AP by distance", "distance bin center (m)", "AP (%)", &series, false).as_bytes(),
            &mut written,
        )?;
        let rows = read_csv(&run.join("error_source.csv"))?;
        let bars: Vec<(String, f64)> = rows
            .iter()
            .map(|r| (r["mode"].clone(), r["ap"].parse().unwrap_or(0.0)))
            .collect();
        put("error_source.svg", bar_chart("AP_3D with ablated predictions", "AP (%)", &bars).as_bytes(), &mut written)?;
        match overlays(run) {
            Ok(images) => {
                for (name, img) in images {
                    fs::create_dir_all(&dir)?;
                    let p = dir.join(&name);
                    img.save(&p)?;
                    written.push(p);
                }
            }
            Err(e) => log::warn!("skipping BEV overlays: {e}"),
        }
    } else {
        log::warn!("{} missing: no detection section", eval_path.display());
    }

    let sweep_path = run.join("noise_sweep.csv");
    if sweep_path.exists() {
        let rows: Vec<SweepRow> = read_csv(&sweep_path)?
            .iter()
            .filter_map(|r| {
                Some(SweepRow {
                    level: r["level"].parse().ok()?,
                    model: r["model"].parse().ok()?,
                    task: if r["task"] == "AP_BEV" { Task::Bev } else { Task::ThreeD },
                    iou: r["iou"].parse().ok()?,
                    ap: r["ap"].parse().ok(),
                })
            })
            .collect();
        let iou = rows.first().map_or(0.5, |r| r.iou);
        put("noise_sweep.svg", sweep_plot(&rows, iou).as_bytes(), &mut written)?;
        let _ = writeln!(summary, "## Calibration noise\n\n```\n{}```\n", fs::read_to_string(&sweep_path)?);
    }

    let ablation_path = run.join("ablation.json");
    if ablation_path.exists() {
        let runs: Vec<AblationRun> = serde_json::from_str(&fs::read_to_string(&ablation_path)?)?;
        let _ = writeln!(summary, "## Fusion ablation\n\n```\n{}```\n", ablation_table(&runs, 0.5));
    }

    let loss_path = run.join("loss_curve.csv");
    if loss_path.exists() {
        let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in read_csv(&loss_path)? {
            if r["term"].ends_with("_total") {
                if let (Ok(e), Ok(v)) = (r["epoch"].parse(), r["value"].parse()) {
                    series.entry(r["term"].clone()).or_default().push((e, v));
                }
            }
        }
        let series: Vec<Series> = series
            .into_iter()
            .map(|(name, points)| Series {
                dashed: name.starts_with("val"),
                name,
                points,
            })
            .collect();
        put("loss_curve.svg", line_chart("Training loss", "epoch", "loss", &series, false).as_bytes(), &mut written)?;
    }

    if written.is_empty() && summary.is_empty() {
        return Err(Error::InvalidConfig(format!("{} holds no run artifacts", run.display())));
    }
    let mut md = String::from("# Run report\n\n");
    md.push_str(&summary);
    for p in &written {
        if let Some(name) = p.file_name() {
            let _ = writeln!(md, "- {}", name.to_string_lossy());
        }
    }
    put("report.md", md.as_bytes(), &mut written)?;
    Ok(written)
}

fn overlays(run: &Path) -> Result<Vec<(String, image::RgbImage)>> {
    let source: EvalSource = serde_json::from_str(&fs::read_to_string(run.join("eval_source.json"))?)?;
    let preds: Vec<FramePredictions> = serde_json::from_str(&fs::read_to_string(run.join("predictions.json"))?)?;
    let n = ExperimentConfig::load(&run.join("config.json")).map_or(4, |c| c.eval.n_overlays);
    let ds = Dataset::open(&source.dataset)?;
    let grid = crate::geometry::GridSpec::bev(ds.manifest.mask_cells.max(1));
    let mut out = Vec::new();
    for p in preds.iter().take(n) {
        let frame = ds.load_frame(p.frame_id)?;
        let shown: Vec<Box3D> = p.detections.iter().filter(|d| d.score >= 0.3).map(|d| d.bbox).collect();
        let img = bev_overlay(&grid, &frame.boxes, &shown, None, 4.0);
        out.push((format!("bev_{:06}.png", p.frame_id), img));
    }
    Ok(out)
}
