use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::state::{step_rng, Batch, StepLog, TrainState, LOG_HEADER};
use crate::data::Dataset;
use crate::divergence::jsd;
use crate::error::{Error, Result};
use crate::freqrep::categorical_global;
use crate::image::ImagePlane;
use crate::lne;
use crate::metrics::{ink_mask, pair_metrics, pixel_f1, MetricReport, INK_THRESHOLD};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "A2B")]
    AtoB,
    #[serde(rename = "B2A")]
    BtoA,
}

impl Direction {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A2B" | "AB" => Ok(Direction::AtoB),
            "B2A" | "BA" => Ok(Direction::BtoA),
            _ => Err(Error::Config(format!("direction must be A2B or B2A, got {s:?}"))),
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::AtoB => Direction::BtoA,
            Direction::BtoA => Direction::AtoB,
        }
    }
}

/// Applies one generator, preceded by LNE when the config trains on
/// encoded images.
pub fn translate<T: Scalar>(
    state: &TrainState<T>,
    image: &ImagePlane<T>,
    direction: Direction,
    cfg: &ExperimentConfig,
) -> Result<ImagePlane<T>> {
    let input = if cfg.wt_image {
        lne::encode(image, &cfg.lne_config())?
    } else {
        image.clone()
    };
    let g = match direction {
        Direction::AtoB => state.g_ab.detached(),
        Direction::BtoA => state.g_ba.detached(),
    };
    ImagePlane::from_tensor(&g.forward(&input.to_tensor())?)
}

/// Pooled per-channel intensity distribution of a set of images.
pub fn pooled_categorical<T: Scalar>(images: &[ImagePlane<T>], bins: usize) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for img in images {
        let r = categorical_global(&img.cast::<f64>(), bins, false, 1.0)?;
        if acc.is_empty() {
            acc = vec![0.0; r.values.len()];
        }
        for (a, v) in acc.iter_mut().zip(&r.values) {
            *a += v;
        }
    }
    let n = images.len().max(1) as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Snapshot of test-split quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    /// `x` vs `translate(translate(x))`, both directions pooled.
    pub cycle: MetricReport,
    /// Pooled-histogram JSD (bits) of translated A images to real B images.
    pub target_jsd: f64,
    /// F1 of ink in translated struck images against the clean truth.
    pub f1_clean: Option<f64>,
}

pub fn evaluate_state<T: Scalar>(
    state: &TrainState<T>,
    dataset: &Dataset<T>,
    cfg: &ExperimentConfig,
) -> Result<EvalRecord> {
    let mut pairs = Vec::new();
    let mut translated_a = Vec::new();
    for (images, dir) in [(&dataset.test_a, Direction::AtoB), (&dataset.test_b, Direction::BtoA)] {
        for img in images.iter() {
            let there = translate(state, img, dir, cfg)?;
            let back = translate(state, &there, dir.reverse(), cfg)?;
            pairs.push(pair_metrics(img, &back, false)?);
            if dir == Direction::AtoB {
                translated_a.push(there);
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Param("evaluation needs a nonempty test split".into()));
    }
    let target_jsd = if translated_a.is_empty() || dataset.test_b.is_empty() {
        f64::NAN
    } else {
        let p = pooled_categorical(&translated_a, cfg.bins)?;
        let q = pooled_categorical(&dataset.test_b, cfg.bins)?;
        jsd(&p, &q, cfg.bins)?
    };
    let f1_clean = if dataset.has_masks && !dataset.test_b.is_empty() {
        let mut total = 0.0;
        for (i, img) in dataset.test_b.iter().enumerate() {
            let out = translate(state, img, Direction::BtoA, cfg)?;
            let truth = dataset.clean_truth(i).expect("masks present");
            total += pixel_f1(&ink_mask(&out, INK_THRESHOLD), &ink_mask(&truth, INK_THRESHOLD))?;
        }
        Some(total / dataset.test_b.len() as f64)
    } else {
        None
    };
    Ok(EvalRecord {
        step: state.step,
        cycle: MetricReport::aggregate(&pairs)?,
        target_jsd,
        f1_clean,
    })
}

/// Where a run writes its artifacts, and how chatty it is.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Resume from this checkpoint instead of a fresh state.
    pub resume: Option<PathBuf>,
    /// Print a progress line every this many steps (0 = silent).
    pub progress_every: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T: Scalar> {
    pub state: TrainState<T>,
    pub logs: Vec<StepLog>,
    pub evals: Vec<EvalRecord>,
}

impl<T: Scalar> RunOutcome<T> {
    pub fn final_eval(&self) -> &EvalRecord {
        self.evals.last().expect("a run always evaluates at least once")
    }
}

/// CSV sink for step logs.
pub struct LogWriter {
    inner: csv::Writer<fs::File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        inner.write_record(LOG_HEADER).map_err(|e| csv_err(path, e))?;
        Ok(LogWriter { inner })
    }

    pub fn write(&mut self, row: &StepLog) -> Result<()> {
        self.inner
            .write_record(row.csv_fields())
            .and_then(|_| self.inner.flush().map_err(csv::Error::from))
            .map_err(|e| Error::Format(format!("log write failed: {e}")))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn encoded<T: Scalar>(images: &[ImagePlane<T>], cfg: &ExperimentConfig) -> Result<Vec<ImagePlane<T>>> {
    if !cfg.wt_image {
        return Ok(images.to_vec());
    }
    images.iter().map(|i| lne::encode(i, &cfg.lne_config())).collect()
}

/// Batch for step `step` (1-based), drawn with replacement from the
/// training splits.
pub fn sample_batch<T: Scalar>(
    dataset: &Dataset<T>,
    enc_a: &[ImagePlane<T>],
    enc_b: &[ImagePlane<T>],
    seed: u64,
    step: u64,
) -> Batch<T> {
    let mut rng = step_rng(seed, step);
    let i = rng.random_range(0..dataset.train_a.len());
    let j = rng.random_range(0..dataset.train_b.len());
    Batch::from_parts(&dataset.train_a[i], &dataset.train_b[j], &enc_a[i], &enc_b[j])
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dump_batch<T: Scalar>(dir: &Path, batch: &Batch<T>) {
    for (name, t) in [("nonfinite_x.png", &batch.x_in), ("nonfinite_y.png", &batch.y_in)] {
        if let Ok(img) = ImagePlane::from_tensor(t) {
            let _ = crate::data::save_image(&img, &dir.join(name));
        }
    }
}

/// Trains for `cfg.total_steps()` steps, evaluating at the start, every
/// `eval_every` steps and at the end.
pub fn train_run<T: Scalar>(cfg: &ExperimentConfig, dataset: &Dataset<T>, opts: &RunOptions) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    if dataset.train_a.is_empty() || dataset.train_b.is_empty() {
        return Err(Error::Param("training splits are empty".into()));
    }
    let mut state = match &opts.resume {
        Some(p) => TrainState::load(p, cfg)?,
        None => TrainState::new(cfg)?,
    };
    let total = cfg.total_steps();
    let (enc_a, enc_b) = (encoded(&dataset.train_a, cfg)?, encoded(&dataset.train_b, cfg)?);
    let mut writer = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(LogWriter::create(&dir.join("log.csv"))?)
        }
        None => None,
    };
    let mut logs = Vec::new();
    let mut evals = vec![evaluate_state(&state, dataset, cfg)?];
    let started = Instant::now();
    while state.step < total {
        let batch = sample_batch(dataset, &enc_a, &enc_b, cfg.seed, state.step + 1);
        let row = match state.train_step(&batch, cfg) {
            Ok(row) => row,
            Err(e) => {
                if let Some(dir) = &opts.out_dir {
                    dump_batch(dir, &batch);
                }
                return Err(e);
            }
        };
        if let Some(w) = writer.as_mut() {
            w.write(&row)?;
        }
        logs.push(row);
        let s = state.step;
        if opts.progress_every > 0 && s % opts.progress_every == 0 {
            eprintln!(
                "step {s}/{total} loss_G {:.4} loss_D {:.4} ({:.1}s)",
                row.loss_g,
                row.loss_d,
                started.elapsed().as_secs_f64()
            );
        }
        if cfg.eval_every > 0 && s % cfg.eval_every as u64 == 0 && s != total {
            evals.push(evaluate_state(&state, dataset, cfg)?);
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && s % cfg.checkpoint_every as u64 == 0 && s != total {
                state.save(&dir.join(format!("ckpt_{s:06}.fdcg")))?;
            }
        }
    }
    if evals.last().map(|e| e.step) != Some(state.step) {
        evals.push(evaluate_state(&state, dataset, cfg)?);
    }
    if let Some(dir) = &opts.out_dir {
        state.save(&dir.join("final.fdcg"))?;
        write_json(&dir.join("metrics.json"), &evals)?;
    }
    Ok(RunOutcome { state, logs, evals })
}

/// One line of the grid summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub name: String,
    pub steps: u64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub target_jsd: f64,
    pub f1_clean: Option<f64>,
    pub wall_s: f64,
}

/// Runs each named row with shared overrides; writes `grid.csv` and one
/// sub-directory per row when `out_dir` is given.
pub fn run_grid<T: Scalar>(
    names: &[&str],
    base: &ExperimentConfig,
    dataset: &Dataset<T>,
    out_dir: Option<&Path>,
) -> Result<Vec<GridRow>> {
    let mut rows = Vec::new();
    for &name in names {
        let preset = ExperimentConfig::preset(name)?;
        let cfg = ExperimentConfig {
            seed: base.seed,
            epochs: base.epochs,
            steps_per_epoch: base.steps_per_epoch,
            image_size: base.image_size,
            preset: base.preset,
            lr: base.lr,
            eval_every: 0,
            checkpoint_every: 0,
            ..preset
        };
        let opts = RunOptions {
            out_dir: out_dir.map(|d| d.join(sanitize(name))),
            ..RunOptions::default()
        };
        let start = Instant::now();
        let out = train_run(&cfg, dataset, &opts)?;
        let last = out.logs.last();
        let ev = out.final_eval();
        rows.push(GridRow {
            name: name.to_string(),
            steps: out.state.step,
            loss_g: last.map_or(f64::NAN, |l| l.loss_g),
            loss_d: last.map_or(f64::NAN, |l| l.loss_d),
            psnr_db: ev.cycle.psnr_db,
            ssim: ev.cycle.ssim,
            target_jsd: ev.target_jsd,
            f1_clean: ev.f1_clean,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("grid.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for r in &rows {
            w.serialize(r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}

/// Directory-safe form of an experiment name (`1,4` becomes `1_4`).
pub fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}
