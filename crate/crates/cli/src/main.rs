//! `fdcg` command-line driver.
//!
//! Exit codes: 0 success, 1 any other failure, 2 unknown config key or bad
//! usage, 3 missing input file or directory.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fdcg::data::{self, Counts, Family, SyntheticDomainPair};
use fdcg::divergence::{self, DistanceKind, Metric};
use fdcg::freqrep::{self, FdKind, FdSpec};
use fdcg::lne::{self, LneConfig, SigmaMode};
use fdcg::models::PresetName;
use fdcg::tensor::checkpoint::{self, NamedArray};
use fdcg::training::{self, Direction, ExperimentConfig, RunOptions, TrainState, PRESET_NAMES};
use fdcg::{Error, Image32, Image64, Tensor64};

const SNAPSHOT: &str = "config.toml";

#[derive(Parser)]
#[command(name = "fdcg", version, about = "Unpaired image translation with frequency-distribution losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-domain dataset.
    GenerateData(GenerateArgs),
    /// Apply local neighborhood encoding to one image.
    Encode(EncodeArgs),
    /// Compute a frequency-distribution representation of one image.
    Freq(FreqArgs),
    /// Distance between two images or two probability vectors.
    Dist(DistArgs),
    /// Train one experiment, or a grid of named experiments.
    Train(TrainArgs),
    /// Run one generator of a checkpoint over images.
    Translate(TranslateArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Summarize training logs.
    Report(ReportArgs),
}

/// Options shared by every command that resolves an experiment config.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; a built-in row name (`Or`, `1,4`, `jsd`, ...) also works.
    #[arg(long)]
    config: Option<String>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["paper", "toy"])]
    preset: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "stripes_checkers")]
    family: String,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// trainA,trainB,testA,testB
    #[arg(long, default_value = "64,64,16,16")]
    counts: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    /// Use the local standard deviation instead of a fixed bandwidth.
    #[arg(long)]
    local_sigma: bool,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FreqArgs {
    #[arg(long)]
    input: PathBuf,
    /// 1..5 or a kind name.
    #[arg(long)]
    fd: String,
    #[arg(long, default_value_t = freqrep::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = freqrep::DEFAULT_PATCH)]
    patch: usize,
    /// Soft binning temperature; hard counts when absent.
    #[arg(long)]
    tau: Option<f64>,
    /// Container file for the representation; a `.json` summary is written
    /// beside it. Without it the summary and values go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistArgs {
    #[arg(long, default_value = "jsd")]
    metric: String,
    /// First image, or a comma-separated probability vector.
    #[arg(long)]
    p: String,
    /// Second image, or a comma-separated probability vector.
    #[arg(long)]
    q: String,
    /// Representation for image inputs; pixel space when absent.
    #[arg(long)]
    fd: Option<String>,
    #[arg(long, default_value_t = freqrep::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = divergence::DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Dataset root with trainA/, trainB/, testA/, testB/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run these rows (separated by `;`, or `all`) instead of one experiment.
    #[arg(long)]
    grid: Option<String>,
    /// Progress line every N steps.
    #[arg(short, long, default_value_t = 0)]
    verbose: u64,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "A2B")]
    dir: String,
    /// An image file or a directory of PNGs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for metrics.json; stdout only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// log.csv files.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn fail(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn missing(path: &Path) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: not found", path.display()),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = threads() {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Parallel width from FDCG_THREADS. Tensors are single-threaded, so any
/// positive value runs on one thread.
fn threads() -> CliResult<usize> {
    match std::env::var("FDCG_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(1),
            _ => Err(usage(format!("FDCG_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenerateData(a) => generate(a),
        Command::Encode(a) => encode(a),
        Command::Freq(a) => freq(a),
        Command::Dist(a) => dist(a),
        Command::Train(a) => train(a),
        Command::Translate(a) => translate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn resolve_config(args: &ConfigArgs, fallback: Option<&Path>) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&args.config, fallback) {
        (Some(c), _) if PRESET_NAMES.contains(&c.as_str()) && !Path::new(c).exists() => ExperimentConfig::preset(c)?,
        (Some(c), _) => read_config(Path::new(c))?,
        (None, Some(p)) if p.exists() => read_config(p)?,
        (None, _) => ExperimentConfig::default(),
    };
    for kv in &args.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("override {kv:?} is not key=value")))?;
        let key = key.trim();
        if !ExperimentConfig::has_field(key) {
            return Err(usage(format!("unknown override key {key:?}")));
        }
        cfg.apply_override(key, value.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.preset {
        cfg.preset = if p == "paper" { PresetName::Paper } else { PresetName::Toy };
        if cfg.preset == PresetName::Paper {
            cfg.image_size = fdcg::models::ScalePreset::paper().image_size;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_config(path: &Path) -> CliResult<ExperimentConfig> {
    if !path.exists() {
        return Err(missing(path));
    }
    let text = fs::read_to_string(path).map_err(|e| Failure::from(io_err(path, e)))?;
    ExperimentConfig::from_toml(&text).map_err(|e| {
        let code = if e.to_string().contains("unknown field") { 2 } else { 1 };
        Failure {
            code,
            message: format!("{}: {e}", path.display()),
        }
    })
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_snapshot(dir: &Path, cfg: &ExperimentConfig) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::from(io_err(dir, e)))?;
    let path = dir.join(SNAPSHOT);
    fs::write(&path, cfg.to_toml()).map_err(|e| Failure::from(io_err(&path, e)))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::from(io_err(parent, e)))?;
    }
    fs::write(path, text).map_err(|e| Failure::from(io_err(path, e)))
}

fn json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn require(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(missing(path))
    }
}

fn generate(a: GenerateArgs) -> CliResult {
    let family = Family::parse(&a.family).map_err(|e| usage(e.to_string()))?;
    let c: Vec<usize> = a
        .counts
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("counts must be four integers, got {:?}", a.counts)))?;
    let [ta, tb, sa, sb] = c[..] else {
        return Err(usage(format!("counts must be four integers, got {:?}", a.counts)));
    };
    let pair = SyntheticDomainPair::new(family, a.size, Counts::new(ta, tb, sa, sb), a.seed);
    data::generate(&pair, &a.out)?;
    println!("wrote {} images to {}", ta + tb + sa + sb, a.out.display());
    Ok(())
}

fn encode(a: EncodeArgs) -> CliResult {
    require(&a.input)?;
    let img: Image64 = data::load_image(&a.input)?;
    let cfg = LneConfig {
        kernel: a.kernel,
        sigma: a.sigma,
        sigma_mode: if a.local_sigma {
            SigmaMode::PerPixelLocalStd
        } else {
            SigmaMode::Fixed
        },
    };
    let out = lne::encode(&img, &cfg)?;
    data::save_image(&out, &a.out)?;
    let snapshot = a.out.with_extension("toml");
    write_text(&snapshot, &toml::to_string(&cfg).expect("serializable"))?;
    Ok(())
}

#[derive(Serialize)]
struct FreqOutput {
    kind: &'static str,
    bins: usize,
    window: usize,
    tau: Option<f64>,
    shape: Vec<usize>,
    padded_to: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

fn fd_spec(fd: &str, bins: usize, kernel: usize, patch: usize, tau: Option<f64>) -> CliResult<FdSpec> {
    let kind = FdKind::parse(fd).map_err(|e| usage(e.to_string()))?;
    let spec = FdSpec {
        kind,
        bins,
        kernel,
        patch,
        tau: tau.unwrap_or(freqrep::DEFAULT_TAU),
    };
    spec.validate()?;
    Ok(spec)
}

/// With `--out`, writes the representation as a named-tensor container
/// plus a `.json` summary; otherwise prints the summary with values.
fn freq(a: FreqArgs) -> CliResult {
    require(&a.input)?;
    let img: Image64 = data::load_image(&a.input)?;
    let spec = fd_spec(&a.fd, a.bins, a.kernel, a.patch, a.tau)?;
    let r = freqrep::represent_image(&img, &spec, a.tau.is_some())?;
    let mut out = FreqOutput {
        kind: r.kind.name(),
        bins: r.bins,
        window: r.window,
        tau: r.tau,
        shape: r.shape.clone(),
        padded_to: r.padded_to,
        values: None,
    };
    match &a.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Failure::from(io_err(parent, e)))?;
            }
            let values = r.values.iter().map(|&v| v as f32).collect();
            checkpoint::save(path, &[NamedArray::new(r.kind.name(), &r.shape, values)])?;
            let summary = json(&out);
            write_text(&path.with_extension("json"), &summary)?;
            println!("{summary}");
        }
        None => {
            out.values = Some(r.values);
            println!("{}", json(&out));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DistOutput {
    metric: &'static str,
    value: f64,
    bits: bool,
}

fn parse_vector(s: &str) -> Option<Vec<f64>> {
    if Path::new(s).exists() || !s.contains(',') {
        return None;
    }
    s.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn dist(a: DistArgs) -> CliResult {
    let metric = Metric::parse(&a.metric).map_err(|e| usage(e.to_string()))?;
    let kind = DistanceKind {
        metric,
        epsilon: a.epsilon,
    };
    kind.validate()?;
    let value = match (parse_vector(&a.p), parse_vector(&a.q)) {
        (Some(p), Some(q)) => {
            let n = p.len();
            if q.len() != n {
                return Err(usage(format!("vectors differ in length ({n} vs {})", q.len())));
            }
            let (pt, qt) = (Tensor64::new(&[n], p.clone())?, Tensor64::new(&[n], q.clone())?);
            match metric {
                Metric::Kld => divergence::kl_tensor(&pt, &qt, a.epsilon)?.item(),
                Metric::Jsd => divergence::jsd_tensor(&pt, &qt, a.epsilon)?.item(),
                Metric::Log => divergence::log_loss(&p, &q, a.epsilon)?,
                Metric::L1 => p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>() / n.max(1) as f64,
            }
        }
        _ => {
            let (pp, qp) = (PathBuf::from(&a.p), PathBuf::from(&a.q));
            require(&pp)?;
            require(&qp)?;
            let p: Image64 = data::load_image(&pp)?;
            let q: Image64 = data::load_image(&qp)?;
            match &a.fd {
                Some(fd) => {
                    let spec = fd_spec(fd, a.bins, a.kernel, freqrep::DEFAULT_PATCH, None)?;
                    let rp = freqrep::represent_image(&p, &spec, false)?;
                    let rq = freqrep::represent_image(&q, &spec, false)?;
                    divergence::freq_repr_distance(&rp, &rq, &kind)?
                }
                None => divergence::pixel_distance(&p.to_tensor(), &q.to_tensor(), &kind)?.item(),
            }
        }
    };
    println!(
        "{}",
        serde_json::to_string(&DistOutput {
            metric: metric.name(),
            value,
            bits: metric.in_bits(),
        })
        .expect("serializable")
    );
    Ok(())
}

fn load_data(dir: &Path, cfg: &ExperimentConfig) -> CliResult<data::Dataset<f32>> {
    Ok(data::load_dataset::<f32>(dir, cfg.image_size)?)
}

fn train(a: TrainArgs) -> CliResult {
    let cfg = resolve_config(&a.cfg, None)?;
    let dataset = load_data(&a.data, &cfg)?;
    write_snapshot(&a.out, &cfg)?;
    if let Some(grid) = &a.grid {
        let names: Vec<&str> = if grid == "all" {
            PRESET_NAMES.to_vec()
        } else {
            grid.split(';').map(str::trim).filter(|s| !s.is_empty()).collect()
        };
        let rows = training::run_grid(&names, &cfg, &dataset, Some(&a.out))?;
        for r in rows {
            println!(
                "{:<10} psnr {:>7.2} ssim {:.3} jsd {:.4} ({:.1}s)",
                r.name, r.psnr_db, r.ssim, r.target_jsd, r.wall_s
            );
        }
        return Ok(());
    }
    if let Some(r) = &a.resume {
        require(r)?;
    }
    let opts = RunOptions {
        out_dir: Some(a.out.clone()),
        resume: a.resume.clone(),
        progress_every: a.verbose,
    };
    let out = training::train_run(&cfg, &dataset, &opts)?;
    println!("{}", json(out.final_eval()));
    Ok(())
}

fn load_state(checkpoint: &Path, args: &ConfigArgs) -> CliResult<(TrainState<f32>, ExperimentConfig)> {
    require(checkpoint)?;
    let sibling = checkpoint.parent().map(|d| d.join(SNAPSHOT));
    let cfg = resolve_config(args, sibling.as_deref())?;
    let state = TrainState::load(checkpoint, &cfg)?;
    Ok((state, cfg))
}

fn png_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    require(input)?;
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Failure::from(io_err(input, e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn translate(a: TranslateArgs) -> CliResult {
    let direction = Direction::parse(&a.dir).map_err(|e| usage(e.to_string()))?;
    let (state, cfg) = load_state(&a.checkpoint, &a.cfg)?;
    let inputs = png_inputs(&a.input)?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::from(io_err(&a.out, e)))?;
    for path in &inputs {
        let img: Image32 = data::load_image(path)?;
        let img = if img.height() != cfg.image_size || img.width() != cfg.image_size {
            data::resize_bilinear(&img, cfg.image_size, cfg.image_size)
        } else {
            img
        };
        let out = training::translate(&state, &img, direction, &cfg)?;
        let name = path.file_name().expect("file path");
        data::save_image(&out, &a.out.join(name))?;
    }
    write_snapshot(&a.out, &cfg)?;
    println!("translated {} images to {}", inputs.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let (state, cfg) = load_state(&a.checkpoint, &a.cfg)?;
    let dataset = load_data(&a.data, &cfg)?;
    let record = training::evaluate_state(&state, &dataset, &cfg)?;
    let text = json(&record);
    if let Some(dir) = &a.out {
        write_snapshot(dir, &cfg)?;
        write_text(&dir.join("metrics.json"), &text)?;
    }
    println!("{text}");
    Ok(())
}

/// One row of the `report` table.
#[derive(Debug, Default, Serialize)]
struct ReportRow {
    name: String,
    runs: usize,
    steps: u64,
    final_loss_g: f64,
    final_loss_d: f64,
    mean_step_ms: f64,
    wall_hours: f64,
}

/// Experiment name of a log: the `name` in a sibling config snapshot,
/// else the parent directory name.
fn experiment_name(log: &Path) -> String {
    let dir = log.parent().unwrap_or(Path::new("."));
    if let Ok(text) = fs::read_to_string(dir.join(SNAPSHOT)) {
        if let Ok(cfg) = ExperimentConfig::from_toml(&text) {
            return cfg.name;
        }
    }
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| log.display().to_string())
}

fn report(a: ReportArgs) -> CliResult {
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    for log in &a.logs {
        require(log)?;
        let mut reader = csv::Reader::from_path(log).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", log.display()),
        })?;
        let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| fail(format!("{}: missing column {name}", log.display())))
        };
        let (step_c, g_c, d_c, wall_c) = (col("step")?, col("loss_G")?, col("loss_D")?, col("wall_ms")?);
        let name = experiment_name(log);
        let row = rows.entry(name.clone()).or_insert_with(|| ReportRow {
            name,
            ..ReportRow::default()
        });
        row.runs += 1;
        let mut wall_ms = 0.0;
        let mut n = 0u64;
        for rec in reader.records() {
            let rec = rec.map_err(|e| fail(format!("{}: {e}", log.display())))?;
            let num = |i: usize| -> CliResult<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| fail(format!("{}: bad number {:?}", log.display(), &rec[i])))
            };
            row.final_loss_g = num(g_c)?;
            row.final_loss_d = num(d_c)?;
            wall_ms += num(wall_c)?;
            n = n.max(num(step_c)? as u64);
        }
        let prev = row.steps;
        row.steps += n;
        row.mean_step_ms = (row.mean_step_ms * prev as f64 + wall_ms) / row.steps.max(1) as f64;
        row.wall_hours += wall_ms / 3.6e6;
    }
    println!(
        "{:<12} {:>5} {:>7} {:>10} {:>10} {:>9} {:>10}",
        "name", "runs", "steps", "loss_G", "loss_D", "ms/step", "wall_h"
    );
    for r in rows.values() {
        println!(
            "{:<12} {:>5} {:>7} {:>10.4} {:>10.4} {:>9.1} {:>10.4}",
            r.name, r.runs, r.steps, r.final_loss_g, r.final_loss_d, r.mean_step_ms, r.wall_hours
        );
    }
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
        for r in rows.values() {
            w.serialize(r).map_err(|e| fail(e.to_string()))?;
        }
        w.flush().map_err(|e| Failure::from(io_err(path, e)))?;
    }
    Ok(())
}
