//! Command-line driver. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use zoomnet_core::data::{generate, Dataset, DatasetSpec, Sample};
use zoomnet_core::gradcheck::run_suite;
use zoomnet_core::train::{evaluate, run_ab_comparison, train, EpochReport, Evaluation, TrainConfig};
use zoomnet_core::{Model, PipelineConfig};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::figures::{read_gray, Figure};
use crate::{checkpoint, dataset, metrics, wire};

/// File name of the dataset inside a `gen-data` output directory.
pub const DATASET_FILE: &str = "dataset.nhst";

#[derive(Parser, Debug)]
#[command(name = "zoomnet", version, about = "Saliency-driven zoom sampler: data, training, evaluation and figures")]
struct Cli {
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core, 1 stays on the calling thread.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a needle-in-haystack dataset.
    GenData(GenData),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train the uniform baseline and the sampler pipeline with the same budget.
    AbTest(AbTestArgs),
    /// Finite-difference check of every backward rule and of the whole pipeline.
    GradCheck(GradCheckArgs),
    /// Write original, saliency, grid and sampled images for one input.
    Visualize(VisualizeArgs),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Height and width of the images.
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    glyph: usize,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    /// Output directory; receives dataset.nhst, labels.csv and one PNG per sample.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// A dataset file or a gen-data directory. Without it the default dataset is generated from --seed.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training epochs per model [default: 60].
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: 32].
    #[arg(long)]
    batch: Option<usize>,
    /// SGD learning rate [default: 0.05].
    #[arg(long)]
    lr: Option<f64>,
    /// Heavy-ball momentum [default: 0.9].
    #[arg(long)]
    momentum: Option<f64>,
    /// Blur of the resampled image at the first epoch, in pixels.
    #[arg(long)]
    blur0: Option<f64>,
    /// Fraction of the epochs over which the blur decays to zero.
    #[arg(long)]
    warmup: Option<f64>,
    /// Saliency softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Saliency-net learning rate as a multiple of --lr; 0 freezes it.
    #[arg(long)]
    saliency_lr_scale: Option<f64>,
    /// Checkpoint path; for ab-test, a directory receiving baseline.ssck and sampler.ssck.
    #[arg(long)]
    ckpt_out: Option<PathBuf>,
    /// Per-epoch metrics CSV; for ab-test, a directory receiving baseline.csv and sampler.csv.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Also write a checkpoint every this many epochs, next to --ckpt-out.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Train the identity-grid baseline instead of the sampler pipeline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AbTestArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// Corrupt the backward rule of the named check.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset to take the input from; see --index.
    #[arg(long, conflicts_with = "input")]
    data: Option<PathBuf>,
    /// Index into the test split of --data.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// A PNG image of the checkpoint's input size.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// `Ok(false)` is a clean run whose verdict is failure.
fn dispatch(cli: Cli) -> Result<bool> {
    let exec = Exec::new(cli.threads)?;
    match cli.command {
        Command::GenData(a) => gen_data(&a, cli.seed),
        Command::Train(a) => train_one(&a, cli.seed, &exec),
        Command::Eval(a) => eval(&a, &exec),
        Command::AbTest(a) => ab_test(&a, cli.seed, &exec),
        Command::GradCheck(a) => grad_check(&a, cli.seed),
        Command::Visualize(a) => visualize(&a),
    }
}

fn gen_data(a: &GenData, seed: u64) -> Result<bool> {
    let spec = DatasetSpec {
        classes: a.classes,
        rows: a.size,
        cols: a.size,
        glyph: a.glyph,
        n_train: a.n_train,
        n_test: a.n_test,
        seed,
        ..DatasetSpec::default()
    };
    let data = generate(&spec)?;
    std::fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
    dataset::save(&a.out.join(DATASET_FILE), &spec, &data)?;
    dataset::export_png(&a.out, &data)?;
    println!(
        "wrote {} train and {} test samples to {}",
        data.train.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(true)
}

fn load_data(path: Option<&Path>, seed: u64) -> Result<(DatasetSpec, Dataset)> {
    match path {
        Some(p) if p.is_dir() => dataset::load(&p.join(DATASET_FILE)),
        Some(p) => dataset::load(p),
        None => {
            let spec = DatasetSpec {
                seed,
                ..DatasetSpec::default()
            };
            let data = generate(&spec)?;
            Ok((spec, data))
        }
    }
}

fn configs(flags: &TrainFlags, spec: &DatasetSpec, seed: u64) -> Result<(PipelineConfig, TrainConfig)> {
    let base = PipelineConfig::default();
    let pipeline = PipelineConfig {
        high: (spec.rows, spec.cols),
        classes: spec.classes,
        temperature: flags.temperature.unwrap_or(base.temperature),
        ..base
    };
    pipeline.validate()?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: flags.epochs.unwrap_or(d.epochs),
        batch_size: flags.batch.unwrap_or(d.batch_size),
        lr: flags.lr.unwrap_or(d.lr),
        momentum: flags.momentum.unwrap_or(d.momentum),
        blur0: flags.blur0.unwrap_or(d.blur0),
        warmup: flags.warmup.unwrap_or(d.warmup),
        saliency_lr_scale: flags.saliency_lr_scale.unwrap_or(d.saliency_lr_scale),
        seed,
        checkpoint_every: flags.checkpoint_every,
    };
    cfg.validate()?;
    Ok((pipeline, cfg))
}

fn progress(arm: &str, r: &EpochReport<'_>) {
    let m = r.metrics;
    println!(
        "{arm} epoch {:>3}  loss {:.4}  train {:.3}  test {:.3}  localized {:.3}  displacement {:.4}",
        m.epoch, m.loss, m.train_acc, m.test_acc, m.localization, m.displacement
    );
}

/// `path` with `-epoch{n}` inserted before the extension.
fn periodic(path: &Path, epoch: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-epoch{epoch}.{ext}"),
        None => format!("{stem}-epoch{epoch}"),
    };
    path.with_file_name(name)
}

fn train_one(a: &TrainArgs, seed: u64, exec: &Exec) -> Result<bool> {
    let (spec, data) = load_data(a.flags.data.as_deref(), seed)?;
    let (pipeline, cfg) = configs(&a.flags, &spec, seed)?;
    let mut model = Model::new(pipeline, seed, !a.baseline)?;
    let mut saved: Result<()> = Ok(());
    let arm = if a.baseline { "baseline" } else { "sampler" };
    let history = train(&mut model, &data.train, &data.test, &cfg, exec, |r| {
        progress(arm, &r);
        if let (true, Some(path), Ok(())) = (r.checkpoint_due, &a.flags.ckpt_out, &saved) {
            saved = checkpoint::save(&periodic(path, r.metrics.epoch + 1), r.model, Some(&cfg), r.metrics.epoch + 1);
        }
    })?;
    saved?;
    if let Some(path) = &a.flags.ckpt_out {
        checkpoint::save(path, &model, Some(&cfg), cfg.epochs)?;
    }
    if let Some(path) = &a.flags.metrics_out {
        metrics::save(path, &history)?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct EvalReport {
    sampler: bool,
    samples: usize,
    #[serde(flatten)]
    eval: Evaluation,
}

fn eval(a: &EvalArgs, exec: &Exec) -> Result<bool> {
    let (cfg, model) = checkpoint::load(&a.ckpt)?;
    let seed = cfg.train.as_ref().map_or(0, |t| t.seed);
    let (_, data) = load_data(a.data.as_deref(), seed)?;
    let eval = evaluate(&model, &data.test, exec)?;
    println!(
        "accuracy {:.4}  loss {:.4}  localized {:.4}  residual {:.5}  displacement {:.5}  foldover {:.5}",
        eval.accuracy, eval.loss, eval.localization, eval.residual, eval.displacement, eval.foldover
    );
    if let Some(out) = &a.out {
        let report = EvalReport {
            sampler: cfg.sampler,
            samples: data.test.len(),
            eval,
        };
        wire::write_file(out, &serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct AbReport {
    pipeline: PipelineConfig,
    train: TrainConfig,
    baseline: Evaluation,
    sampler: Evaluation,
    margin_points: f64,
}

fn ab_test(a: &AbTestArgs, seed: u64, exec: &Exec) -> Result<bool> {
    let (spec, data) = load_data(a.flags.data.as_deref(), seed)?;
    let (pipeline, cfg) = configs(&a.flags, &spec, seed)?;
    let start = Instant::now();
    let cmp = run_ab_comparison(&data.train, &data.test, &pipeline, &cfg, exec, |arm, r| progress(arm, &r))?;
    println!(
        "baseline {:.4}  sampler {:.4}  margin {:+.1} points  localized {:.3}  ({:.0} s)",
        cmp.baseline_eval.accuracy,
        cmp.sampler_eval.accuracy,
        cmp.margin_points(),
        cmp.sampler_eval.localization,
        start.elapsed().as_secs_f64()
    );
    if let Some(dir) = &a.flags.ckpt_out {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        checkpoint::save(&dir.join("baseline.ssck"), &cmp.baseline, Some(&cfg), cfg.epochs)?;
        checkpoint::save(&dir.join("sampler.ssck"), &cmp.sampler, Some(&cfg), cfg.epochs)?;
    }
    if let Some(dir) = &a.flags.metrics_out {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        metrics::save(&dir.join("baseline.csv"), &cmp.baseline_history)?;
        metrics::save(&dir.join("sampler.csv"), &cmp.sampler_history)?;
    }
    if let Some(path) = &a.report {
        let report = AbReport {
            pipeline,
            train: cfg,
            baseline: cmp.baseline_eval,
            sampler: cmp.sampler_eval,
            margin_points: cmp.margin_points(),
        };
        wire::write_file(path, &serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(true)
}

fn grad_check(a: &GradCheckArgs, seed: u64) -> Result<bool> {
    let start = Instant::now();
    let report = run_suite(seed, a.inject_fault.as_deref())?;
    for c in &report.checks {
        println!(
            "{:<16} trials {:>2}  max rel err {:.3e}  tolerance {:.0e}  {}",
            c.name,
            c.trials,
            c.max_rel_err,
            c.tolerance,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(report.passed())
}

fn visualize(a: &VisualizeArgs) -> Result<bool> {
    let (cfg, model) = checkpoint::load(&a.ckpt)?;
    let image = match (&a.input, &a.data) {
        (Some(png), _) => read_gray(png)?,
        (None, data) => {
            let seed = cfg.train.as_ref().map_or(0, |t| t.seed);
            let (_, data) = load_data(data.as_deref(), seed)?;
            let sample: &Sample = data
                .test
                .get(a.index)
                .ok_or_else(|| Error::format("index", format!("{} is past the test split", a.index)))?;
            sample.image.clone()
        }
    };
    let fig = Figure::render(&model, &image)?;
    fig.write(&a.out)?;
    println!(
        "saliency scale: black {:.6e}, white {:.6e} (uniform {:.6e})",
        fig.saliency_range.0,
        fig.saliency_range.1,
        1.0 / (model.config.map.0 * model.config.map.1) as f64
    );
    Ok(true)
}
