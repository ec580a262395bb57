//! `cellscan` command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::canny::CannyParams;
use crate::corpus::{measure_corpus_bytes, preprocess_corpus};
use crate::dataset::{scan_dataset, stratified_split, Mode};
use crate::error::{Error, Result};
use crate::trainer::{
    build_model, compare_reports, evaluate, load_model, predict_one, read_report, save_model,
    train_with_progress, write_report, ExperimentReport, ModelConfig, TrainConfig,
};

#[derive(Debug, Parser, Serialize)]
#[command(name = "cellscan", version, about = "Malaria cell-image CNN: preprocess, train, evaluate, report")]
struct Cli {
    /// Worker threads for image loading and tensor kernels (0 = all cores).
    #[arg(long, global = true, env = "CELLSCAN_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
enum Command {
    /// Write Canny edge maps for every PNG in a corpus, mirroring its tree.
    Preprocess(PreprocessArgs),
    /// Train a model on a Parasitized/Uninfected corpus.
    Train(TrainArgs),
    /// Accuracy of a saved model on the held-out split (or the whole corpus).
    Eval(EvalArgs),
    /// Classify a single image.
    Predict(PredictArgs),
    /// Merge run reports into a raw vs canny comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
struct PreprocessArgs {
    /// Corpus root holding Parasitized/ and Uninfected/.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output root; the class folders and file names are mirrored.
    #[arg(long = "out", value_name = "DIR")]
    output: PathBuf,
    /// Gaussian blur standard deviation in pixels.
    #[arg(long, default_value_t = 1.4, value_parser = positive_f32)]
    sigma: f32,
    /// Hysteresis low threshold on gradient magnitude.
    #[arg(long, default_value_t = 50.0)]
    low: f32,
    /// Hysteresis high threshold on gradient magnitude.
    #[arg(long, default_value_t = 100.0)]
    high: f32,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Corpus root holding Parasitized/ and Uninfected/.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// raw: RGB input; canny: edge maps (computed on load for RGB files).
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: u32,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    batch: u32,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    lr: f64,
    /// Seed for the split, shuffling, dropout and initialization.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Held-out fraction of each class.
    #[arg(long, default_value_t = 0.2, value_parser = open_unit_fraction)]
    test_fraction: f64,
    /// Train on a stratified subset with this many images per class.
    #[arg(long, value_name = "N")]
    subset: Option<usize>,
    /// Write the trained model here.
    #[arg(long, value_name = "FILE")]
    model_out: Option<PathBuf>,
    /// Write a JSON run report here, plus a .csv next to it.
    #[arg(long, value_name = "FILE")]
    report_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Must match the mode the model was trained in.
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Split seed; must match the training run to score its held-out images.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Must match the training run's --test-fraction.
    #[arg(long, default_value_t = 0.2, value_parser = open_unit_fraction)]
    test_fraction: f64,
    /// Must match the training run's --subset.
    #[arg(long, value_name = "N")]
    subset: Option<usize>,
    /// Score every image instead of the held-out split.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// PNG image, RGB or an edge map.
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// JSON reports written by train --report-out, any mix of modes and seeds.
    #[arg(long = "in", value_name = "FILE", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
}

fn open_unit_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not strictly between 0 and 1"))
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a positive finite number"))
    }
}

fn positive_f32(s: &str) -> std::result::Result<f32, String> {
    positive_f64(s).map(|v| v as f32)
}

/// Parse `argv` (including the program name), run the command, and return the exit code:
/// 0 on success or help, 1 on usage errors, 2 on runtime errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("threads: {e}");
            return 2;
        }
    };
    println!("{}", serde_json::to_string(&cli).expect("config serializes"));
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.module());
            2
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Report(a) => report(a),
    }
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let params = CannyParams {
        sigma: a.sigma,
        low_threshold: a.low,
        high_threshold: a.high,
    };
    let s = preprocess_corpus(&a.input, &a.output, &params)?;
    println!(
        "preprocessed {} files: {} bytes in, {} bytes out, ratio {:.4}",
        s.files,
        s.input_bytes,
        s.output_bytes,
        s.ratio()
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut index = scan_dataset(&a.data, a.mode)?;
    if let Some(n) = a.subset {
        index = index.stratified_subset(n, a.seed)?;
    }
    let cfg = TrainConfig {
        epochs: a.epochs as usize,
        batch_size: a.batch as usize,
        learning_rate: a.lr,
        test_fraction: a.test_fraction,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        seed: a.seed,
        ..ModelConfig::for_mode(a.mode)
    };
    println!(
        "{}",
        serde_json::json!({ "model": &model_cfg, "train": &cfg })
    );
    let (train_idx, test_idx) = stratified_split(&index, cfg.test_fraction, cfg.seed)?;
    println!("{} training images, {} test images", train_idx.len(), test_idx.len());
    let mut model = build_model::<f32>(&model_cfg)?;
    let history = train_with_progress(&mut model, &train_idx, &test_idx, &cfg, |m| {
        println!(
            "epoch {}: loss {:.4}, train acc {:.4}, test acc {:.4}, {:.1}s",
            m.epoch, m.train_loss, m.train_accuracy, m.test_accuracy, m.wall_seconds
        );
    })?;
    if let Some(path) = &a.model_out {
        save_model(&model, path)?;
        println!("model written to {}", path.display());
    }
    if let Some(path) = &a.report_out {
        let corpus_bytes = match a.subset {
            Some(_) => index.total_bytes()?,
            None => measure_corpus_bytes(&a.data)?,
        };
        let report = ExperimentReport::new(
            a.mode,
            a.seed,
            train_idx.len(),
            test_idx.len(),
            history,
            corpus_bytes,
        );
        let csv = write_report(&report, path)?;
        println!("report written to {} and {}", path.display(), csv.display());
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut index = scan_dataset(&a.data, a.mode)?;
    if let Some(n) = a.subset {
        index = index.stratified_subset(n, a.seed)?;
    }
    let target = if a.all {
        index
    } else {
        stratified_split(&index, a.test_fraction, a.seed)?.1
    };
    let acc = evaluate(&model, &target)?;
    println!("accuracy {:.4} on {} images", acc, target.len());
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (p, label) = predict_one(&model, &a.image, a.mode)?;
    println!("probability {p} label {label}");
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let reports = a
        .inputs
        .iter()
        .map(read_report)
        .collect::<Result<Vec<_>>>()?;
    if reports.is_empty() {
        return Err(Error::Config("no reports given".into()));
    }
    print!("{}", compare_reports(&reports));
    Ok(())
}
