use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmm_sensing::adaptive::{self, AcquisitionState};
use gmm_sensing::harness::datasets::read_labeled_csv;
use gmm_sensing::harness::images::{patch_extract, patch_extract_strided, read_pgm};
use gmm_sensing::harness::metrics::sigma2_from_snr;
use gmm_sensing::harness::model_io::{load_model, save_model};
use gmm_sensing::harness::training::{model_from_labels, orientation_init, train_clean};
use gmm_sensing::harness::{run_two_step, ExperimentReport, ProtocolConfig};
use gmm_sensing::matrix_io::{write_csv, write_scsm};
use gmm_sensing::model::{sample_signals, synth_pair_in_range};
use gmm_sensing::rng::stream_rng;
use gmm_sensing::sensing::{eigen_sensing, random_orthonormal, rip_ab};
use gmm_sensing::{AscentOptions, SignalBatch};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

#[derive(Parser)]
#[command(
    name = "scs",
    version,
    about = "Adaptive statistical compressive sensing with Gaussian mixture models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a two-class synthetic model in a Bhattacharyya-distance
    /// bucket and sample labelled signals from it.
    GenSynthetic(GenSynthetic),
    /// Learn a mixture from image patches or a labelled CSV table.
    TrainGmm(TrainGmm),
    /// Write a sensing matrix designed from a model.
    Design(Design),
    /// Run a two-step protocol on a dataset and write its report.
    RunProtocol(RunProtocol),
    /// Collect report JSON files into one CSV metrics table.
    Report(Report),
}

#[derive(Args)]
struct GenSynthetic {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 30.0)]
    bd_min: f64,
    #[arg(long, default_value_t = 46.0)]
    bd_max: f64,
    #[arg(long, default_value_t = 1000)]
    signals: usize,
    #[arg(long, default_value_t = 10_000)]
    max_attempts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory: `model/`, `signals.csv` (label in the last column)
    /// and `pair.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// 8-bit binary PGM images (patches are extracted from each).
    #[arg(long, num_args = 1.., conflicts_with = "csv")]
    images: Vec<PathBuf>,
    /// Headerless numeric CSV, one signal per row.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Zero-based column of `--csv` holding class labels.
    #[arg(long)]
    label_column: Option<usize>,
    #[arg(long, default_value_t = 8)]
    patch: usize,
}

#[derive(Args)]
struct TrainGmm {
    #[command(flatten)]
    data: DataArgs,
    /// Patch stride for training images (1 = all overlapping patches).
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Orientation classes for image initialisation (one flat class is added).
    #[arg(long, default_value_t = 18)]
    bins: usize,
    /// Classes for unlabelled CSV data, initialised from a seeded random split.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// MAP-EM iterations on the clean signals.
    #[arg(long, default_value_t = 2)]
    kappa: usize,
    /// Keep a seeded random subset of at most this many training signals.
    #[arg(long)]
    max_signals: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignKind {
    Random,
    RipAb,
    Ida,
    Eigen,
}

#[derive(Args)]
struct Design {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    kind: DesignKind,
    #[arg(long)]
    m: usize,
    /// Class whose eigenvectors `eigen` uses.
    #[arg(long, default_value_t = 0)]
    class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SCSM output file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunProtocol {
    /// JSON protocol configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Set the noise variance from an SNR in dB relative to mean signal energy.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Use at most this many evenly spaced signals.
    #[arg(long)]
    limit: Option<usize>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-signal CSV trace.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct Report {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; reports are not re-run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn signals_csv(batch: &SignalBatch) -> String {
    let mut s = String::new();
    for (i, x) in batch.signals.iter().enumerate() {
        let mut cells: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &batch.labels {
            cells.push(l[i].to_string());
        }
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn gen_synthetic(a: GenSynthetic) -> Result<()> {
    let pair = synth_pair_in_range(a.n, a.bd_min, a.bd_max, a.seed, a.max_attempts)?;
    let batch = sample_signals(&pair.model, a.signals, a.seed)?;
    fs::create_dir_all(&a.out)?;
    save_model(a.out.join("model"), &pair.model, 0.0)?;
    fs::write(a.out.join("signals.csv"), signals_csv(&batch))?;
    let info = serde_json::json!({
        "distance": pair.distance,
        "params": pair.params,
        "attempts": pair.attempts,
        "seed": a.seed,
    });
    fs::write(
        a.out.join("pair.json"),
        serde_json::to_string_pretty(&info)?,
    )?;
    println!(
        "distance {:.3} after {} attempts",
        pair.distance, pair.attempts
    );
    Ok(())
}

fn image_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Test-time dataset: non-overlapping patches of one image or a CSV table.
fn load_dataset(d: &DataArgs) -> Result<SignalBatch> {
    match (&d.csv, d.images.as_slice()) {
        (Some(p), _) => Ok(read_labeled_csv(p, d.label_column)
            .with_context(|| format!("reading {}", p.display()))?
            .0),
        (None, [img]) => {
            let im = read_pgm(img).with_context(|| format!("reading {}", img.display()))?;
            Ok(patch_extract(&im, d.patch, false, &image_stem(img))?)
        }
        (None, []) => bail!("pass --csv or --images"),
        (None, _) => bail!("run-protocol takes a single image per run"),
    }
}

fn train_gmm(a: TrainGmm) -> Result<()> {
    let (signals, init) = if let Some(p) = &a.data.csv {
        let (batch, _) = read_labeled_csv(p, a.data.label_column)
            .with_context(|| format!("reading {}", p.display()))?;
        let labels = match &batch.labels {
            Some(l) => l.clone(),
            None => {
                let mut order: Vec<usize> = (0..batch.len()).collect();
                order.shuffle(&mut stream_rng(a.seed, 0));
                let mut labels = vec![0; batch.len()];
                for (rank, &i) in order.iter().enumerate() {
                    labels[i] = rank % a.classes.max(1);
                }
                labels
            }
        };
        let classes = labels.iter().max().map_or(1, |m| m + 1);
        let signals = subsample(batch.signals, a.max_signals, a.seed);
        let labels = subsample(labels, a.max_signals, a.seed);
        let scale = signals.iter().map(|x| x.norm_squared()).sum::<f64>()
            / (signals.len() * signals[0].len()) as f64;
        let init = model_from_labels(&signals, &labels, classes, 1e-3 * scale.max(1e-12))?;
        (signals, init)
    } else {
        if a.data.images.is_empty() {
            bail!("pass --csv or --images");
        }
        let mut signals = Vec::new();
        for img in &a.data.images {
            let im = read_pgm(img).with_context(|| format!("reading {}", img.display()))?;
            signals.extend(
                patch_extract_strided(&im, a.data.patch, a.stride, &image_stem(img))?.signals,
            );
        }
        let signals = subsample(signals, a.max_signals, a.seed);
        let init = orientation_init(&signals, a.data.patch, a.bins)?;
        (signals, init)
    };
    let trained = train_clean(&signals, &init, a.kappa)?;
    save_model(&a.out, &trained.model, 0.0)?;
    println!(
        "{} classes, N = {}, {} training signals",
        trained.model.len(),
        trained.model.dimension(),
        signals.len()
    );
    Ok(())
}

/// Seeded random subset of at most `max` items, in original order.
fn subsample<T: Clone>(items: Vec<T>, max: Option<usize>, seed: u64) -> Vec<T> {
    match max {
        Some(m) if m < items.len() => {
            let mut idx: Vec<usize> = (0..items.len()).collect();
            idx.shuffle(&mut stream_rng(seed, 1));
            idx.truncate(m);
            idx.sort_unstable();
            idx.into_iter().map(|i| items[i].clone()).collect()
        }
        _ => items,
    }
}

fn design(a: Design) -> Result<()> {
    let (model, _) =
        load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let rows: DMatrix<f64> = match a.kind {
        DesignKind::Random => random_orthonormal(a.m, model.dimension(), a.seed)?.into_rows(),
        DesignKind::RipAb => rip_ab(&model, a.m)?.into_rows(),
        DesignKind::Eigen => {
            if a.class >= model.len() {
                bail!("class {} outside 0..{}", a.class, model.len());
            }
            eigen_sensing(model.component(a.class), a.m)?.into_rows()
        }
        DesignKind::Ida => {
            let state = AcquisitionState::new(&model, 0.0, a.m, a.m)?;
            adaptive::design_classification_block(
                &state,
                &model,
                a.m,
                a.seed,
                &AscentOptions::default(),
            )?
            .rows
        }
    };
    write_scsm(&a.out, &rows)?;
    if let Some(p) = &a.csv {
        write_csv(p, &rows)?;
    }
    println!(
        "{} x {} rows written to {}",
        rows.nrows(),
        rows.ncols(),
        a.out.display()
    );
    Ok(())
}

fn evenly_spaced(batch: SignalBatch, count: usize) -> SignalBatch {
    if count >= batch.len() {
        return batch;
    }
    let step = batch.len() / count;
    let idx: Vec<usize> = (0..batch.len()).step_by(step).take(count).collect();
    let mut out = batch.clone();
    out.signals = idx.iter().map(|&i| batch.signals[i].clone()).collect();
    out.labels = batch
        .labels
        .as_ref()
        .map(|l| idx.iter().map(|&i| l[i]).collect());
    out.dc_offsets = batch
        .dc_offsets
        .as_ref()
        .map(|d| idx.iter().map(|&i| d[i]).collect());
    if let gmm_sensing::Provenance::ImagePatches { origins, .. } = &mut out.provenance {
        *origins = idx.iter().map(|&i| origins[i]).collect();
    }
    out
}

fn run_protocol(a: RunProtocol) -> Result<()> {
    let text =
        fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut config: ProtocolConfig =
        serde_json::from_str(&text).context("parsing protocol configuration")?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let (model, _) =
        load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mut batch = load_dataset(&a.data)?;
    if let Some(limit) = a.limit {
        if limit == 0 {
            bail!("--limit must be positive");
        }
        batch = evenly_spaced(batch, limit);
    }
    if let Some(snr) = a.snr_db {
        config.sigma2 = sigma2_from_snr(&batch.signals, snr)?;
    }
    let report = run_two_step(&config, &batch, &model)?;
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(p) = &a.records {
        fs::write(p, report.records_csv())?;
    }
    println!("{}", ExperimentReport::CSV_HEADER);
    println!("{}", report.csv_row());
    Ok(())
}

fn report(a: Report) -> Result<()> {
    let mut table = format!("source,{}\n", ExperimentReport::CSV_HEADER);
    for p in &a.inputs {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: ExperimentReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        table.push_str(&format!("{},{}\n", image_stem(p), r.csv_row()));
    }
    match &a.out {
        Some(p) => fs::write(p, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::TrainGmm(a) => train_gmm(a),
        Command::Design(a) => design(a),
        Command::RunProtocol(a) => run_protocol(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
