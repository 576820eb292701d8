//! Command-line front end. `main.rs` only parses and maps errors to exit codes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::channelsim::{generate_dataset, measured_snr_db};
use crate::config::{MethodName, RunConfig, CONFIG_ENV};
use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, evaluate_baseline, repeat_seed, run_sweep, Baseline, MetricReport, NamedSplit, SweepAxis, SweepSpec,
    SWEEP_CSV_HEADER,
};
use crate::readout::fit_batched;
use crate::reservoir::{Activation, InitMethod, Reservoir};
use crate::store::{export_csv, load_dataset, load_model, save_dataset, save_model, ModelArtifact, Provenance};
use crate::transfer::{run_transfer, write_transfer_csv, TransferMode, TransferPlan};

#[derive(Debug, Parser)]
#[command(name = "echochan", version, about = "Echo state network channel modeling")]
pub struct Cli {
    /// Config file (TOML). Falls back to $ECHOCHAN_CONFIG, then the shipped defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a channel preset.
    Generate(GenerateArgs),
    /// Fit a readout on a dataset, report held-out MAPE and save the model.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Vary one hyperparameter and write a CSV of MAPE per cell.
    Sweep(SweepArgs),
    /// Pretrain on a source dataset and test on a target domain.
    Transfer(TransferArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Channel preset name (see `[presets]` in the config).
    #[arg(long)]
    pub preset: String,
    /// Number of sequences (default: `waveform.num_sequences`).
    #[arg(short = 'n', long)]
    pub num_sequences: Option<usize>,
    /// Output dataset file (default: `<paths.output_dir>/<preset>.esd`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Also write one CSV per sequence into this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReservoirOverrides {
    /// Spectral radius of W.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Reservoir size N.
    #[arg(long)]
    pub size: Option<usize>,
    /// Weight initializer: random, xavier, normalized_xavier or he.
    #[arg(long)]
    pub init: Option<InitMethod>,
    /// Activation: tanh, relu or sigmoid.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Fraction of non-zero entries in W.
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Initial time steps discarded from every sequence.
    #[arg(long)]
    pub washout: Option<usize>,
    /// Feed the previous output back into the reservoir.
    #[arg(long)]
    pub feedback: bool,
    /// Readout regression.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Ridge/lasso penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Ridge,
    Linear,
    Lasso,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file; split by sequence into train and held-out parts.
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file (default: `<paths.output_dir>/model.esn`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Fraction of sequences used for training.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[command(flatten)]
    pub overrides: ReservoirOverrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset file; every sequence is scored.
    #[arg(long)]
    pub data: PathBuf,
    /// Write the report as one row of the sweep CSV schema.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// init, radius, size, activation or regression.
    #[arg(long)]
    pub axis: SweepAxis,
    /// Dataset files; each is split into train and held-out parts.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Output CSV (default: `<paths.output_dir>/sweep_<axis>.csv`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Repeats per cell (default: `sweep.repeats`).
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Comma-separated values replacing the axis defaults.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    #[command(flatten)]
    pub overrides: ReservoirOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Direct,
    Finetune,
    Both,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Source-domain dataset (used whole for pretraining).
    #[arg(long)]
    pub source: PathBuf,
    /// Target-domain data for the fine-tune re-solve.
    #[arg(long)]
    pub target_train: PathBuf,
    /// Target-domain data every mode is scored on.
    #[arg(long)]
    pub target_test: PathBuf,
    /// Source model as is, blended re-solve, or one row of each.
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// Source weight when fine-tuning (default: `transfer.alpha`).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Independent reservoirs, each with its own derived seed.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Output CSV (default: `<paths.output_dir>/transfer.csv`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ReservoirOverrides,
}

impl ReservoirOverrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let r = &mut cfg.reservoir;
        if let Some(v) = self.radius {
            r.spectral_radius = v;
        }
        if let Some(v) = self.size {
            r.reservoir_size = v;
        }
        if let Some(v) = self.init {
            r.init = v;
        }
        if let Some(v) = self.activation {
            r.activation = v;
        }
        if let Some(v) = self.sparsity {
            r.sparsity = v;
        }
        if let Some(v) = self.washout {
            r.washout = v;
        }
        if self.feedback {
            r.use_feedback = true;
        }
        if let Some(m) = self.method {
            cfg.readout.method = match m {
                MethodArg::Ridge => MethodName::Ridge,
                MethodArg::Linear => MethodName::Linear,
                MethodArg::Lasso => MethodName::Lasso,
            };
        }
        if let Some(l) = self.lambda {
            cfg.readout.lambda = l;
        }
        cfg.validate()
    }
}

fn default_path(cfg: &RunConfig, given: &Option<PathBuf>, name: &str) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| Path::new(&cfg.paths.output_dir).join(name))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn dataset_label(ds: &SequenceDataset, path: &Path) -> String {
    if ds.meta().name.is_empty() {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        ds.meta().name.clone()
    }
}

fn print_report(label: &str, r: &MetricReport) {
    println!("{label}: {r}");
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Generate(a) => generate(&cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(cfg, a),
        Command::Transfer(a) => transfer(cfg, a),
    }
}

fn generate(cfg: &RunConfig, a: GenerateArgs) -> Result<()> {
    let chan = cfg.preset(&a.preset)?;
    let n = a.num_sequences.unwrap_or(cfg.waveform.num_sequences);
    let wave = cfg.waveform_spec(cfg.dataset_seed(&a.preset));
    let ds = generate_dataset(&wave, chan, n)?.with_name(a.preset.clone());
    let out = default_path(cfg, &a.out, &format!("{}.esd", a.preset));
    save_dataset(&ds, &out)?;
    if let Some(dir) = &a.csv_dir {
        export_csv(&ds, dir)?;
    }
    println!(
        "wrote {}: {} sequences, T = {}, empirical SNR {:.2} dB, sha256 {}",
        out.display(),
        ds.len(),
        ds.seq_len(),
        measured_snr_db(&ds),
        ds.fingerprint_hex()
    );
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    a.overrides.apply(&mut cfg)?;
    if let Some(f) = a.train_fraction {
        cfg.eval.train_fraction = f;
        cfg.validate()?;
    }
    let ds = load_dataset(&a.data)?;
    let name = dataset_label(&ds, &a.data);
    let (train_ds, test_ds) = ds.split(cfg.eval.train_fraction, cfg.split_seed())?;
    let reservoir = Reservoir::build(cfg.reservoir_config())?;
    let start = Instant::now();
    let model = fit_batched(&reservoir, &train_ds, cfg.regression_method(), cfg.readout.batch_size)?;
    let seconds = start.elapsed().as_secs_f64();
    let report = evaluate(&reservoir, &model, &test_ds)?.with_wall_time(seconds);
    let passthrough = evaluate_baseline(&test_ds, Baseline::Passthrough, reservoir.config().washout).ok();

    let artifact = ModelArtifact {
        reservoir,
        readout: model,
        provenance: Provenance::new(cfg.seed)
            .with_dataset("train", &train_ds)
            .with_dataset("test", &test_ds),
    };
    let out = default_path(&cfg, &a.out, "model.esn");
    save_model(&artifact, &out)?;
    println!(
        "trained on {} sequences of {name} ({} held out), N = {}, rho = {:.4}",
        train_ds.len(),
        test_ds.len(),
        artifact.reservoir.size(),
        artifact.reservoir.achieved_radius()
    );
    print_report("held-out", &report);
    if let Some(p) = passthrough {
        println!("passthrough baseline MAPE {:.4}%", p.mape_percent);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let artifact = load_model(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let name = dataset_label(&ds, &a.data);
    let report = evaluate(&artifact.reservoir, &artifact.readout, &ds)?;
    print_report(&name, &report);
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        let value = a
            .model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        writeln!(
            w,
            "evaluate,{value},{name},0,{},{},{},{}",
            report.mape_percent,
            report.mse,
            report.wall_time_seconds,
            artifact.reservoir.config().seed
        )?;
        w.flush()?;
    }
    Ok(())
}

fn sweep(mut cfg: RunConfig, a: SweepArgs) -> Result<()> {
    a.overrides.apply(&mut cfg)?;
    if let Some(r) = a.repeats {
        cfg.sweep.repeats = r;
    }
    let values = if a.values.is_empty() {
        cfg.sweep_values(a.axis)
    } else {
        a.values
            .iter()
            .map(|v| a.axis.parse_value(v.trim()))
            .collect::<Result<_>>()?
    };
    let mut datasets = Vec::new();
    for path in &a.data {
        let ds = load_dataset(path)?;
        let (train, test) = ds.split(cfg.eval.train_fraction, cfg.split_seed())?;
        datasets.push(NamedSplit {
            name: dataset_label(&ds, path),
            train,
            test,
        });
    }
    let mut base = cfg.reservoir_config();
    if a.axis == SweepAxis::InitMethod && !cfg.sweep.normalize_init {
        base.allow_unstable = true;
    }
    let spec = SweepSpec {
        axis: a.axis,
        values,
        base_config: base,
        base_method: cfg.regression_method(),
        datasets,
        repeats: cfg.sweep.repeats,
        master_seed: cfg.seed,
    };
    let report = run_sweep(&spec)?;
    let out = default_path(&cfg, &a.out, &format!("sweep_{}.csv", a.axis.name()));
    let mut w = create(&out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    for row in &report.rows {
        if let Err(e) = &row.outcome {
            eprintln!(
                "cell {}={} on {} repeat {} failed: {e}",
                a.axis.name(),
                row.value,
                row.dataset,
                row.repeat
            );
        }
    }
    println!(
        "{:>14} {:>14} {:>12} {:>10} {:>10} {:>8}",
        a.axis.name(),
        "dataset",
        "mean MAPE %",
        "std",
        "train s",
        "failed"
    );
    for s in report.summary() {
        println!(
            "{:>14} {:>14} {:>12.4} {:>10.4} {:>10.3} {:>8}",
            s.value, s.dataset, s.mean_mape, s.std_mape, s.mean_train_seconds, s.failures
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn transfer(mut cfg: RunConfig, a: TransferArgs) -> Result<()> {
    a.overrides.apply(&mut cfg)?;
    let alpha = a.alpha.unwrap_or(cfg.transfer.alpha);
    TransferMode::FineTune { alpha }.validate()?;
    if a.repeats == 0 {
        return Err(Error::Config("--repeats must be >= 1".into()));
    }
    let modes: Vec<TransferMode> = match a.mode {
        ModeArg::Direct => vec![TransferMode::DirectTransfer],
        ModeArg::Finetune => vec![TransferMode::FineTune { alpha }],
        ModeArg::Both => vec![TransferMode::DirectTransfer, TransferMode::FineTune { alpha }],
    };
    let source = load_dataset(&a.source)?;
    let target_train = load_dataset(&a.target_train)?;
    let target_test = load_dataset(&a.target_test)?;
    let (source_name, target_name) = (
        dataset_label(&source, &a.source),
        dataset_label(&target_test, &a.target_test),
    );
    let mut rows = Vec::new();
    for repeat in 0..a.repeats {
        let mut rc = cfg.reservoir_config();
        rc.seed = repeat_seed(cfg.seed, repeat);
        for &mode in &modes {
            let plan = TransferPlan {
                source_name: source_name.clone(),
                target_name: target_name.clone(),
                source: &source,
                target_train: &target_train,
                target_test: &target_test,
                mode,
            };
            let row = run_transfer(&plan, &rc, cfg.regression_method())?;
            print_report(&format!("{} repeat {repeat}", row.mode), &row.report);
            rows.push(row);
        }
    }
    let out = default_path(&cfg, &a.out, "transfer.csv");
    let mut w = create(&out)?;
    write_transfer_csv(&rows, &mut w)?;
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}
