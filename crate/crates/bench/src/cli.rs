//! `raqr` command line. Flags override config files, which override defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raqr::channel::{PilotKind, ScenarioConfig};
use raqr::container::DType;
use raqr::train::{build_dataset, evaluate, train, Dataset, EvalSettings, Method, ModelRef, TrainConfig};
use raqr::urformer::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, URformerConfig};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::experiment::{file_digest, inspect, run_experiment, write_atomically, ExperimentKind, ExperimentSpec};

#[derive(Debug, Parser)]
#[command(name = "raqr", version, about = "Channel estimation experiments for Rydberg atomic receiver arrays")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a training dataset.
    GenData(GenDataArgs),
    /// Train a URformer on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Mean NMSE per SNR point for a checkpoint and the classic baselines.
    Eval(EvalArgs),
    /// Run an experiment and write per-trial CSV rows plus a JSON sidecar.
    Sweep(SweepArgs),
    /// Print a checkpoint or dataset manifest.
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub antennas: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub pilots: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub rays: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rsr: Option<f64>,
    /// `random` or `dft`.
    #[arg(long)]
    pub pilot_kind: Option<String>,
}

impl ScenarioArgs {
    fn apply(&self, sc: &mut ScenarioConfig) -> Result<()> {
        set(&mut sc.num_antennas, self.antennas);
        set(&mut sc.num_users, self.users);
        set(&mut sc.num_pilots, self.pilots);
        set(&mut sc.num_clusters, self.clusters);
        set(&mut sc.rays_per_cluster, self.rays);
        set(&mut sc.snr_db, self.snr);
        set(&mut sc.rsr_db, self.rsr);
        if let Some(k) = &self.pilot_kind {
            sc.pilot_kind = match k.as_str() {
                "random" | "random_phase" => PilotKind::RandomPhase,
                "dft" => PilotKind::Dft,
                other => return Err(BenchError::Config(format!("unknown pilot kind {other:?}"))),
            };
        }
        sc.validate().map_err(|e| BenchError::Config(e.to_string()))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| BenchError::Io { path: p.to_path_buf(), source })?;
            serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| f(t.trim()).ok_or_else(|| BenchError::Config(format!("cannot parse {t:?}"))))
        .collect()
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    parse_list(s, Method::parse)
}

fn parse_points(s: &str) -> Result<Vec<f64>> {
    parse_list(s, |t| t.parse().ok())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataFile {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON file with `scenario` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_max: Option<f64>,
    #[arg(long, short, default_value = "dataset.bin")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub model: URformerConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file with `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub encoders: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub prefit_steps: Option<usize>,
    /// Store weights as 32-bit floats.
    #[arg(long)]
    pub f32: bool,
    #[arg(long, short, default_value = "urformer.ckpt")]
    pub output: PathBuf,
    /// Training report (JSON); defaults to `<output>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated SNR points in dB.
    #[arg(long, default_value = "0,5,10,15,20", allow_hyphen_values = true)]
    pub snr_points: String,
    /// Defaults to `gs,emgs` plus `urformer` when a checkpoint is given.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub classic_iters: usize,
    /// Also write the table as JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment JSON; a previous run's sidecar replays that run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// snr | pilot | single | classic
    #[arg(long)]
    pub kind: Option<String>,
    /// Comma-separated sweep values: SNR in dB, or pilot counts.
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    /// Comma-separated subset of gs, emgs, urformer.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// May be repeated, one per pilot count in a pilot sweep.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub classic_iters: Option<usize>,
    /// Record wall-clock time per row (breaks byte-identical reruns).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

pub fn gen_data(args: &GenDataArgs) -> Result<String> {
    let mut file: GenDataFile = read_json(args.config.as_deref())?;
    args.scenario.apply(&mut file.scenario)?;
    let t = &mut file.train;
    set(&mut t.num_samples, args.samples);
    set(&mut t.seed, args.seed);
    set(&mut t.snr_range_db.0, args.snr_min);
    set(&mut t.snr_range_db.1, args.snr_max);
    t.batch_size = t.batch_size.min(t.num_samples.saturating_sub(t.num_validation(t.num_samples))).max(1);
    t.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    let data = build_dataset(&file.scenario, &file.train)?;
    write_atomically(&args.output, &data.to_container()?.to_bytes()?)?;
    let digest = file_digest(&args.output)?;
    Ok(format!("wrote {} samples to {} (digest {digest:016x})", data.len(), args.output.display()))
}

pub fn train_cmd(args: &TrainArgs) -> Result<String> {
    let mut file: TrainFile = read_json(args.config.as_deref())?;
    let data = Dataset::read(&args.data)?;
    let (m, t) = (&mut file.model, &mut file.train);
    set(&mut m.num_layers, args.layers);
    if let Some(d) = args.d_model {
        m.d_model = d;
        m.ffn_hidden = 4 * d;
    }
    set(&mut m.num_encoders, args.encoders);
    set(&mut m.num_heads, args.heads);
    set(&mut t.epochs, args.epochs);
    set(&mut t.batch_size, args.batch_size);
    set(&mut t.learning_rate, args.lr);
    set(&mut t.seed, args.seed);
    set(&mut t.prefit_filter_steps, args.prefit_steps);
    t.num_samples = data.len();
    t.snr_range_db = data.snr_range_db;
    t.rsr_db = data.scenario.rsr_db;
    m.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    t.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    let out = train(&data, &file.model, &file.train)?;
    let ckpt = Checkpoint {
        params: out.params,
        pilots: data.pilots.clone(),
        meta: CheckpointMeta {
            epoch: out.report.best_epoch,
            seed: file.train.seed,
            loss_db: Some(out.report.best_val_nmse_db),
            note: String::new(),
        },
    };
    let dtype = if args.f32 { DType::F32 } else { DType::F64 };
    save_checkpoint(&args.output, &ckpt, dtype)?;
    let mut report = out.report;
    report.checkpoint_path = Some(args.output.display().to_string());
    let report_path = args.report.clone().unwrap_or_else(|| args.output.with_extension("report.json"));
    let json = serde_json::to_vec_pretty(&report).map_err(|e| BenchError::Config(e.to_string()))?;
    write_atomically(&report_path, &json)?;
    Ok(format!(
        "best validation NMSE {:.3} dB at epoch {} (init {:.3} dB); checkpoint {}",
        report.best_val_nmse_db,
        report.best_epoch,
        report.initial_val_nmse_db,
        args.output.display()
    ))
}

pub fn eval_cmd(args: &EvalArgs) -> Result<String> {
    let ckpt = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut sc = ScenarioConfig::default();
    if let Some(c) = &ckpt {
        sc.num_antennas = c.params.dims.num_antennas;
        sc.num_users = c.params.dims.num_users;
        sc.num_pilots = c.params.dims.num_pilots;
    }
    args.scenario.apply(&mut sc)?;
    let methods = match &args.methods {
        Some(s) => parse_methods(s)?,
        None if ckpt.is_some() => vec![Method::Gs, Method::Emgs, Method::Urformer],
        None => vec![Method::Gs, Method::Emgs],
    };
    let points = parse_points(&args.snr_points)?;
    let model = ckpt.as_ref().map(|c| ModelRef { params: &c.params, pilots: &c.pilots });
    let table = evaluate(
        &sc,
        &points,
        &methods,
        args.trials,
        args.seed,
        model,
        &EvalSettings { classic_iters: args.classic_iters },
    )?;
    if let Some(path) = &args.output {
        let json = serde_json::to_vec_pretty(&table).map_err(|e| BenchError::Config(e.to_string()))?;
        write_atomically(path, &json)?;
    }
    let mut out = String::from("snr_db,method,mean_nmse_db,trials");
    for p in &table {
        out.push_str(&format!("\n{},{},{:.4},{}", p.snr_db, p.method.name(), p.mean_nmse_db, p.trials));
    }
    Ok(out)
}

/// Builds the experiment spec: defaults, then `--config`, then flags.
pub fn sweep_spec(args: &SweepArgs) -> Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(p) => ExperimentSpec::from_json_file(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(k) = &args.kind {
        spec.kind = ExperimentKind::parse(k).ok_or_else(|| BenchError::Config(format!("unknown kind {k:?}")))?;
        if args.points.is_none() && spec.kind == ExperimentKind::PilotSweep && args.config.is_none() {
            spec.sweep_points = vec![8.0, 12.0, 16.0, 20.0];
        }
    }
    if let Some(p) = &args.points {
        spec.sweep_points = parse_points(p)?;
    }
    if let Some(m) = &args.methods {
        spec.methods = parse_methods(m)?;
    }
    set(&mut spec.trials, args.trials);
    set(&mut spec.seed, args.seed);
    set(&mut spec.output, args.output.clone());
    set(&mut spec.classic_iters, args.classic_iters);
    if !args.checkpoint.is_empty() {
        spec.checkpoints = args.checkpoint.clone();
    }
    if args.timing {
        spec.record_timing = true;
    }
    args.scenario.apply(&mut spec.scenario)?;
    spec.resolve()
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<String> {
    let summary = run_experiment(sweep_spec(args)?)?;
    let mut out = format!("wrote {} rows to {} (sidecar {})", summary.rows.len(), summary.csv.display(), summary.sidecar.display());
    for (method, value, mean) in summary.means() {
        out.push_str(&format!("\n  {:<9} {:>6} mean nmse_db {:.3}", method.name(), value, mean));
    }
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::InspectCheckpoint(a) => inspect(&a.path),
    }
}

/// Entry point: parses flags, runs, maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
