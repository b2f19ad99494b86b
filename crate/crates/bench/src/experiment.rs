//! Seeded Monte-Carlo sweeps written as CSV plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use raqr::channel::ScenarioConfig;
use raqr::container::Container;
use raqr::train::{run_trial, trial_seed, EvalSettings, Method, ModelRef, TrialOutcome};
use raqr::urformer::{load_checkpoint, Checkpoint};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 9] =
    ["method", "sweep_param", "sweep_value", "trial", "seed", "nmse_db", "objective", "iters", "wallclock_ms"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// NMSE against SNR at fixed pilot count.
    #[default]
    SnrSweep,
    /// NMSE against the pilot count `P` at fixed SNR.
    PilotSweep,
    /// The scenario as given, one point.
    SingleRun,
    /// An SNR sweep restricted to GS and EM-GS.
    ClassicOnly,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snr" | "snr_sweep" => Some(Self::SnrSweep),
            "pilot" | "pilots" | "pilot_sweep" => Some(Self::PilotSweep),
            "single" | "single_run" => Some(Self::SingleRun),
            "classic" | "classic_only" => Some(Self::ClassicOnly),
            _ => None,
        }
    }

    pub fn sweep_param(self) -> &'static str {
        match self {
            Self::PilotSweep => "num_pilots",
            _ => "snr_db",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub sweep_points: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub scenario: ScenarioConfig,
    /// Trained models; each sweep point uses the one whose dimensions match.
    pub checkpoints: Vec<PathBuf>,
    pub classic_iters: usize,
    /// Record per-method wall-clock time. Off by default so reruns are byte-identical.
    pub record_timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: ExperimentKind::SnrSweep,
            sweep_points: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            methods: vec![Method::Gs, Method::Emgs],
            trials: 100,
            seed: 0,
            output: PathBuf::from("results.csv"),
            scenario: ScenarioConfig::default(),
            checkpoints: Vec::new(),
            classic_iters: 100,
            record_timing: false,
        }
    }
}

impl ExperimentSpec {
    /// Checks invariants and fills in derived fields.
    pub fn resolve(mut self) -> Result<Self> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.kind == ExperimentKind::SingleRun {
            self.sweep_points = vec![self.scenario.snr_db];
        }
        if self.sweep_points.is_empty() {
            return bad("sweep has no points".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods listed more than once".into());
        }
        if self.classic_iters == 0 {
            return bad("classic_iters must be positive".into());
        }
        if self.kind == ExperimentKind::ClassicOnly && self.methods.contains(&Method::Urformer) {
            return bad("classic_only sweeps cannot include urformer".into());
        }
        if self.methods.contains(&Method::Urformer) && self.checkpoints.is_empty() {
            return bad("urformer needs at least one checkpoint".into());
        }
        for &v in &self.sweep_points {
            if !v.is_finite() {
                return bad(format!("sweep point {v} is not finite"));
            }
            if self.kind == ExperimentKind::PilotSweep && (v.fract() != 0.0 || v < 1.0) {
                return bad(format!("pilot count {v} is not a positive integer"));
            }
        }
        for i in 0..self.sweep_points.len() {
            self.scenario_at(i).validate().map_err(|e| BenchError::Config(e.to_string()))?;
        }
        Ok(self)
    }

    pub fn scenario_at(&self, point: usize) -> ScenarioConfig {
        let v = self.sweep_points[point];
        match self.kind {
            ExperimentKind::PilotSweep => ScenarioConfig { num_pilots: v as usize, ..self.scenario.clone() },
            _ => ScenarioConfig { snr_db: v, ..self.scenario.clone() },
        }
    }

    pub fn sidecar_path(&self) -> PathBuf {
        sidecar_path(&self.output)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    output.with_extension("json")
}

fn partial(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

/// Writes `bytes` under a `.partial` name, then renames into place.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = partial(path);
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| BenchError::Io { path: p, source }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub sweep_param: &'static str,
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub nmse_db: f64,
    pub objective: f64,
    pub iters: usize,
    pub wallclock_ms: f64,
}

impl ResultRow {
    fn record(&self, timing: bool) -> [String; 9] {
        [
            self.method.name().to_string(),
            self.sweep_param.to_string(),
            format!("{}", self.sweep_value),
            self.trial.to_string(),
            self.seed.to_string(),
            format!("{}", self.nmse_db),
            format!("{}", self.objective),
            self.iters.to_string(),
            if timing { format!("{:.3}", self.wallclock_ms) } else { "0".to_string() },
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    spec: ExperimentSpec,
    rows: usize,
    crate_version: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
}

impl RunSummary {
    /// Mean `nmse_db` per (method, sweep value), in sweep order.
    pub fn means(&self) -> Vec<(Method, f64, f64)> {
        let mut out: Vec<(Method, f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(m, v, _, _)| *m == r.method && *v == r.sweep_value) {
                Some(entry) => {
                    entry.2 += r.nmse_db;
                    entry.3 += 1;
                }
                None => out.push((r.method, r.sweep_value, r.nmse_db, 1)),
            }
        }
        out.into_iter().map(|(m, v, s, n)| (m, v, s / n as f64)).collect()
    }
}

fn load_models(spec: &ExperimentSpec) -> Result<Vec<Option<Checkpoint>>> {
    if !spec.methods.contains(&Method::Urformer) {
        return Ok(vec![None; spec.sweep_points.len()]);
    }
    let loaded = spec.checkpoints.iter().map(|p| load_checkpoint(p).map_err(BenchError::from)).collect::<Result<Vec<_>>>()?;
    (0..spec.sweep_points.len())
        .map(|i| {
            let sc = spec.scenario_at(i);
            loaded
                .iter()
                .find(|c| {
                    let d = c.params.dims;
                    (d.num_antennas, d.num_users, d.num_pilots) == (sc.num_antennas, sc.num_users, sc.num_pilots)
                })
                .cloned()
                .map(Some)
                .ok_or_else(|| {
                    BenchError::Config(format!(
                        "no checkpoint for M={}, K={}, P={} (sweep value {})",
                        sc.num_antennas, sc.num_users, sc.num_pilots, spec.sweep_points[i]
                    ))
                })
        })
        .collect()
}

/// Runs every (point, method, trial) and writes the CSV and its sidecar.
/// Checkpoints are resolved before any trial runs.
pub fn run_experiment(spec: ExperimentSpec) -> Result<RunSummary> {
    let spec = spec.resolve()?;
    let models = load_models(&spec)?;
    let settings = EvalSettings { classic_iters: spec.classic_iters };
    let mut rows = Vec::with_capacity(spec.sweep_points.len() * spec.methods.len() * spec.trials);
    for (i, model) in models.iter().enumerate() {
        let sc = spec.scenario_at(i);
        let model_ref = model.as_ref().map(|c| ModelRef { params: &c.params, pilots: &c.pilots });
        let per_trial: Vec<(u64, Vec<TrialOutcome>)> = (0..spec.trials as u64)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(spec.seed, t);
                Ok((seed, run_trial(&sc, &spec.methods, seed, model_ref, &settings)?))
            })
            .collect::<Result<Vec<_>>>()?;
        log::info!("{} = {}: {} trials done", spec.kind.sweep_param(), spec.sweep_points[i], spec.trials);
        for (mi, &method) in spec.methods.iter().enumerate() {
            for (trial, (seed, outcomes)) in per_trial.iter().enumerate() {
                let o = &outcomes[mi];
                rows.push(ResultRow {
                    method,
                    sweep_param: spec.kind.sweep_param(),
                    sweep_value: spec.sweep_points[i],
                    trial,
                    seed: *seed,
                    nmse_db: o.nmse_db,
                    objective: o.objective,
                    iters: o.iters,
                    wallclock_ms: o.wallclock_ms,
                });
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &rows {
        w.write_record(r.record(spec.record_timing))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Config(e.to_string()))?;
    let sidecar = Sidecar { spec: spec.clone(), rows: rows.len(), crate_version: env!("CARGO_PKG_VERSION").into() };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| BenchError::Config(e.to_string()))?;
    let sidecar_path = spec.sidecar_path();
    write_atomically(&spec.output, &bytes)?;
    write_atomically(&sidecar_path, &json)?;
    Ok(RunSummary { rows, csv: spec.output.clone(), sidecar: sidecar_path })
}

/// FNV-1a over a file's bytes, printed by `gen-data` for quick comparisons.
pub fn file_digest(path: &Path) -> Result<u64> {
    let bytes = fs::read(path).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })?;
    Ok(bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)))
}

/// The manifest of any container file, pretty-printed.
pub fn inspect(path: &Path) -> Result<String> {
    let manifest = Container::read_manifest(path)?;
    serde_json::to_string_pretty(&manifest).map_err(|e| BenchError::Config(e.to_string()))
}
