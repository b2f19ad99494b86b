use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{mix_seed, Instance, ScenarioConfig};
use crate::classic::{emgs_solve, gs_solve, nmse_db, objective, SolverConfig};
use crate::error::{Error, Result};
use crate::linops::ComplexMatrix;
use crate::urformer::{urformer_forward, ForwardOptions, URformerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gs,
    Emgs,
    Urformer,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gs => "gs",
            Method::Emgs => "emgs",
            Method::Urformer => "urformer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gs" => Some(Method::Gs),
            "emgs" | "em-gs" => Some(Method::Emgs),
            "urformer" => Some(Method::Urformer),
            _ => None,
        }
    }
}

/// A trained model together with the pilots it was trained on.
#[derive(Debug, Clone, Copy)]
pub struct ModelRef<'a> {
    pub params: &'a URformerParams,
    pub pilots: &'a ComplexMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Iterations for GS and EM-GS.
    pub classic_iters: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { classic_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub method: Method,
    pub nmse_db: f64,
    pub objective: f64,
    pub iters: usize,
    /// Digest of the measurement set the method consumed.
    pub digest: u64,
    pub wallclock_ms: f64,
}

/// Per-trial seed: trial `t` of base seed `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    mix_seed(seed, trial)
}

fn check_model(scen: &ScenarioConfig, model: &ModelRef<'_>) -> Result<()> {
    let d = model.params.dims;
    if (d.num_antennas, d.num_users, d.num_pilots) != (scen.num_antennas, scen.num_users, scen.num_pilots) {
        return Err(Error::Incompatible(format!(
            "checkpoint is for M={}, K={}, P={}; scenario has M={}, K={}, P={}",
            d.num_antennas, d.num_users, d.num_pilots, scen.num_antennas, scen.num_users, scen.num_pilots
        )));
    }
    if model.pilots.shape() != (scen.num_pilots, scen.num_users) {
        return Err(Error::Incompatible("stored pilot matrix does not match the scenario".into()));
    }
    Ok(())
}

/// Runs every method on one realization. All methods see the same
/// measurement set; with a model present its stored pilots are used.
pub fn run_trial(
    scen: &ScenarioConfig,
    methods: &[Method],
    seed: u64,
    model: Option<ModelRef<'_>>,
    settings: &EvalSettings,
) -> Result<Vec<TrialOutcome>> {
    if let Some(m) = &model {
        check_model(scen, m)?;
    }
    let inst = Instance::draw(scen, seed, 0, model.map(|m| m.pilots))?;
    let digest = inst.meas.digest();
    let solver = SolverConfig { max_iters: settings.classic_iters, ..SolverConfig::default() };
    methods
        .iter()
        .map(|&method| {
            let t0 = Instant::now();
            let (h_hat, iters) = match method {
                Method::Gs => {
                    let r = gs_solve(&inst.meas, &solver)?;
                    (r.h_hat, r.iters_run)
                }
                Method::Emgs => {
                    let r = emgs_solve(&inst.meas, &solver)?;
                    (r.h_hat, r.iters_run)
                }
                Method::Urformer => {
                    let m = model.ok_or_else(|| Error::Incompatible("urformer requires a checkpoint".into()))?;
                    let r = urformer_forward(&inst.meas, m.params, &ForwardOptions::default())?;
                    (r.h_hat, r.filter_evals)
                }
            };
            let wallclock_ms = t0.elapsed().as_secs_f64() * 1e3;
            Ok(TrialOutcome {
                method,
                nmse_db: nmse_db(&inst.channel.h, &h_hat)?,
                objective: objective(&h_hat, &inst.meas)?,
                iters,
                digest,
                wallclock_ms,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub snr_db: f64,
    pub method: Method,
    /// Mean of the per-trial NMSE in dB.
    pub mean_nmse_db: f64,
    pub trials: usize,
}

/// Mean NMSE per (SNR point, method) over `trials` paired realizations.
pub fn evaluate(
    scen: &ScenarioConfig,
    snr_points_db: &[f64],
    methods: &[Method],
    trials: usize,
    seed: u64,
    model: Option<ModelRef<'_>>,
    settings: &EvalSettings,
) -> Result<Vec<EvalPoint>> {
    if trials == 0 || methods.is_empty() || snr_points_db.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs trials, methods and sweep points".into()));
    }
    if let Some(m) = &model {
        check_model(scen, m)?;
    }
    let mut out = Vec::new();
    for &snr_db in snr_points_db {
        let at = ScenarioConfig { snr_db, ..scen.clone() };
        let rows = (0..trials as u64)
            .into_par_iter()
            .map(|t| run_trial(&at, methods, trial_seed(seed, t), model, settings))
            .collect::<Result<Vec<_>>>()?;
        for (mi, &method) in methods.iter().enumerate() {
            let mean = rows.iter().map(|r| r[mi].nmse_db).sum::<f64>() / trials as f64;
            out.push(EvalPoint { snr_db, method, mean_nmse_db: mean, trials });
        }
    }
    Ok(out)
}
