//! GS and EM-GS iterations for biased phase retrieval, the least-squares
//! magnitude objective and the NMSE metric.
//!
//! One iteration, with `B` the replicated LO and `(Sᵀ)⁺` precomputed:
//!
//! ```text
//! Y     = Ĥ Sᵀ + B
//! Y_rec = Z ∘ exp(i∠Y)              (GS)
//! Y_rec = Z ∘ exp(i∠Y) ∘ R(κ),  κ = 2 Z ∘ |Y| / σ²   (EM-GS)
//! Ĥ     = (Y_rec - B)(Sᵀ)⁺
//! ```

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{stream_rng, MeasurementSet, Stream};
use crate::error::{Error, Result};
use crate::linops::{bessel_ratio, phase_project, pseudo_inverse, ComplexMatrix, RealMatrix, Svd};

/// Reported NMSE for an exact estimate, in dB.
pub const NMSE_FLOOR_DB: f64 = -100.0;

/// Starting point `Ĥ⁽⁰⁾`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// `Ĥ⁽⁰⁾ = 0`: the first iteration takes its phases from the LO alone.
    #[default]
    Zeros,
    /// i.i.d. `CN(0, scale²)` entries from the solver-init stream of `seed`.
    RandomGaussian { scale: f64, seed: u64 },
    Provided(ComplexMatrix),
}

fn default_iters() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub init: InitPolicy,
    /// Keep every iterate and the objective after every update.
    #[serde(default)]
    pub record_trajectory: bool,
    /// Stop once `‖Ĥ⁽ᵗ⁾ - Ĥ⁽ᵗ⁻¹⁾‖_F ≤ tol ‖Ĥ⁽ᵗ⁻¹⁾‖_F`. Off by default.
    #[serde(default)]
    pub relative_tolerance: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: default_iters(),
            init: InitPolicy::Zeros,
            record_trajectory: false,
            relative_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub h_hat: ComplexMatrix,
    /// Objective at `Ĥ⁽⁰⁾`.
    pub initial_objective: f64,
    /// Objective after each update (only when the trajectory is recorded).
    pub objective_trace: Vec<f64>,
    /// `Ĥ⁽¹⁾ … Ĥ⁽ᵗ⁾` (only when the trajectory is recorded).
    pub iterates: Vec<ComplexMatrix>,
    pub iters_run: usize,
}

/// How the magnitude-phase reconstruction is formed each iteration.
#[derive(Clone, Copy)]
pub enum Reconstruction {
    /// `Z ∘ exp(i∠Y)`.
    Direct,
    /// `Z ∘ exp(i∠Y) ∘ w(κ)` with an entrywise weight applied to `κ`.
    Weighted(fn(f64) -> f64),
}

fn bessel_weight(kappa: f64) -> f64 {
    crate::linops::bessel::ratio_unchecked(kappa)
}

/// Precomputed per-measurement quantities shared by every iteration.
pub struct Prepared<'a> {
    pub meas: &'a MeasurementSet,
    pub s_t: ComplexMatrix,
    pub s_t_pinv: ComplexMatrix,
}

impl<'a> Prepared<'a> {
    pub fn new(meas: &'a MeasurementSet) -> Result<Self> {
        meas.validate()?;
        let s_t = meas.s.transpose();
        let svd = Svd::new(&s_t)?;
        let rank = svd.rank();
        if rank < s_t.rows() {
            return Err(Error::RankDeficient { rank, required: s_t.rows() });
        }
        let s_t_pinv = pseudo_inverse(&s_t)?;
        Ok(Self { meas, s_t, s_t_pinv })
    }

    /// `Y = Ĥ Sᵀ + B`.
    pub fn field(&self, h: &ComplexMatrix) -> Result<ComplexMatrix> {
        h.matmul(&self.s_t)?.checked_add(&self.meas.b)
    }

    /// `κ = 2 Z ∘ |Y| / σ²`.
    pub fn kappa(&self, y: &ComplexMatrix) -> Result<RealMatrix> {
        if !(self.meas.sigma2 > 0.0) {
            return Err(Error::ZeroNoiseVariance);
        }
        let scale = 2.0 / self.meas.sigma2;
        Ok(self.meas.z.hadamard(&y.magnitude())?.map(|v| v * scale))
    }

    /// `(Y_rec - B)(Sᵀ)⁺`.
    pub fn linear_estimate(&self, y_rec: &ComplexMatrix) -> Result<ComplexMatrix> {
        y_rec.checked_sub(&self.meas.b)?.matmul(&self.s_t_pinv)
    }

    pub fn step(&self, h: &ComplexMatrix, recon: Reconstruction) -> Result<ComplexMatrix> {
        let y = self.field(h)?;
        let direct = phase_project(&self.meas.z, &y)?;
        let y_rec = match recon {
            Reconstruction::Direct => direct,
            Reconstruction::Weighted(w) => direct.scale_entries(&self.kappa(&y)?.map(w))?,
        };
        self.linear_estimate(&y_rec)
    }
}

fn initial_estimate(meas: &MeasurementSet, init: &InitPolicy) -> Result<ComplexMatrix> {
    let (m, k) = (meas.num_antennas(), meas.num_users());
    match init {
        InitPolicy::Zeros => Ok(ComplexMatrix::zeros(m, k)),
        InitPolicy::RandomGaussian { scale, seed } => {
            let mut rng = stream_rng(*seed, Stream::SolverInit, 0);
            let sd = scale * std::f64::consts::FRAC_1_SQRT_2;
            Ok(ComplexMatrix::from_fn(m, k, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                num_complex::Complex64::new(sd * re, sd * im)
            }))
        }
        InitPolicy::Provided(h0) => {
            if h0.shape() != (m, k) {
                return Err(Error::ShapeMismatch { op: "initial estimate", left: (m, k), right: h0.shape() });
            }
            Ok(h0.clone())
        }
    }
}

/// Runs `cfg.max_iters` iterations with the given reconstruction rule.
pub fn solve(meas: &MeasurementSet, cfg: &SolverConfig, recon: Reconstruction) -> Result<SolveResult> {
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    if matches!(recon, Reconstruction::Weighted(_)) && !(meas.sigma2 > 0.0) {
        return Err(Error::ZeroNoiseVariance);
    }
    let prep = Prepared::new(meas)?;
    let mut h = initial_estimate(meas, &cfg.init)?;
    let initial_objective = objective(&h, meas)?;
    let mut objective_trace = Vec::new();
    let mut iterates = Vec::new();
    let mut iters_run = 0;
    for t in 1..=cfg.max_iters {
        let next = prep.step(&h, recon)?;
        if !next.is_finite() {
            return Err(Error::Divergence { iteration: t });
        }
        iters_run = t;
        let converged = cfg.relative_tolerance.is_some_and(|tol| {
            let delta = next.checked_sub(&h).map(|d| d.frobenius_norm_sq()).unwrap_or(f64::INFINITY);
            delta.sqrt() <= tol * h.frobenius_norm_sq().sqrt()
        });
        h = next;
        if cfg.record_trajectory {
            objective_trace.push(objective(&h, meas)?);
            iterates.push(h.clone());
        }
        if converged {
            break;
        }
    }
    Ok(SolveResult { h_hat: h, initial_objective, objective_trace, iterates, iters_run })
}

/// Gerchberg-Saxton: phase projection with unit weights.
pub fn gs_solve(meas: &MeasurementSet, cfg: &SolverConfig) -> Result<SolveResult> {
    solve(meas, cfg, Reconstruction::Direct)
}

/// EM-GS: phase projection weighted by `R(κ) = I₁(κ)/I₀(κ)`. Needs `σ² > 0`.
pub fn emgs_solve(meas: &MeasurementSet, cfg: &SolverConfig) -> Result<SolveResult> {
    solve(meas, cfg, Reconstruction::Weighted(bessel_weight))
}

/// `(1/MP) Σ_p ‖z_p - |Ĥ s_p + b|‖²`.
pub fn objective(h_hat: &ComplexMatrix, meas: &MeasurementSet) -> Result<f64> {
    let y = h_hat.matmul(&meas.s.transpose())?.checked_add(&meas.b)?;
    let mag = y.magnitude();
    if mag.shape() != meas.z.shape() {
        return Err(Error::ShapeMismatch { op: "objective", left: mag.shape(), right: meas.z.shape() });
    }
    let sum: f64 = mag.data().iter().zip(meas.z.data()).map(|(a, z)| (z - a) * (z - a)).sum();
    Ok(sum / mag.data().len() as f64)
}

/// `‖H - Ĥ‖_F² / ‖H‖_F²`.
pub fn nmse(h_true: &ComplexMatrix, h_hat: &ComplexMatrix) -> Result<f64> {
    let reference = h_true.frobenius_norm_sq();
    if !(reference > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(h_true.checked_sub(h_hat)?.frobenius_norm_sq() / reference)
}

/// NMSE in dB, clamped below at `floor_db`.
pub fn nmse_db_with_floor(h_true: &ComplexMatrix, h_hat: &ComplexMatrix, floor_db: f64) -> Result<f64> {
    let lin = nmse(h_true, h_hat)?;
    Ok(if lin > 0.0 { (10.0 * lin.log10()).max(floor_db) } else { floor_db })
}

pub fn nmse_db(h_true: &ComplexMatrix, h_hat: &ComplexMatrix) -> Result<f64> {
    nmse_db_with_floor(h_true, h_hat, NMSE_FLOOR_DB)
}

/// `R(κ)` applied entrywise; exposed for callers that validate `κ` first.
pub fn bessel_filter(kappa: &RealMatrix) -> Result<RealMatrix> {
    let mut out = Vec::with_capacity(kappa.data().len());
    for &k in kappa.data() {
        out.push(bessel_ratio(k)?);
    }
    RealMatrix::from_vec(kappa.rows(), kappa.cols(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Instance, ScenarioConfig};
    use num_complex::Complex64;

    fn cfg(snr_db: f64) -> ScenarioConfig {
        ScenarioConfig { num_antennas: 8, num_users: 2, num_pilots: 6, snr_db, ..ScenarioConfig::default() }
    }

    fn noiseless(seed: u64) -> (ComplexMatrix, MeasurementSet) {
        let inst = Instance::draw(&cfg(10.0), seed, 0, None).unwrap();
        let mut meas = inst.meas;
        let y = inst.channel.h.matmul(&meas.s.transpose()).unwrap().checked_add(&meas.b).unwrap();
        meas.z = y.magnitude();
        meas.sigma2 = 0.0;
        (inst.channel.h, meas)
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let (h, meas) = noiseless(1);
        let one = SolverConfig { max_iters: 1, init: InitPolicy::Provided(h.clone()), ..Default::default() };
        let res = gs_solve(&meas, &one).unwrap();
        assert!(res.h_hat.max_rel_diff(&h) < 1e-10);
    }

    #[test]
    fn zero_channel_stays_zero() {
        let (_, mut meas) = noiseless(2);
        meas.z = meas.b.magnitude();
        let res = gs_solve(&meas, &SolverConfig::default()).unwrap();
        assert!(res.h_hat.frobenius_norm_sq().sqrt() < 1e-10);
    }

    #[test]
    fn emgs_requires_noise() {
        let (_, meas) = noiseless(3);
        assert!(matches!(emgs_solve(&meas, &SolverConfig::default()), Err(Error::ZeroNoiseVariance)));
    }

    #[test]
    fn kappa_entry() {
        let (_, mut meas) = noiseless(3);
        meas.sigma2 = 4.0;
        meas.z = RealMatrix::filled(8, 6, 2.0);
        let prep = Prepared::new(&meas).unwrap();
        let y = ComplexMatrix::from_fn(8, 6, |_, _| Complex64::new(0.0, 3.0));
        assert!((prep.kappa(&y).unwrap().get(0, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn unit_weight_matches_gs_step_by_step() {
        let inst = Instance::draw(&cfg(5.0), 4, 0, None).unwrap();
        let c = SolverConfig { max_iters: 20, record_trajectory: true, ..Default::default() };
        let gs = gs_solve(&inst.meas, &c).unwrap();
        let unit = solve(&inst.meas, &c, Reconstruction::Weighted(|_| 1.0)).unwrap();
        for (a, b) in gs.iterates.iter().zip(&unit.iterates) {
            assert!(a.max_rel_diff(b) <= 1e-12);
        }
        assert_eq!(gs.objective_trace.len(), gs.iters_run);
    }

    #[test]
    fn objective_and_nmse_values() {
        let (h, meas) = noiseless(5);
        assert!(objective(&h, &meas).unwrap() < 1e-24);
        let mut zero_meas = meas.clone();
        zero_meas.b = ComplexMatrix::zeros(8, 6);
        zero_meas.z = RealMatrix::zeros(8, 6);
        assert_eq!(objective(&ComplexMatrix::zeros(8, 2), &zero_meas).unwrap(), 0.0);

        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert_eq!(nmse_db(&h, &h).unwrap(), NMSE_FLOOR_DB);
        assert!((nmse(&h, &ComplexMatrix::zeros(8, 2)).unwrap() - 1.0).abs() < 1e-15);
        let shrunk = h.scale(Complex64::new(0.9, 0.0));
        assert!((nmse(&h, &shrunk).unwrap() - 0.01).abs() < 1e-12);
        assert!((nmse_db(&h, &shrunk).unwrap() + 20.0).abs() < 1e-9);
        assert!(matches!(nmse(&ComplexMatrix::zeros(2, 2), &ComplexMatrix::zeros(2, 2)), Err(Error::ZeroReference)));
    }

    #[test]
    fn objective_matches_naive_loop() {
        let inst = Instance::draw(&cfg(3.0), 6, 0, None).unwrap();
        let meas = &inst.meas;
        let h = inst.channel.h.scale(Complex64::new(0.7, 0.2));
        let mut acc = 0.0;
        for p in 0..6 {
            for m in 0..8 {
                let mut y = meas.b.get(m, p);
                for k in 0..2 {
                    y += h.get(m, k) * meas.s.get(p, k);
                }
                acc += (meas.z.get(m, p) - y.norm()).powi(2);
            }
        }
        assert!((objective(&h, meas).unwrap() - acc / 48.0).abs() < 1e-12);
    }

    #[test]
    fn tolerance_stops_early_and_solves_are_deterministic() {
        let inst = Instance::draw(&cfg(20.0), 7, 0, None).unwrap();
        let c = SolverConfig { max_iters: 5000, relative_tolerance: Some(1e-8), ..Default::default() };
        let a = gs_solve(&inst.meas, &c).unwrap();
        assert!(a.iters_run < 5000);
        let b = gs_solve(&inst.meas, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_init_is_seeded() {
        let inst = Instance::draw(&cfg(20.0), 8, 0, None).unwrap();
        let c = SolverConfig {
            max_iters: 3,
            init: InitPolicy::RandomGaussian { scale: 1.0, seed: 4 },
            ..Default::default()
        };
        assert_eq!(emgs_solve(&inst.meas, &c).unwrap(), emgs_solve(&inst.meas, &c).unwrap());
    }
}
