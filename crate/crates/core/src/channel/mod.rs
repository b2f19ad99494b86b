//! Channel realizations, pilots, LO reference and magnitude measurements.
//!
//! Signal model per pilot slot `p`: `z_p = |H s_p + b + w_p|` with
//! `w_p ~ CN(0, σ² I)` drawn inside the magnitude. `H` is an `M x K` clustered
//! Saleh-Valenzuela channel built from ULA steering vectors.

mod rng;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{condition_number, ComplexMatrix, RealMatrix};

pub use rng::{mix_seed, stream_rng, Stream};

/// Pilots whose transposed matrix is worse conditioned than this are redrawn.
pub const MAX_PILOT_CONDITION: f64 = 1e3;
const MAX_PILOT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    /// Unit-modulus entries with i.i.d. uniform phases.
    #[default]
    RandomPhase,
    /// First `K` columns of the `P`-point DFT matrix.
    Dft,
}

fn default_spacing() -> f64 {
    0.5
}

fn default_rsr() -> f64 {
    10.0
}

/// Physical and system parameters of one simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_pilots: usize,
    pub num_clusters: usize,
    pub rays_per_cluster: usize,
    #[serde(default = "default_spacing")]
    pub spacing_over_wavelength: f64,
    pub snr_db: f64,
    #[serde(default = "default_rsr")]
    pub rsr_db: f64,
    #[serde(default)]
    pub pilot_kind: PilotKind,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// The reference system: 32 antennas, 4 users, 20 pilots, 4 clusters of
    /// 10 rays, half-wavelength spacing, RSR 10 dB.
    fn default() -> Self {
        Self {
            num_antennas: 32,
            num_users: 4,
            num_pilots: 20,
            num_clusters: 4,
            rays_per_cluster: 10,
            spacing_over_wavelength: 0.5,
            snr_db: 10.0,
            rsr_db: 10.0,
            pilot_kind: PilotKind::RandomPhase,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_antennas", self.num_antennas),
            ("num_users", self.num_users),
            ("num_pilots", self.num_pilots),
            ("num_clusters", self.num_clusters),
            ("rays_per_cluster", self.rays_per_cluster),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.num_pilots < self.num_users {
            return Err(Error::UnderdeterminedPilots {
                pilots: self.num_pilots,
                users: self.num_users,
            });
        }
        if !(self.spacing_over_wavelength > 0.0 && self.spacing_over_wavelength.is_finite()) {
            return Err(Error::InvalidConfig(
                "spacing_over_wavelength must be positive and finite".into(),
            ));
        }
        if !self.snr_db.is_finite() || !self.rsr_db.is_finite() {
            return Err(Error::InvalidConfig("snr_db and rsr_db must be finite".into()));
        }
        Ok(())
    }

    pub fn num_rays(&self) -> usize {
        self.num_clusters * self.rays_per_cluster
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Draws a standard circular complex Gaussian, `E|g|² = 1`.
pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// ULA steering vector: entry `m` is `exp(j 2π (d/λ) m sin θ)`.
pub fn steering_vector(theta: f64, num_antennas: usize, spacing_over_wavelength: f64) -> Result<ComplexMatrix> {
    if !theta.is_finite() {
        return Err(Error::invalid("steering_vector", format!("angle must be finite, got {theta}")));
    }
    if num_antennas == 0 {
        return Err(Error::invalid("steering_vector", "need at least one antenna"));
    }
    let step = 2.0 * PI * spacing_over_wavelength * theta.sin();
    Ok(ComplexMatrix::from_fn(num_antennas, 1, |m, _| {
        Complex64::from_polar(1.0, step * m as f64)
    }))
}

/// One channel draw together with the ray parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `M x K` channel matrix.
    pub h: ComplexMatrix,
    /// Angles of arrival, indexed `[user][cluster][ray]`, in radians.
    pub doas: Vec<Vec<Vec<f64>>>,
    /// Complex ray gains, same indexing as `doas`.
    pub gains: Vec<Vec<Vec<Complex64>>>,
}

/// Rebuilds `H` from ray parameters:
/// `h_k = sqrt(M / N_ray) Σ_{l,c} g_{l,c} a(θ_{l,c})`.
pub fn synthesize_channel(
    doas: &[Vec<Vec<f64>>],
    gains: &[Vec<Vec<Complex64>>],
    num_antennas: usize,
    spacing_over_wavelength: f64,
) -> Result<ComplexMatrix> {
    if doas.len() != gains.len() {
        return Err(Error::invalid("synthesize_channel", "doas and gains disagree on user count"));
    }
    let num_users = doas.len();
    let mut h = ComplexMatrix::zeros(num_antennas, num_users);
    for (k, (user_doas, user_gains)) in doas.iter().zip(gains).enumerate() {
        let num_rays: usize = user_doas.iter().map(Vec::len).sum();
        if num_rays == 0 {
            return Err(Error::invalid("synthesize_channel", format!("user {k} has no rays")));
        }
        let norm = (num_antennas as f64 / num_rays as f64).sqrt();
        for (cluster_doas, cluster_gains) in user_doas.iter().zip(user_gains) {
            if cluster_doas.len() != cluster_gains.len() {
                return Err(Error::invalid("synthesize_channel", "ray count mismatch"));
            }
            for (&theta, &g) in cluster_doas.iter().zip(cluster_gains) {
                let a = steering_vector(theta, num_antennas, spacing_over_wavelength)?;
                for m in 0..num_antennas {
                    let cur = h.get(m, k);
                    h.set(m, k, cur + a.get(m, 0) * g * norm);
                }
            }
        }
    }
    Ok(h)
}

/// Draws a clustered channel: gains i.i.d. `CN(0, 1)`, angles i.i.d. uniform
/// on `(-π/2, π/2)`.
pub fn generate_channel(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<ChannelRealization> {
    cfg.validate()?;
    let half = PI / 2.0;
    let mut doas = Vec::with_capacity(cfg.num_users);
    let mut gains = Vec::with_capacity(cfg.num_users);
    for _ in 0..cfg.num_users {
        let mut user_doas = Vec::with_capacity(cfg.num_clusters);
        let mut user_gains = Vec::with_capacity(cfg.num_clusters);
        for _ in 0..cfg.num_clusters {
            let mut d = Vec::with_capacity(cfg.rays_per_cluster);
            let mut g = Vec::with_capacity(cfg.rays_per_cluster);
            for _ in 0..cfg.rays_per_cluster {
                // Open interval: reject the (measure-zero) endpoint.
                let theta = loop {
                    let t = rng.random_range(-half..half);
                    if t > -half {
                        break t;
                    }
                };
                d.push(theta);
                g.push(complex_gaussian(rng));
            }
            user_doas.push(d);
            user_gains.push(g);
        }
        doas.push(user_doas);
        gains.push(user_gains);
    }
    let h = synthesize_channel(&doas, &gains, cfg.num_antennas, cfg.spacing_over_wavelength)?;
    Ok(ChannelRealization { h, doas, gains })
}

/// `P x K` pilot matrix (row `p` is `s_pᵀ`) with unit-modulus entries.
pub fn generate_pilots(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<ComplexMatrix> {
    let (p, k) = (cfg.num_pilots, cfg.num_users);
    if p < k {
        return Err(Error::UnderdeterminedPilots { pilots: p, users: k });
    }
    match cfg.pilot_kind {
        PilotKind::Dft => Ok(ComplexMatrix::from_fn(p, k, |row, col| {
            Complex64::from_polar(1.0, -2.0 * PI * (row * col) as f64 / p as f64)
        })),
        PilotKind::RandomPhase => {
            for _ in 0..MAX_PILOT_ATTEMPTS {
                let s = ComplexMatrix::from_fn(p, k, |_, _| {
                    Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
                });
                if condition_number(&s.transpose())? <= MAX_PILOT_CONDITION {
                    return Ok(s);
                }
            }
            Err(Error::invalid(
                "generate_pilots",
                format!("no pilot draw with condition number <= {MAX_PILOT_CONDITION}"),
            ))
        }
    }
}

/// LO reference `b` (`M x 1`): constant magnitude `sqrt(RSR · signal_power)`
/// and i.i.d. uniform phases.
pub fn generate_lo(cfg: &ScenarioConfig, signal_power: f64, rng: &mut impl Rng) -> Result<ComplexMatrix> {
    if !(signal_power > 0.0 && signal_power.is_finite()) {
        return Err(Error::invalid("generate_lo", format!("signal power must be positive, got {signal_power}")));
    }
    let magnitude = (db_to_linear(cfg.rsr_db) * signal_power).sqrt();
    Ok(ComplexMatrix::from_fn(cfg.num_antennas, 1, |_, _| {
        Complex64::from_polar(magnitude, rng.random_range(0.0..2.0 * PI))
    }))
}

/// Mean per-entry power of the noiseless field `H Sᵀ`.
pub fn signal_power(h: &ComplexMatrix, s: &ComplexMatrix) -> Result<f64> {
    let y = h.matmul(&s.transpose())?;
    Ok(y.frobenius_norm_sq() / (y.rows() * y.cols()) as f64)
}

/// Noise variance that puts `mean |H s_p|²` at `cfg.snr_db` above the noise.
pub fn snr_calibrate(cfg: &ScenarioConfig, h: &ComplexMatrix, s: &ComplexMatrix) -> Result<f64> {
    let power = signal_power(h, s)?;
    if !(power > 0.0) {
        return Err(Error::ZeroSignalPower);
    }
    Ok(power / db_to_linear(cfg.snr_db))
}

/// Pilots, LO, noise variance and magnitude observations of one channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// `P x K` pilot matrix.
    pub s: ComplexMatrix,
    /// `M x P` LO matrix, every column equal to `b`.
    pub b: ComplexMatrix,
    pub sigma2: f64,
    /// `M x P` magnitudes.
    pub z: RealMatrix,
}

impl MeasurementSet {
    pub fn num_antennas(&self) -> usize {
        self.z.rows()
    }

    pub fn num_pilots(&self) -> usize {
        self.z.cols()
    }

    pub fn num_users(&self) -> usize {
        self.s.cols()
    }

    /// The LO vector `b` (first column of `B`).
    pub fn lo(&self) -> ComplexMatrix {
        self.b.column(0)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, p) = self.z.shape();
        if self.b.shape() != (m, p) {
            return Err(Error::ShapeMismatch { op: "MeasurementSet", left: (m, p), right: self.b.shape() });
        }
        if self.s.rows() != p {
            return Err(Error::ShapeMismatch { op: "MeasurementSet", left: (m, p), right: self.s.shape() });
        }
        if self.s.rows() < self.s.cols() {
            return Err(Error::UnderdeterminedPilots { pilots: self.s.rows(), users: self.s.cols() });
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::invalid("MeasurementSet", "noise variance must be finite and nonnegative"));
        }
        Ok(())
    }

    /// FNV-1a digest over every stored value; used to prove that paired
    /// estimators consumed the same measurements.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |v: f64| {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        self.s.re().iter().chain(self.s.im()).for_each(|&v| eat(v));
        self.b.re().iter().chain(self.b.im()).for_each(|&v| eat(v));
        eat(self.sigma2);
        self.z.data().iter().for_each(|&v| eat(v));
        h
    }
}

/// Replicates an `M x 1` vector across `P` columns.
pub fn replicate_columns(b: &ComplexMatrix, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(b.rows(), cols, |m, _| b.get(m, 0))
}

/// `Z[:, p] = |H s_p + b + w_p|` with `w_p ~ CN(0, σ² I)`.
pub fn measure(
    h: &ComplexMatrix,
    s: &ComplexMatrix,
    b: &ComplexMatrix,
    sigma2: f64,
    rng: &mut impl Rng,
) -> Result<MeasurementSet> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::invalid("measure", format!("noise variance must be nonnegative, got {sigma2}")));
    }
    if b.cols() != 1 || b.rows() != h.rows() {
        return Err(Error::ShapeMismatch { op: "measure", left: h.shape(), right: b.shape() });
    }
    let p = s.rows();
    let big_b = replicate_columns(b, p);
    let field = h.matmul(&s.transpose())?.checked_add(&big_b)?;
    let sd = (sigma2 / 2.0).sqrt();
    let mut z = Vec::with_capacity(field.rows() * p);
    for v in field.iter() {
        let nr: f64 = StandardNormal.sample(rng);
        let ni: f64 = StandardNormal.sample(rng);
        z.push((v + Complex64::new(sd * nr, sd * ni)).norm());
    }
    Ok(MeasurementSet {
        s: s.clone(),
        b: big_b,
        sigma2,
        z: RealMatrix::from_vec(field.rows(), p, z)?,
    })
}

/// A full draw: channel plus its measurements.
#[derive(Debug, Clone)]
pub struct Instance {
    pub channel: ChannelRealization,
    pub meas: MeasurementSet,
}

impl Instance {
    /// Draws instance `index` of the stream family keyed by `seed`.
    ///
    /// Channel, pilots, LO phases and noise come from independent substreams,
    /// so changing `cfg.snr_db` rescales the same noise draw and reuses the
    /// same channel. When `pilots` is given it replaces the pilot draw.
    pub fn draw(cfg: &ScenarioConfig, seed: u64, index: u64, pilots: Option<&ComplexMatrix>) -> Result<Self> {
        cfg.validate()?;
        let channel = generate_channel(cfg, &mut stream_rng(seed, Stream::Channel, index))?;
        let s = match pilots {
            Some(s) => {
                if s.shape() != (cfg.num_pilots, cfg.num_users) {
                    return Err(Error::ShapeMismatch {
                        op: "Instance::draw",
                        left: (cfg.num_pilots, cfg.num_users),
                        right: s.shape(),
                    });
                }
                s.clone()
            }
            None => generate_pilots(cfg, &mut stream_rng(seed, Stream::Pilots, index))?,
        };
        let power = signal_power(&channel.h, &s)?;
        if !(power > 0.0) {
            return Err(Error::ZeroSignalPower);
        }
        let b = generate_lo(cfg, power, &mut stream_rng(seed, Stream::LocalOscillator, index))?;
        let sigma2 = snr_calibrate(cfg, &channel.h, &s)?;
        let meas = measure(&channel.h, &s, &b, sigma2, &mut stream_rng(seed, Stream::Noise, index))?;
        Ok(Self { channel, meas })
    }
}
