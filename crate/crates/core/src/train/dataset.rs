use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::TrainConfig;
use crate::channel::{generate_pilots, replicate_columns, stream_rng, Instance, MeasurementSet, ScenarioConfig, Stream};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::linops::{ComplexMatrix, RealMatrix};

pub const DATASET_KIND: &str = "dataset";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub h: ComplexMatrix,
    pub meas: MeasurementSet,
    /// Target SNR the noise variance was calibrated to.
    pub snr_db: f64,
}

/// Samples sharing one pilot matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Scenario the samples were drawn from (`snr_db` is per sample).
    pub scenario: ScenarioConfig,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
    /// `P x K`, shared by every sample.
    pub pilots: ComplexMatrix,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    scenario: ScenarioConfig,
    snr_range_db: (f64, f64),
    seed: u64,
    num_samples: usize,
}

/// Draws `cfg.num_samples` samples with per-sample SNR uniform over
/// `cfg.snr_range_db` and one pilot matrix for the whole set.
pub fn build_dataset(scen: &ScenarioConfig, cfg: &TrainConfig) -> Result<Dataset> {
    cfg.validate()?;
    let base = ScenarioConfig { rsr_db: cfg.rsr_db, seed: cfg.seed, ..scen.clone() };
    base.validate()?;
    let pilots = generate_pilots(&base, &mut stream_rng(cfg.seed, Stream::Pilots, 0))?;
    let (lo, hi) = cfg.snr_range_db;
    let samples = (0..cfg.num_samples as u64)
        .into_par_iter()
        .map(|i| {
            let snr_db = if hi > lo { stream_rng(cfg.seed, Stream::SnrDraw, i).random_range(lo..hi) } else { lo };
            let at = ScenarioConfig { snr_db, ..base.clone() };
            let inst = Instance::draw(&at, cfg.seed, i, Some(&pilots))?;
            Ok(Sample { h: inst.channel.h, meas: inst.meas, snr_db })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { scenario: base, snr_range_db: cfg.snr_range_db, seed: cfg.seed, pilots, samples })
}

fn stack<'a>(items: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    items.flat_map(|s| s.iter().copied()).collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_container(&self) -> Result<Container> {
        let sc = &self.scenario;
        let (n, m, k, p) = (self.len(), sc.num_antennas, sc.num_users, sc.num_pilots);
        let meta = DatasetMeta {
            scenario: sc.clone(),
            snr_range_db: self.snr_range_db,
            seed: self.seed,
            num_samples: n,
        };
        let mut c = Container::new(DATASET_KIND, json!(meta));
        c.push("pilots.re", vec![p, k], self.pilots.re().to_vec())?;
        c.push("pilots.im", vec![p, k], self.pilots.im().to_vec())?;
        let lo: Vec<ComplexMatrix> = self.samples.iter().map(|s| s.meas.lo()).collect();
        c.push("h.re", vec![n, m, k], stack(self.samples.iter().map(|s| s.h.re())))?;
        c.push("h.im", vec![n, m, k], stack(self.samples.iter().map(|s| s.h.im())))?;
        c.push("lo.re", vec![n, m], stack(lo.iter().map(|b| b.re())))?;
        c.push("lo.im", vec![n, m], stack(lo.iter().map(|b| b.im())))?;
        c.push("z", vec![n, m, p], stack(self.samples.iter().map(|s| s.meas.z.data())))?;
        c.push("sigma2", vec![n], self.samples.iter().map(|s| s.meas.sigma2).collect())?;
        c.push("snr_db", vec![n], self.samples.iter().map(|s| s.snr_db).collect())?;
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        if c.kind != DATASET_KIND {
            return Err(Error::Format { path: path.to_path_buf(), reason: format!("expected a dataset, found {:?}", c.kind) });
        }
        let meta: DatasetMeta = serde_json::from_value(c.metadata.clone())
            .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
        let sc = &meta.scenario;
        let (n, m, k, p) = (meta.num_samples, sc.num_antennas, sc.num_users, sc.num_pilots);
        let pilots =
            ComplexMatrix::from_parts(p, k, c.expect("pilots.re", &[p, k])?.to_vec(), c.expect("pilots.im", &[p, k])?.to_vec())?;
        let (h_re, h_im) = (c.expect("h.re", &[n, m, k])?, c.expect("h.im", &[n, m, k])?);
        let (lo_re, lo_im) = (c.expect("lo.re", &[n, m])?, c.expect("lo.im", &[n, m])?);
        let z = c.expect("z", &[n, m, p])?;
        let sigma2 = c.expect("sigma2", &[n])?;
        let snr = c.expect("snr_db", &[n])?;
        let samples = (0..n)
            .map(|i| {
                let hk = i * m * k..(i + 1) * m * k;
                let h = ComplexMatrix::from_parts(m, k, h_re[hk.clone()].to_vec(), h_im[hk].to_vec())?;
                let lo = ComplexMatrix::from_parts(m, 1, lo_re[i * m..(i + 1) * m].to_vec(), lo_im[i * m..(i + 1) * m].to_vec())?;
                let meas = MeasurementSet {
                    s: pilots.clone(),
                    b: replicate_columns(&lo, p),
                    sigma2: sigma2[i],
                    z: RealMatrix::from_vec(m, p, z[i * m * p..(i + 1) * m * p].to_vec())?,
                };
                Ok(Sample { h, meas, snr_db: snr[i] })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scenario: meta.scenario, snr_range_db: meta.snr_range_db, seed: meta.seed, pilots, samples })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?, path)
    }

    /// Samples at `indices`, keeping metadata.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { samples: indices.iter().map(|&i| self.samples[i].clone()).collect(), ..self.header() }
    }

    fn header(&self) -> Dataset {
        Dataset {
            scenario: self.scenario.clone(),
            snr_range_db: self.snr_range_db,
            seed: self.seed,
            pilots: self.pilots.clone(),
            samples: Vec::new(),
        }
    }
}
