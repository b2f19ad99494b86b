use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{stream_rng, Stream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct URformerConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_encoders: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    pub filternet_hidden: usize,
    pub share_layer_params: bool,
}

impl Default for URformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 10,
            d_model: 64,
            num_encoders: 3,
            num_heads: 4,
            ffn_hidden: 256,
            filternet_hidden: 16,
            share_layer_params: false,
        }
    }
}

impl URformerConfig {
    /// Config with `ffn_hidden = 4 d_model`.
    pub fn with_dims(num_layers: usize, d_model: usize) -> Self {
        Self { num_layers, d_model, ffn_hidden: 4 * d_model, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("ffn_hidden", self.ffn_hidden),
            ("filternet_hidden", self.filternet_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        Ok(())
    }

    /// Number of distinct parameter sets.
    pub fn num_param_layers(&self) -> usize {
        if self.share_layer_params {
            1
        } else {
            self.num_layers
        }
    }
}

/// Problem dimensions a parameter set is tied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_pilots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    /// `N(0, 1/fan_in)`.
    Scaled { fan_in: usize },
    Normal { std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
}

impl FilterIdx {
    pub fn all(&self) -> [usize; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderIdx {
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
    pub ffn_w1: usize,
    pub ffn_b1: usize,
    pub ffn_w2: usize,
    pub ffn_b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormerIdx {
    pub w_proj: usize,
    pub p_pos: usize,
    pub encoders: Vec<EncoderIdx>,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerIdx {
    pub filter: FilterIdx,
    pub gate: usize,
    pub former: FormerIdx,
}

impl LayerIdx {
    /// Every tensor index, grouped as (filter, gate, former).
    pub fn groups(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let f = &self.former;
        let mut former = vec![f.w_proj, f.p_pos];
        for e in &f.encoders {
            former.extend([
                e.ln1_gamma, e.ln1_beta, e.wq, e.wk, e.wv, e.wo, e.ln2_gamma, e.ln2_beta, e.ffn_w1, e.ffn_b1,
                e.ffn_w2, e.ffn_b2,
            ]);
        }
        former.extend([f.out_w, f.out_b]);
        (self.filter.all().to_vec(), vec![self.gate], former)
    }
}

/// Canonical tensor list and per-layer index tables for a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    /// One entry per unrolled layer; shared configs repeat the same indices.
    pub layers: Vec<LayerIdx>,
}

impl Layout {
    pub fn new(cfg: &URformerConfig, dims: &ModelDims) -> Result<Self> {
        cfg.validate()?;
        if dims.num_users == 0 || dims.num_antennas == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if dims.num_pilots < dims.num_users {
            return Err(Error::UnderdeterminedPilots { pilots: dims.num_pilots, users: dims.num_users });
        }
        let mut specs = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, init: Init| {
            specs.push(TensorSpec { name, rows, cols, init });
            specs.len() - 1
        };
        let (d, hf, ff) = (cfg.d_model, cfg.filternet_hidden, cfg.ffn_hidden);
        let two_m = 2 * dims.num_antennas;
        let mut distinct = Vec::new();
        for t in 0..cfg.num_param_layers() {
            let p = format!("layer{t}");
            let filter = FilterIdx {
                w1: add(format!("{p}.filternet.w1"), 1, hf, Init::Scaled { fan_in: 1 }),
                b1: add(format!("{p}.filternet.b1"), 1, hf, Init::Zeros),
                w2: add(format!("{p}.filternet.w2"), hf, hf, Init::Scaled { fan_in: hf }),
                b2: add(format!("{p}.filternet.b2"), 1, hf, Init::Zeros),
                w3: add(format!("{p}.filternet.w3"), hf, 1, Init::Scaled { fan_in: hf }),
                b3: add(format!("{p}.filternet.b3"), 1, 1, Init::Zeros),
            };
            let gate = add(format!("{p}.gate"), 1, 1, Init::Zeros);
            let w_proj = add(format!("{p}.former.w_proj"), two_m, d, Init::Scaled { fan_in: two_m });
            let p_pos = add(format!("{p}.former.p_pos"), dims.num_users, d, Init::Normal { std: 0.02 });
            let encoders = (0..cfg.num_encoders)
                .map(|l| {
                    let e = format!("{p}.former.enc{l}");
                    EncoderIdx {
                        ln1_gamma: add(format!("{e}.ln1.gamma"), 1, d, Init::Ones),
                        ln1_beta: add(format!("{e}.ln1.beta"), 1, d, Init::Zeros),
                        wq: add(format!("{e}.attn.wq"), d, d, Init::Scaled { fan_in: d }),
                        wk: add(format!("{e}.attn.wk"), d, d, Init::Scaled { fan_in: d }),
                        wv: add(format!("{e}.attn.wv"), d, d, Init::Scaled { fan_in: d }),
                        wo: add(format!("{e}.attn.wo"), d, d, Init::Scaled { fan_in: d }),
                        ln2_gamma: add(format!("{e}.ln2.gamma"), 1, d, Init::Ones),
                        ln2_beta: add(format!("{e}.ln2.beta"), 1, d, Init::Zeros),
                        ffn_w1: add(format!("{e}.ffn.w1"), d, ff, Init::Scaled { fan_in: d }),
                        ffn_b1: add(format!("{e}.ffn.b1"), 1, ff, Init::Zeros),
                        ffn_w2: add(format!("{e}.ffn.w2"), ff, d, Init::Scaled { fan_in: ff }),
                        ffn_b2: add(format!("{e}.ffn.b2"), 1, d, Init::Zeros),
                    }
                })
                .collect();
            let out_w = add(format!("{p}.former.out.w"), d, two_m, Init::Zeros);
            let out_b = add(format!("{p}.former.out.b"), 1, two_m, Init::Zeros);
            distinct.push(LayerIdx { filter, gate, former: FormerIdx { w_proj, p_pos, encoders, out_w, out_b } });
        }
        let layers = (0..cfg.num_layers).map(|t| distinct[t.min(distinct.len() - 1)].clone()).collect();
        Ok(Self { specs, layers })
    }

    pub fn num_scalars(&self) -> usize {
        self.specs.iter().map(|s| s.rows * s.cols).sum()
    }
}

/// All learnable tensors of one model, in [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct URformerParams {
    pub config: URformerConfig,
    pub dims: ModelDims,
    pub layout: Layout,
    pub values: Vec<Vec<f64>>,
}

impl URformerParams {
    /// Variance-scaled random init; gates at 0 and the Former output
    /// projection at zero, so a fresh model is a plain gated EM-GS.
    pub fn init(config: &URformerConfig, dims: ModelDims, seed: u64) -> Result<Self> {
        let layout = Layout::new(config, &dims)?;
        let mut rng = stream_rng(seed, Stream::ParamInit, 0);
        let values = layout
            .specs
            .iter()
            .map(|s| {
                let n = s.rows * s.cols;
                match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Scaled { fan_in } => {
                        let sd = (1.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
                    }
                    Init::Normal { std } => (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
                }
            })
            .collect();
        Ok(Self { config: config.clone(), dims, layout, values })
    }

    pub fn from_values(config: &URformerConfig, dims: ModelDims, values: Vec<Vec<f64>>) -> Result<Self> {
        let layout = Layout::new(config, &dims)?;
        if values.len() != layout.specs.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors, got {}",
                layout.specs.len(),
                values.len()
            )));
        }
        for (spec, v) in layout.specs.iter().zip(&values) {
            if v.len() != spec.rows * spec.cols {
                return Err(Error::Incompatible(format!(
                    "tensor {} has {} values, expected {}x{}",
                    spec.name,
                    v.len(),
                    spec.rows,
                    spec.cols
                )));
            }
        }
        Ok(Self { config: config.clone(), dims, layout, values })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.specs.iter().position(|s| s.name == name)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// Gate values `α_t = sigmoid(g_t)` per unrolled layer.
    pub fn gates(&self) -> Vec<f64> {
        self.layout.layers.iter().map(|l| crate::diffengine::kernels::sigmoid(self.values[l.gate][0])).collect()
    }

    pub fn set_gate_logits(&mut self, logit: f64) {
        let idx: Vec<usize> = self.layout.layers.iter().map(|l| l.gate).collect();
        for i in idx {
            self.values[i][0] = logit;
        }
    }

    /// Copies one set of FilterNet weights into every layer.
    pub fn set_filternets(&mut self, weights: &[Vec<f64>; 6]) -> Result<()> {
        let idx: Vec<FilterIdx> = self.layout.layers.iter().map(|l| l.filter).collect();
        for f in idx {
            for (slot, w) in f.all().into_iter().zip(weights) {
                if self.values[slot].len() != w.len() {
                    return Err(Error::Incompatible("FilterNet width mismatch".into()));
                }
                self.values[slot].clone_from(w);
            }
        }
        Ok(())
    }

    /// Zeroes every Former output projection.
    pub fn zero_former_outputs(&mut self) {
        let idx: Vec<(usize, usize)> = self.layout.layers.iter().map(|l| (l.former.out_w, l.former.out_b)).collect();
        for (w, b) in idx {
            self.values[w].fill(0.0);
            self.values[b].fill(0.0);
        }
    }
}
