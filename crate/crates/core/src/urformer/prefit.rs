//! Supervised fit of a FilterNet to the Bessel ratio, used as a warm start.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{stream_rng, Stream};
use crate::diffengine::{Adam, Graph, Var};
use crate::error::Result;
use crate::linops::bessel::ratio_unchecked;

/// Fitted weights `(w1, b1, w2, b2, w3, b3)` and the achieved error.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFit {
    pub weights: [Vec<f64>; 6],
    /// `max |FilterNet(κ) - R(κ)|` on a dense grid over `κ ∈ [0, 100]`.
    pub max_abs_dev: f64,
}

const KAPPA_MAX_FIT: f64 = 1e5;
const GRID: usize = 256;

fn mlp(g: &mut Graph, w: &[Var], x: Var) -> Result<Var> {
    let h = g.matmul(x, w[0])?;
    let h = g.add_row(h, w[1])?;
    let h = g.gelu(h);
    let h = g.matmul(h, w[2])?;
    let h = g.add_row(h, w[3])?;
    let h = g.gelu(h);
    let o = g.matmul(h, w[4])?;
    let o = g.add_row(o, w[5])?;
    Ok(g.sigmoid(o))
}

fn shapes(hidden: usize) -> [(usize, usize); 6] {
    [(1, hidden), (1, hidden), (hidden, hidden), (1, hidden), (hidden, 1), (1, 1)]
}

fn eval(weights: &[Vec<f64>; 6], hidden: usize, kappas: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let w: Vec<Var> = shapes(hidden)
        .iter()
        .zip(weights)
        .map(|(&(r, c), v)| g.constant(r, c, v.clone()))
        .collect::<Result<_>>()?;
    let x = g.constant(kappas.len(), 1, kappas.iter().map(|k| k.ln_1p()).collect())?;
    let out = mlp(&mut g, &w, x)?;
    Ok(g.value(out).to_vec())
}

/// Fits a `1 -> hidden -> hidden -> 1` FilterNet on `log1p κ` features to
/// `I₁(κ)/I₀(κ)` over `κ ∈ [0, 1e5]` by full-batch Adam.
pub fn prefit_filternet(hidden: usize, steps: usize, seed: u64) -> Result<FilterFit> {
    let mut rng = stream_rng(seed, Stream::ParamInit, 1);
    let mut weights: [Vec<f64>; 6] = shapes(hidden).map(|(r, c)| vec![0.0; r * c]);
    for (i, (r, c)) in shapes(hidden).into_iter().enumerate() {
        if i % 2 == 0 {
            let sd = (1.0 / r as f64).sqrt();
            weights[i] = (0..r * c).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        }
    }
    let u_max = KAPPA_MAX_FIT.ln_1p();
    let features: Vec<f64> = (0..GRID).map(|i| u_max * i as f64 / (GRID - 1) as f64).collect();
    let targets: Vec<f64> = features.iter().map(|u| ratio_unchecked(u.exp_m1())).collect();
    let mut adam = Adam::new(&weights.iter().map(Vec::len).collect::<Vec<_>>());
    let (lr_hi, lr_lo) = (1e-2, 1e-4);
    for step in 0..steps {
        let mut g = Graph::new();
        let w: Vec<Var> = shapes(hidden)
            .iter()
            .zip(&weights)
            .map(|(&(r, c), v)| g.parameter(r, c, v.clone()))
            .collect::<Result<_>>()?;
        let x = g.constant(GRID, 1, features.clone())?;
        let t = g.constant(GRID, 1, targets.clone())?;
        let out = mlp(&mut g, &w, x)?;
        let diff = g.sub(out, t)?;
        let sq = g.square(diff);
        let loss = g.mean(sq);
        let grads = g.backward(loss)?;
        let gv: Vec<Vec<f64>> = w.iter().zip(&weights).map(|(&v, p)| grads.get_or_zeros(v, p.len())).collect();
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos());
        adam.step(&mut weights, &gv, lr_lo + (lr_hi - lr_lo) * cos);
    }
    let dense: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.05).collect();
    let fitted = eval(&weights, hidden, &dense)?;
    let max_abs_dev = dense
        .iter()
        .zip(&fitted)
        .map(|(k, f)| (f - ratio_unchecked(*k)).abs())
        .fold(0.0, f64::max);
    Ok(FilterFit { weights, max_abs_dev })
}
