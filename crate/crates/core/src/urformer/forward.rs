use serde::{Deserialize, Serialize};

use super::params::{FilterIdx, FormerIdx, LayerIdx, URformerParams};
use crate::channel::MeasurementSet;
use crate::diffengine::{Graph, Var};
use crate::error::{Error, Result};
use crate::linops::{pseudo_inverse, ComplexMatrix, RealMatrix, Svd};

/// What supplies `R` in the filtered reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    #[default]
    Learned,
    /// The exact `I₁/I₀` ratio in place of FilterNet.
    ExactBessel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum GateMode {
    #[default]
    Learned,
    /// Overrides every `α_t`.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub filter: FilterMode,
    pub gate: GateMode,
    /// When false the residual correction is skipped (`Ĥ = H_linear`).
    pub former: bool,
    pub record_iterates: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { filter: FilterMode::Learned, gate: GateMode::Learned, former: true, record_iterates: false }
    }
}

/// Pilot matrix with its transpose and pseudo-inverse, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Pilots {
    pub s: ComplexMatrix,
    pub s_t: ComplexMatrix,
    pub s_t_pinv: ComplexMatrix,
}

impl Pilots {
    pub fn new(s: &ComplexMatrix) -> Result<Self> {
        if s.rows() < s.cols() {
            return Err(Error::UnderdeterminedPilots { pilots: s.rows(), users: s.cols() });
        }
        let s_t = s.transpose();
        let rank = Svd::new(&s_t)?.rank();
        if rank < s_t.rows() {
            return Err(Error::RankDeficient { rank, required: s_t.rows() });
        }
        let s_t_pinv = pseudo_inverse(&s_t)?;
        Ok(Self { s: s.clone(), s_t, s_t_pinv })
    }
}

/// Graph handles produced by [`build_forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub h: (Var, Var),
    pub iterates: Vec<(Var, Var)>,
    /// Number of gated-filter evaluations performed.
    pub filter_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub h_hat: ComplexMatrix,
    pub iterates: Vec<ComplexMatrix>,
    pub filter_evals: usize,
}

/// Per-sample constants placed in the graph.
struct Consts {
    s_t: (Var, Var),
    pinv: (Var, Var),
    b: (Var, Var),
    z: Var,
    kappa_scale: Var,
    token_scale: f64,
    m: usize,
    k: usize,
}

fn cconst(g: &mut Graph, m: &ComplexMatrix) -> Result<(Var, Var)> {
    let (r, c) = m.shape();
    Ok((g.constant(r, c, m.re().to_vec())?, g.constant(r, c, m.im().to_vec())?))
}

fn cmatmul(g: &mut Graph, a: (Var, Var), b: (Var, Var)) -> Result<(Var, Var)> {
    let rr = g.matmul(a.0, b.0)?;
    let ii = g.matmul(a.1, b.1)?;
    let ri = g.matmul(a.0, b.1)?;
    let ir = g.matmul(a.1, b.0)?;
    Ok((g.sub(rr, ii)?, g.add(ri, ir)?))
}

fn cadd(g: &mut Graph, a: (Var, Var), b: (Var, Var)) -> Result<(Var, Var)> {
    Ok((g.add(a.0, b.0)?, g.add(a.1, b.1)?))
}

fn csub(g: &mut Graph, a: (Var, Var), b: (Var, Var)) -> Result<(Var, Var)> {
    Ok((g.sub(a.0, b.0)?, g.sub(a.1, b.1)?))
}

/// Reads a complex pair back out of the graph.
pub(crate) fn to_complex(g: &Graph, v: (Var, Var)) -> ComplexMatrix {
    let s = g.shape(v.0);
    ComplexMatrix::from_parts(s.rows, s.cols, g.value(v.0).to_vec(), g.value(v.1).to_vec())
        .expect("graph pair shapes agree")
}

/// Places every parameter tensor in the graph, as trainable leaves or constants.
pub(crate) fn bind(g: &mut Graph, params: &URformerParams, trainable: bool) -> Result<Vec<Var>> {
    params
        .layout
        .specs
        .iter()
        .zip(&params.values)
        .map(|(s, v)| {
            if trainable {
                g.parameter(s.rows, s.cols, v.clone())
            } else {
                g.constant(s.rows, s.cols, v.clone())
            }
        })
        .collect()
}

fn rms(z: &RealMatrix) -> f64 {
    let n = z.data().len().max(1) as f64;
    (z.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt()
}

fn consts(g: &mut Graph, pilots: &Pilots, meas: &MeasurementSet, need_kappa: bool) -> Result<Consts> {
    meas.validate()?;
    if meas.s.shape() != pilots.s.shape() {
        return Err(Error::ShapeMismatch { op: "urformer pilots", left: pilots.s.shape(), right: meas.s.shape() });
    }
    if need_kappa && !(meas.sigma2 > 0.0) {
        return Err(Error::ZeroNoiseVariance);
    }
    let (m, p) = meas.z.shape();
    let scale = if meas.sigma2 > 0.0 { 2.0 / meas.sigma2 } else { 0.0 };
    let token_scale = rms(&meas.z);
    if !(token_scale > 0.0) {
        return Err(Error::invalid("urformer", "all-zero measurements"));
    }
    Ok(Consts {
        s_t: cconst(g, &pilots.s_t)?,
        pinv: cconst(g, &pilots.s_t_pinv)?,
        b: cconst(g, &meas.b)?,
        z: g.constant(m, p, meas.z.data().to_vec())?,
        kappa_scale: g.constant(m, p, meas.z.data().iter().map(|z| z * scale).collect())?,
        token_scale,
        m,
        k: meas.num_users(),
    })
}

/// Entrywise `sigmoid(MLP(x))` over an `n x 1` feature column.
fn filternet(g: &mut Graph, vars: &[Var], f: &FilterIdx, feature: Var) -> Result<Var> {
    let h = g.matmul(feature, vars[f.w1])?;
    let h = g.add_row(h, vars[f.b1])?;
    let h = g.gelu(h);
    let h = g.matmul(h, vars[f.w2])?;
    let h = g.add_row(h, vars[f.b2])?;
    let h = g.gelu(h);
    let o = g.matmul(h, vars[f.w3])?;
    let o = g.add_row(o, vars[f.b3])?;
    Ok(g.sigmoid(o))
}

fn filter_weights(g: &mut Graph, vars: &[Var], f: &FilterIdx, kappa: Var, mode: FilterMode) -> Result<Var> {
    match mode {
        FilterMode::ExactBessel => g.bessel_ratio(kappa),
        FilterMode::Learned => {
            let s = g.shape(kappa);
            let feature = g.log1p(kappa);
            let col = g.reshape(feature, s.len(), 1)?;
            let r = filternet(g, vars, f, col)?;
            g.reshape(r, s.rows, s.cols)
        }
    }
}

fn gated_filter(
    g: &mut Graph,
    vars: &[Var],
    idx: &LayerIdx,
    c: &Consts,
    h: (Var, Var),
    opts: &ForwardOptions,
) -> Result<(Var, Var)> {
    let hs = cmatmul(g, h, c.s_t)?;
    let y = cadd(g, hs, c.b)?;
    let direct = g.phase_apply(c.z, y.0, y.1)?;
    let alpha = match opts.gate {
        GateMode::Fixed(a) => g.scalar_constant(a),
        GateMode::Learned => g.sigmoid(vars[idx.gate]),
    };
    let mag = g.magnitude(y.0, y.1)?;
    let kappa = g.hadamard(mag, c.kappa_scale)?;
    let r = filter_weights(g, vars, &idx.filter, kappa, opts.filter)?;
    let filtered = (g.hadamard(r, direct.0)?, g.hadamard(r, direct.1)?);
    let one_minus = g.affine(alpha, -1.0, 1.0);
    let mut blend = |a: Var, b: Var| -> Result<Var> {
        let x = g.scale_by(a, alpha)?;
        let y = g.scale_by(b, one_minus)?;
        g.add(x, y)
    };
    Ok((blend(filtered.0, direct.0)?, blend(filtered.1, direct.1)?))
}

fn linear(g: &mut Graph, c: &Consts, y_rec: (Var, Var)) -> Result<(Var, Var)> {
    let centered = csub(g, y_rec, c.b)?;
    cmatmul(g, centered, c.pinv)
}

fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let n = g.layer_norm_rows(x);
    let n = g.mul_row(n, gamma)?;
    g.add_row(n, beta)
}

/// Residual `Former(H_linear)` as an `M x K` pair.
fn former(
    g: &mut Graph,
    vars: &[Var],
    f: &FormerIdx,
    num_heads: usize,
    h_lin: (Var, Var),
    token_scale: f64,
    m: usize,
) -> Result<(Var, Var)> {
    // K tokens of length 2M: [Re h_k, Im h_k]
    let tr = g.transpose(h_lin.0);
    let ti = g.transpose(h_lin.1);
    let tokens = g.concat_cols(&[tr, ti])?;
    let tokens = g.scale(tokens, 1.0 / token_scale);
    let proj = g.matmul(tokens, vars[f.w_proj])?;
    let mut z = g.add(proj, vars[f.p_pos])?;
    let d = g.shape(z).cols;
    let dh = d / num_heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for e in &f.encoders {
        let x = layer_norm(g, z, vars[e.ln1_gamma], vars[e.ln1_beta])?;
        let q = g.matmul(x, vars[e.wq])?;
        let k = g.matmul(x, vars[e.wk])?;
        let v = g.matmul(x, vars[e.wv])?;
        let mut heads = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, inv_sqrt);
            let attn = g.softmax_rows(scores);
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let o = g.matmul(cat, vars[e.wo])?;
        let a = g.add(z, o)?;
        let x = layer_norm(g, a, vars[e.ln2_gamma], vars[e.ln2_beta])?;
        let hdn = g.matmul(x, vars[e.ffn_w1])?;
        let hdn = g.add_row(hdn, vars[e.ffn_b1])?;
        let hdn = g.gelu(hdn);
        let ffn = g.matmul(hdn, vars[e.ffn_w2])?;
        let ffn = g.add_row(ffn, vars[e.ffn_b2])?;
        z = g.add(a, ffn)?;
    }
    let out = g.matmul(z, vars[f.out_w])?;
    let out = g.add_row(out, vars[f.out_b])?;
    let out = g.scale(out, token_scale);
    let re = g.slice_cols(out, 0, m)?;
    let im = g.slice_cols(out, m, m)?;
    Ok((g.transpose(re), g.transpose(im)))
}

/// Builds the full `T_UR`-layer forward pass starting from `Ĥ⁽⁰⁾ = 0`.
pub fn build_forward(
    g: &mut Graph,
    params: &URformerParams,
    vars: &[Var],
    pilots: &Pilots,
    meas: &MeasurementSet,
    opts: &ForwardOptions,
) -> Result<ForwardOutput> {
    let dims = params.dims;
    if (meas.num_antennas(), meas.num_users(), meas.num_pilots())
        != (dims.num_antennas, dims.num_users, dims.num_pilots)
    {
        return Err(Error::Incompatible(format!(
            "model built for M={}, K={}, P={} but measurements have M={}, K={}, P={}",
            dims.num_antennas,
            dims.num_users,
            dims.num_pilots,
            meas.num_antennas(),
            meas.num_users(),
            meas.num_pilots()
        )));
    }
    let c = consts(g, pilots, meas, true)?;
    let zeros = vec![0.0; c.m * c.k];
    let mut h = (g.constant(c.m, c.k, zeros.clone())?, g.constant(c.m, c.k, zeros)?);
    let mut iterates = Vec::new();
    let mut filter_evals = 0;
    for idx in &params.layout.layers {
        let y_rec = gated_filter(g, vars, idx, &c, h, opts)?;
        filter_evals += 1;
        let h_lin = linear(g, &c, y_rec)?;
        h = if opts.former {
            let res = former(g, vars, &idx.former, params.config.num_heads, h_lin, c.token_scale, c.m)?;
            cadd(g, h_lin, res)?
        } else {
            h_lin
        };
        if opts.record_iterates {
            iterates.push(h);
        }
    }
    Ok(ForwardOutput { h, iterates, filter_evals })
}

/// Inference: `Ĥ^(T_UR)` for one measurement set.
pub fn urformer_forward(meas: &MeasurementSet, params: &URformerParams, opts: &ForwardOptions) -> Result<ForwardResult> {
    let pilots = Pilots::new(&meas.s)?;
    let mut g = Graph::new();
    let vars = bind(&mut g, params, false)?;
    let out = build_forward(&mut g, params, &vars, &pilots, meas, opts)?;
    Ok(ForwardResult {
        h_hat: to_complex(&g, out.h),
        iterates: out.iterates.iter().map(|&v| to_complex(&g, v)).collect(),
        filter_evals: out.filter_evals,
    })
}

fn layer_idx(params: &URformerParams, layer: usize) -> Result<&LayerIdx> {
    params
        .layout
        .layers
        .get(layer)
        .ok_or_else(|| Error::invalid("urformer", format!("layer {layer} out of range")))
}

/// FilterNet of `layer` applied entrywise to `κ`.
pub fn filternet_eval(kappa: &RealMatrix, params: &URformerParams, layer: usize) -> Result<RealMatrix> {
    if let Some(bad) = kappa.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid("filternet_eval", format!("κ entry {bad} is not finite and nonnegative")));
    }
    let idx = layer_idx(params, layer)?;
    let mut g = Graph::new();
    let vars = bind(&mut g, params, false)?;
    let (r, c) = kappa.shape();
    let k = g.constant(r, c, kappa.data().to_vec())?;
    let out = filter_weights(&mut g, &vars, &idx.filter, k, FilterMode::Learned)?;
    RealMatrix::from_vec(r, c, g.value(out).to_vec())
}

/// One gated-filter step: `Y_rec` from `Ĥ⁽ᵗ⁻¹⁾`.
pub fn gated_filter_step(
    h_prev: &ComplexMatrix,
    meas: &MeasurementSet,
    params: &URformerParams,
    layer: usize,
    opts: &ForwardOptions,
) -> Result<ComplexMatrix> {
    let idx = layer_idx(params, layer)?;
    let pilots = Pilots::new(&meas.s)?;
    if h_prev.shape() != (meas.num_antennas(), meas.num_users()) {
        return Err(Error::ShapeMismatch {
            op: "gated_filter_step",
            left: (meas.num_antennas(), meas.num_users()),
            right: h_prev.shape(),
        });
    }
    let mut g = Graph::new();
    let vars = bind(&mut g, params, false)?;
    let c = consts(&mut g, &pilots, meas, true)?;
    let h = cconst(&mut g, h_prev)?;
    let y = gated_filter(&mut g, &vars, idx, &c, h, opts)?;
    Ok(to_complex(&g, y))
}

/// `(Y_rec - B)(Sᵀ)⁺` for a `P x K` pilot matrix `s`.
pub fn linear_estimate(y_rec: &ComplexMatrix, b: &ComplexMatrix, s: &ComplexMatrix) -> Result<ComplexMatrix> {
    let pilots = Pilots::new(s)?;
    y_rec.checked_sub(b)?.matmul(&pilots.s_t_pinv)
}

/// Residual correction of `layer`. Tokens are divided by `token_scale`
/// and the output multiplied back; the estimator passes `rms(Z)`.
pub fn former_forward(
    h_linear: &ComplexMatrix,
    params: &URformerParams,
    layer: usize,
    token_scale: f64,
) -> Result<ComplexMatrix> {
    let idx = layer_idx(params, layer)?;
    let (m, k) = (params.dims.num_antennas, params.dims.num_users);
    if h_linear.shape() != (m, k) {
        return Err(Error::ShapeMismatch { op: "former_forward", left: (m, k), right: h_linear.shape() });
    }
    if !(token_scale > 0.0 && token_scale.is_finite()) {
        return Err(Error::invalid("former_forward", "token scale must be positive"));
    }
    let mut g = Graph::new();
    let vars = bind(&mut g, params, false)?;
    let h = cconst(&mut g, h_linear)?;
    let res = former(&mut g, &vars, &idx.former, params.config.num_heads, h, token_scale, m)?;
    Ok(to_complex(&g, res))
}
