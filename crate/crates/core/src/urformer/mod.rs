//! The unrolled estimator.
//!
//! Each of the `T_UR` layers maps `Ĥ⁽ᵗ⁻¹⁾` to `Ĥ⁽ᵗ⁾` in three steps:
//!
//! 1. gated filtering: `Y = Ĥ Sᵀ + B`, `Y_direct = Z ∘ e^{i∠Y}`, a learned
//!    entrywise filter `R = FilterNet(log1p κ)` gives `Y_filtered = R ∘ Y_direct`,
//!    and `Y_rec = α Y_filtered + (1 - α) Y_direct` with `α = sigmoid(g)`;
//! 2. linear estimation `H_linear = (Y_rec - B)(Sᵀ)⁺`;
//! 3. residual correction `Ĥ = H_linear + Former(H_linear)`, a pre-norm
//!    Transformer encoder whose tokens are the users.
//!
//! Forward passes are built on [`crate::diffengine::Graph`] so the same code
//! serves inference and training.

mod checkpoint;
mod forward;
mod params;
mod prefit;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use forward::{
    build_forward, filternet_eval, former_forward, gated_filter_step, linear_estimate, urformer_forward,
    FilterMode, ForwardOptions, ForwardOutput, ForwardResult, GateMode, Pilots,
};
pub use params::{
    EncoderIdx, FilterIdx, FormerIdx, LayerIdx, Layout, ModelDims, TensorSpec, URformerConfig, URformerParams,
};
pub use prefit::{prefit_filternet, FilterFit};


pub(crate) use forward::bind;
#[cfg(test)]
use forward::to_complex;
