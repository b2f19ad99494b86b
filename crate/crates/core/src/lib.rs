//! Magnitude-only channel estimation for Rydberg atomic receiver arrays.
//!
//! The crate is organized bottom-up:
//!
//! - [`linops`]: dense complex linear algebra, the phase projection and the
//!   `I1/I0` Bessel ratio used by the EM-GS filter.
//! - [`channel`]: clustered Saleh-Valenzuela channels, pilots, the local
//!   oscillator reference and the biased magnitude measurements.
//! - [`classic`]: GS and EM-GS iterations, the least-squares objective and NMSE.
//! - [`diffengine`]: a reverse-mode differentiation graph over real matrices
//!   together with an Adam optimizer.
//! - [`urformer`]: the unrolled estimator (gated learned filter, linear
//!   estimate, Transformer residual correction).
//! - [`train`]: dataset generation, end-to-end training and evaluation.
//! - [`container`]: the on-disk format shared by datasets and checkpoints.

pub mod channel;
pub mod classic;
pub mod container;
pub mod diffengine;
pub mod error;
pub mod linops;
pub mod train;
pub mod urformer;

pub use error::{Error, Result};
