//! Functional neural ODEs.
//!
//! A trajectory is summarised by two variational embeddings: the latent
//! initial state `z0` and a low-dimensional code `γ` for its dynamics. A
//! hypernetwork turns `γ` into the weights of the ODE vector field, a
//! fixed-step RK4 solver rolls the latent state forward, and a decoder maps it
//! back to observations. After training, a Gaussian mixture fitted to
//! posterior `γ` samples serves as the sampler for new dynamics and as the
//! density for out-of-distribution scoring.

pub mod archive;
pub mod cli;
pub mod config;
pub mod error;
pub mod fsio;
pub mod gmm;
pub mod grad;
pub mod inference;
pub mod json;
pub mod model;
pub mod nets;
pub mod odeint;
pub mod pipeline;
pub mod plot;
pub mod syndata;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{ParamSet, Tensor};
