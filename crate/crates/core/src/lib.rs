//! Conditional diffusion core for simultaneous identity and expression
//! transfer, at desk scale.
//!
//! Layers, bottom up: [`numerics`] (arrays, RNG, AdamW, gradient checks),
//! [`schedule`] (forward marginal and posterior), [`samplers`] (one-step,
//! midpoint and improved-midpoint estimators plus generation), [`world`]
//! (synthetic factor data and exact oracle encoders), [`denoiser`] (the
//! conditioned network with hand-written gradients), [`training`] (losses,
//! training loop, checkpoints) and [`eval`] (metrics, studies, config and CSV).

pub mod denoiser;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod par;
pub mod samplers;
pub mod schedule;
pub mod training;
pub mod world;

pub use error::{Error, Result};
