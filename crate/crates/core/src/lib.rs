//! HyperMM: multimodal supervised learning without imputation.
//!
//! Phase 1 trains a universal encoder on single-modality items, with the
//! encoder's last layer generated per modality by a hypernetwork. Phase 2
//! freezes it and trains a set classifier over whichever modalities a sample
//! actually has.

pub mod cli;
mod codec;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hyperlayer;
pub mod ndiff;
pub mod setnet;
pub mod trainer;

pub use error::{Error, Result};
