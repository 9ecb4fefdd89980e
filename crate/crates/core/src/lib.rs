#![allow(clippy::needless_range_loop)]

//! Desk-scale laboratory for world-model objectives: discrete codecs over
//! continuous signals, latent vs. generative reconstruction losses and their
//! collapse behavior, the surrogate bound between them, and planning either
//! by sampling-based MPC or by reinforcement learning inside the learned
//! model.

pub mod codec;
pub mod envs;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod planners;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
