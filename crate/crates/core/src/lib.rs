//! Conditional diffusion solvers for resource-allocation problems.
//!
//! The crate trains a conditional denoising chain to emit solutions for
//! allocation problems (power, bandwidth, contracts) either online against a
//! jointly learned solution evaluator or from expert-labelled datasets, plus
//! a diffusion-policy actor-critic for discrete-action MDPs. Benchmark
//! environments ship with exact oracles (water-filling, grid search) so every
//! training result can be scored as a gap to the true optimum.
//!
//! Modules:
//! - [`nn`] — f64 multilayer perceptrons with reverse-mode gradients and Adam
//! - [`diffusion`] — noise schedules, forward noising, conditional reverse chain
//! - [`gdm`] — critic-guided online training, expert training, inference
//! - [`d2sac`] — diffusion actor with double critics for discrete MDPs
//! - [`envs`] — benchmark problems, oracles and naive baselines
//! - [`harness`] — run configuration, metrics CSV, checkpoints, CLI backend
//!
//! Batch losses, evaluation fan-out and grid oracles run data-parallel with
//! rayon under the default `parallel` feature; disabling it falls back to
//! sequential loops with bit-identical results.

pub mod d2sac;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod exec;
pub mod gdm;
pub mod harness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
