//! Realism supervision for toy 3D-native generators.
//!
//! The crate provides:
//!
//! * [`imageops`]: image containers, shared crops, four-panel composition and
//!   Lab histogram matching.
//! * [`encoders`]: global and dense patch encoders (seeded toy projections plus
//!   a file-backed external adapter) with input gradients.
//! * [`losses`]: crop-wise perceptual adaptation, patch-token structure
//!   matching, their sum, and the L2 / Gram ablation losses.
//! * [`toyscene`]: isotropic Gaussian splats, an orthographic differentiable
//!   renderer and a latent decoder.
//! * [`strategies`]: the coupled rectified-flow, feed-forward texturing and
//!   multi-view denoising training objectives over toy networks.
//! * [`pipeline`]: the structure-aligned multi-view dataset construction flow
//!   against a pluggable generator client.
//! * [`evalsuite`]: CLIP-style similarity, KID and multi-view consistency.
//! * [`config`] and [`commands`]: the TOML run configuration and the flows
//!   behind each command-line subcommand.
//! * [`selftest`]: oracle, gradient and identity checks that run in well under
//!   a second.

pub mod commands;
pub mod config;
pub mod encoders;
pub mod error;
pub mod evalsuite;
pub mod gradcheck;
pub mod imageops;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod selftest;
pub mod strategies;
pub mod toyscene;
mod util;

pub use error::{exit_code, Error, Result};
