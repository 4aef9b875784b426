//! Meta-learned test-time adaptation for point cloud upsampling.
//!
//! The crate covers the whole pipeline at desk scale: synthetic shapes and
//! noise ([`geometry`]), self-supervised downsampling ([`sampling`]),
//! Chamfer/PSNR metrics over an exact k-d tree ([`metrics`], [`kdtree`]), a
//! reverse-mode differentiation engine ([`autodiff`]), a compact upsampling
//! network ([`backbone`]), supervised pre-training, MAML-style meta-training
//! and per-instance adaptation ([`meta`]), point-cloud file formats ([`io`]),
//! run configuration ([`config`]) and the ablation harness ([`harness`]).

pub mod autodiff;
pub mod backbone;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod kdtree;
pub mod meta;
pub mod metrics;
pub mod sampling;

pub use error::{Error, Result};
