#![allow(clippy::needless_range_loop)]

//! Two-frame relative pose estimation from matched points and line segments.
//!
//! The crate is organized around a small trainable graph-attention model:
//!
//! - [`diffcore`] — dense-tensor reverse-mode autodiff and Adam;
//! - [`geometry`] — SE(3) pose algebra, angular/odometry error metrics,
//!   trajectory accumulation and the trajectory file format;
//! - [`datagen`] — synthetic two-view scenes with exact ground truth,
//!   match-set files, and the fixed-count resampling policy;
//! - [`encoders`] — coordinate, line-segment, and pixel encoders producing
//!   initial graph node features;
//! - [`dualgraph`] — stacked geometric/visual graph layers with intra-graph
//!   self-attention, endpoint message passing, and cross-graph attention;
//! - [`posehead`] — weighted feature fusion, pose and log-variance heads,
//!   and the heteroscedastic regression loss;
//! - [`model`] — the assembled network, checkpoints, evaluation helpers;
//! - [`train`] — batched Adam training with deterministic seeding;
//! - [`bench`] — forward-latency measurement.

pub mod bench;
pub mod datagen;
pub mod diffcore;
pub mod dualgraph;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod model;
pub mod posehead;
pub mod rng;
pub mod train;

pub use error::{CoreError, Result};
