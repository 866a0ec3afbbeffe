//! Classification of long irregularly-sampled time series with a
//! continuous-time attention policy.
//!
//! A moment policy places a local receptor on the normalized timeline, a GRU
//! aggregates the receptor's readings over `K` steps and a linear
//! discriminator classifies the series. The policy is trained with
//! REINFORCE against a learned baseline; everything else by cross-entropy.
//!
//! Module map:
//!
//! - [`series`], [`io`]: data model and JSON-lines files
//! - [`diffnet`]: gradient engine, layers, Adam
//! - [`receptor`]: interpolation and density features around a moment
//! - [`agent`]: the episode (receptor, transition, policy, baseline, discriminator)
//! - [`train`]: losses, training loop, evaluation
//! - [`datagen`]: synthetic data, listening probe, downsampling, balancing
//! - [`baselines`]: imputation + GRU comparison classifiers
//! - [`harness`]: sweeps, ablation, timing, CSV export
//! - [`config`]: flat key-value run configuration

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod config;
pub mod datagen;
pub mod diffnet;
pub mod error;
pub mod harness;
pub mod io;
pub mod receptor;
pub mod rng;
pub mod series;
pub mod train;

pub use error::{Error, Result};
