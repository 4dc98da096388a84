//! Deterministic simulator for federated block-coordinate-descent learning of
//! personalized (edge) and global (cloud) models.
//!
//! Each edge device `i` keeps a personalized model `x_i` and minimizes
//! `g_i(x_i) + (gamma_i / 2) ||x_i - z_n||^2` against the model `z_n` of its
//! cloud server. Servers combine the uploaded models with either a single
//! synchronous step or a decentralized mix-then-step update, under
//! synchronous or first-`B`-servers asynchronous protocols. Simulated time
//! follows an order-statistics latency model.
//!
//! Modules, bottom up:
//! - [`model`]: vectors, box projection, losses, the penalized problem.
//! - [`edge`] and [`cloud`]: the two blocks of the coordinate descent.
//! - [`latency`]: latency distributions and order-statistic ratios.
//! - [`baselines`]: FedAvg and FedProx.
//! - [`protocol`]: round orchestration and the event timeline.
//! - [`metrics`]: per-round convergence diagnostics.
//! - [`config`], [`data`], [`experiment`]: configuration, data and output files.

pub mod baselines;
pub mod cloud;
pub mod config;
pub mod data;
pub mod edge;
pub mod error;
pub mod experiment;
pub mod latency;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
pub use model::{BoxSet, Device, FedProblem, LocalDataset, LossKind, ModelVec, Sample};
