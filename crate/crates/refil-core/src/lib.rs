//! Split-inference privacy toolkit.
//!
//! Measures how much an observer can learn about a client's input from a
//! split-layer activation (diagonal Fisher information leakage), calibrates
//! Gaussian noise to pin that leakage to a target, trains models whose
//! split point tolerates the noise (compression layers, SNR regularizer),
//! and validates the result with reconstruction attacks — locally or over a
//! real client/server split.

#![forbid(unsafe_code)]

pub mod attack;
pub mod binio;
pub mod catalog;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod jacobian;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod pnm;
pub mod privacy;
pub mod rng;
pub mod service;
pub mod tensor;
pub mod train;
pub mod wire;

pub use attack::{reconstruct, AttackConfig, AttackInit, AttackMethod, AttackResult};
pub use catalog::{insert_compression, reference_models, CompressionKind, CompressionSpec};
pub use error::{Error, Result};
pub use jacobian::{full_jacobian, trace_jtj_exact, trace_jtj_hutchinson};
pub use model::{Model, SplitModel};
pub use privacy::{
    calibrate_sigma, compute_dfil, reconstruction_error_bound, refil_forward, Calibration,
    Estimator, NoisyActivation, RefilConfig,
};
pub use rng::SeededRng;
pub use tensor::Tensor;
pub use train::{train, Example, Label, TaskLoss, TrainConfig, TrainLog};
pub use wire::{ActivationPayload, WireMessage};
