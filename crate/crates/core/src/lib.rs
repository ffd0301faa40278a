//! Bidirectional model-based data augmentation for offline reinforcement
//! learning.
//!
//! The crate trains forward and backward probabilistic dynamics ensembles
//! plus conditional-VAE rollout policies on a logged dataset, imagines
//! short trajectories in both directions, and keeps only the synthetic
//! transitions that the opposite-direction model reconstructs well (the
//! "double check"). A compact TD3+BC learner consumes the mixed real and
//! synthetic data, and the RiskWorld toy environment provides a fully
//! specified testbed.
//!
//! Module map:
//!
//! * [`nn`]: dense networks, manual backprop, Gaussian losses, Adam.
//! * [`env`]: the RiskWorld environment and random-policy collection.
//! * [`data`]: transitions, datasets, persistence, normalization, mixing.
//! * [`dynamics`]: probabilistic forward/backward ensembles.
//! * [`cvae`]: conditional VAE rollout policies.
//! * [`augment`]: bidirectional rollouts, double check, selection strategies.
//! * [`metrics`]: prediction error, model disagreement, region fractions.
//! * [`learner`]: TD3+BC offline learner, evaluation, normalized score.
//! * [`checkpoint`]: metadata JSON plus flat parameter blob.
//! * [`par`]: data-parallel helpers with a sequential fallback.

pub mod augment;
pub mod checkpoint;
pub mod cvae;
pub mod data;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;

pub use error::{CabiError, Result};
pub use rng::SeededRng;
