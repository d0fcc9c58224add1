//! Simulation of slow-pose spoofing against edge-offloaded visual-inertial
//! odometry, and an autoencoder-based detector that filters spoofed poses
//! before they re-anchor the device's dead reckoning.

// `!(x >= 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod autoencoder;
pub mod config;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod features;
pub mod geom;
pub mod metrics;
pub mod motion;
pub mod net;
pub mod odometry;
pub mod policy;
pub mod preprocess;
pub mod rng;
pub mod session;

pub use error::{Error, Result};
