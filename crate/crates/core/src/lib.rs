//! Survey-light WiFi fingerprint maps.
//!
//! Chooses which target locations to survey ([`initializer`]), augments the
//! surveyed fingerprints ([`synthesizer`]), trains a location-conditioned
//! diffusion generator to fill in the rest ([`diffusion`]) and measures the
//! effect on a downstream localizer ([`localizer`], [`pipeline`]).

pub mod baselines;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod initializer;
pub mod localizer;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod synthesizer;

pub use error::{Error, Result};
