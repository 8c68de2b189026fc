//! Beam tracking for mmWave MIMO vehicle-to-infrastructure links.
//!
//! The crate covers the whole pipeline: a narrowband geometric channel model
//! ([`mimo`]), DFT codebooks and exhaustive beam sweeps ([`codebook`]), a
//! deterministic episode simulator with LOS and first-order reflections
//! ([`scene`]), LIDAR voxel and GNSS coordinate encoders ([`encoders`]), a
//! small 64-bit neural network kernel ([`neural`]) and the CNN+LSTM tracker
//! with its baselines and top-K evaluation ([`tracker`]).

pub mod blob;
pub mod codebook;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod mimo;
pub mod neural;
pub mod pipeline;
pub mod records;
pub mod scene;
pub mod tracker;

pub use error::{Error, Result};
