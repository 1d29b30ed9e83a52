//! Room recognition from inaudible chirp echoes.
//!
//! A phone-style sensor emits a 2 ms 20 kHz chirp every 100 ms and records
//! the 97.5 ms echo window that follows. This crate turns those records into
//! narrowband spectrograms, trains small CNNs over them, and provides the
//! MFCC+SVM baselines, a seeded echo simulator and the experiment harness
//! used to compare them.

pub mod audio;
pub mod baseline;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type Model32 = nn::ModelBundle<f32>;
pub type Model64 = nn::ModelBundle<f64>;
pub type Record32 = audio::AudioRecord<f32>;
pub type Record64 = audio::AudioRecord<f64>;
pub type Spectrogram32 = audio::Spectrogram<f32>;
pub type Spectrogram64 = audio::Spectrogram<f64>;
