//! Command-line client for the recognition service and the experiment runner.

pub mod capture;
pub mod client;
pub mod error;
pub mod runner;

pub use capture::{emit_record, CaptureSource, Mode, SimOptions, TRAINING_RECORDS};
pub use client::{Client, UploadResult, DEFAULT_SERVER};
pub use error::{CliError, Result};
