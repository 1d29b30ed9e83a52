//! Record sources: an audio device, a WAV file or the echo simulator.

use std::path::PathBuf;
use std::str::FromStr;

use roomrec_core::audio::{wav, AudioRecord};
use roomrec_core::sim::{record_seed, synth_record, CaptureContext, RoomProfile};

use crate::error::{CliError, Result};

/// Records per capture in training mode.
pub const TRAINING_RECORDS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Recognition,
    Training,
}

impl Mode {
    pub fn record_count(self) -> usize {
        match self {
            Mode::Recognition => 1,
            Mode::Training => TRAINING_RECORDS,
        }
    }
}

/// Where records come from, parsed from `device`, `file:PATH` or `sim:PROFILE`.
///
/// `PROFILE` is either a JSON room profile file or `room-NN`, the NN-th
/// default simulated room.
#[derive(Debug, Clone, PartialEq)]
pub enum CaptureSource {
    Device,
    File(PathBuf),
    Simulator(String),
}

impl FromStr for CaptureSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "device" {
            return Ok(Self::Device);
        }
        match s.split_once(':') {
            Some(("file", p)) if !p.is_empty() => Ok(Self::File(p.into())),
            Some(("sim", p)) if !p.is_empty() => Ok(Self::Simulator(p.into())),
            _ => Err(CliError::Usage(format!(
                "unknown source `{s}`; expected device, file:PATH or sim:PROFILE"
            ))),
        }
    }
}

/// Simulator settings for `sim:` sources.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Seed of the default room set `room-NN` is drawn from.
    pub profile_seed: u64,
    /// Master seed of the record stream.
    pub seed: u64,
    /// Index of the first record within the room's stream.
    pub start: usize,
    pub context: CaptureContext,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            profile_seed: 1,
            seed: 0,
            start: 0,
            context: CaptureContext::default(),
        }
    }
}

/// Resolves a simulator profile and its index in the default room set.
pub fn resolve_profile(name: &str, profile_seed: u64) -> Result<(usize, RoomProfile)> {
    if let Some(n) = name.strip_prefix("room-").and_then(|n| n.parse::<usize>().ok()) {
        let profile = RoomProfile::defaults(n + 1, profile_seed).pop().expect("n + 1 profiles");
        return Ok((n, profile));
    }
    let text = std::fs::read_to_string(name)
        .map_err(|e| CliError::Capture(format!("simulator profile `{name}`: {e}")))?;
    let profile: RoomProfile =
        serde_json::from_str(&text).map_err(|e| CliError::Capture(format!("simulator profile `{name}`: {e}")))?;
    profile.validate()?;
    Ok((0, profile))
}

/// Captures one recognition record or a training batch of 500.
pub fn emit_record(mode: Mode, source: &CaptureSource, sim: &SimOptions) -> Result<Vec<AudioRecord<f32>>> {
    let n = mode.record_count();
    match source {
        CaptureSource::Device => Err(CaptureSource::device_unavailable()),
        CaptureSource::File(path) => {
            let mut records =
                wav::read::<f32>(path).map_err(|e| CliError::Capture(format!("{}: {e}", path.display())))?;
            if records.len() < n {
                return Err(CliError::Capture(format!(
                    "{} holds {} records, {n} needed",
                    path.display(),
                    records.len()
                )));
            }
            records.truncate(n);
            Ok(records)
        }
        CaptureSource::Simulator(name) => {
            let (index, room) = resolve_profile(name, sim.profile_seed)?;
            (sim.start..sim.start + n)
                .map(|i| Ok(synth_record(&room, &sim.context, record_seed(sim.seed, index, &room, i))?))
                .collect()
        }
    }
}

impl CaptureSource {
    fn device_unavailable() -> CliError {
        CliError::Capture("no audio capture backend in this build; use file:PATH or sim:PROFILE".into())
    }
}
