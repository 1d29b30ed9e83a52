//! Signal-processing primitives for chirp/echo sensing.
//!
//! One sensing period is a 100 ms mono record at 44.1 kHz: a 2 ms 20 kHz
//! chirp, a short guard interval, and the 97.5 ms echo window that carries
//! the room's response. Everything here is a pure function of its inputs.

mod chirp;
mod correlate;
mod framing;
mod spectral;
pub mod wav;

pub use chirp::gen_chirp;
pub use correlate::sliding_correlation;
pub use framing::segment_record;
pub use spectral::{
    fft, hann_periodic, long_psd, psd_narrowband, spectrogram, FullPsd, PsdSegment, Spectrogram,
    LONG_PSD_FRAMES, NARROWBAND_FFT_LEN, SPECTROGRAM_BINS, SPECTROGRAM_FRAMES, SPECTROGRAM_HOP,
    SPECTROGRAM_WINDOW,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SAMPLE_RATE_HZ: u32 = 44_100;
pub const RECORD_SAMPLES: usize = 4410;
pub const CHIRP_SAMPLES: usize = 88;
pub const GUARD_SAMPLES: usize = 22;
pub const ECHO_SAMPLES: usize = 4300;
pub const CARRIER_HZ: f64 = 20_000.0;

/// Emission parameters for the sensing chirp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpConfig {
    pub carrier_hz: f64,
    pub chirp_ms: f64,
    pub period_ms: f64,
    pub sample_rate_hz: f64,
    pub amplitude: f64,
}

impl Default for ChirpConfig {
    fn default() -> Self {
        Self {
            carrier_hz: CARRIER_HZ,
            chirp_ms: 2.0,
            period_ms: 100.0,
            sample_rate_hz: SAMPLE_RATE_HZ as f64,
            amplitude: 1.0,
        }
    }
}

impl ChirpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz < self.sample_rate_hz / 2.0) {
            return Err(Error::Config(format!(
                "carrier {} Hz is not below the Nyquist frequency {} Hz",
                self.carrier_hz,
                self.sample_rate_hz / 2.0
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::Config(format!(
                "amplitude must lie in (0, 1], got {}",
                self.amplitude
            )));
        }
        if !(self.chirp_ms > 0.0 && self.chirp_ms < self.period_ms) {
            return Err(Error::Config(format!(
                "chirp duration {} ms must be positive and shorter than the period {} ms",
                self.chirp_ms, self.period_ms
            )));
        }
        let layout = FrameLayout::for_config(self);
        if layout.echo_samples == 0 {
            return Err(Error::Config("period leaves no echo window".into()));
        }
        Ok(())
    }

    pub fn chirp_samples(&self) -> usize {
        // 1e-9 absorbs representation error in products like 2 * 44.1.
        (self.chirp_ms * self.sample_rate_hz / 1000.0 + 1e-9).floor() as usize
    }

    pub fn period_samples(&self) -> usize {
        (self.period_ms * self.sample_rate_hz / 1000.0).round() as usize
    }
}

/// Sample counts of the three parts of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub chirp_samples: usize,
    pub guard_samples: usize,
    pub echo_samples: usize,
}

impl Default for FrameLayout {
    fn default() -> Self {
        Self {
            chirp_samples: CHIRP_SAMPLES,
            guard_samples: GUARD_SAMPLES,
            echo_samples: ECHO_SAMPLES,
        }
    }
}

impl FrameLayout {
    /// Derives the layout for a chirp configuration with a 0.5 ms guard.
    /// The echo window takes whatever the chirp and guard leave of the period.
    pub fn for_config(cfg: &ChirpConfig) -> Self {
        let total = cfg.period_samples();
        let chirp = cfg.chirp_samples().min(total);
        let guard = ((0.5 * cfg.sample_rate_hz / 1000.0).round() as usize).min(total - chirp);
        Self {
            chirp_samples: chirp,
            guard_samples: guard,
            echo_samples: total - chirp - guard,
        }
    }

    pub fn total(&self) -> usize {
        self.chirp_samples + self.guard_samples + self.echo_samples
    }

    pub fn echo_start(&self) -> usize {
        self.chirp_samples + self.guard_samples
    }
}

/// Frequency band retained by the narrowband features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSelection {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for BandSelection {
    fn default() -> Self {
        Self {
            low_hz: 19_500.0,
            high_hz: 20_500.0,
        }
    }
}

impl BandSelection {
    pub fn new(low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(low_hz < high_hz) || low_hz < 0.0 {
            return Err(Error::Config(format!(
                "band [{low_hz}, {high_hz}] Hz is empty or negative"
            )));
        }
        Ok(Self { low_hz, high_hz })
    }
}

/// One 100 ms capture.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioRecord<T> {
    samples: Vec<T>,
}

impl<T: Scalar> AudioRecord<T> {
    pub fn new(samples: Vec<T>) -> Result<Self> {
        if samples.len() != RECORD_SAMPLES {
            return Err(Error::Framing {
                expected: RECORD_SAMPLES,
                actual: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("sample {i} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn cast<U: Scalar>(&self) -> AudioRecord<U> {
        AudioRecord {
            samples: crate::scalar::cast_slice(&self.samples),
        }
    }

    /// The echo window of this record under the default layout.
    pub fn echo(&self) -> EchoFrame<T> {
        EchoFrame {
            samples: self.samples[CHIRP_SAMPLES + GUARD_SAMPLES..].to_vec(),
        }
    }
}

/// The 4300-sample echo window cut from a record.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoFrame<T> {
    samples: Vec<T>,
}

impl<T: Scalar> EchoFrame<T> {
    pub fn new(samples: Vec<T>) -> Result<Self> {
        if samples.len() != ECHO_SAMPLES {
            return Err(Error::Framing {
                expected: ECHO_SAMPLES,
                actual: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("echo sample {i} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s * factor).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_matches_derived_layout() {
        let cfg = ChirpConfig::default();
        assert_eq!(FrameLayout::for_config(&cfg), FrameLayout::default());
        assert_eq!(FrameLayout::default().total(), RECORD_SAMPLES);
    }

    #[test]
    fn carrier_at_nyquist_is_rejected() {
        let cfg = ChirpConfig {
            carrier_hz: 22_050.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ChirpConfig::default().validate().is_ok());
    }

    #[test]
    fn records_must_be_exact_length_and_finite() {
        assert!(AudioRecord::new(vec![0.0f64; 4409]).is_err());
        let mut s = vec![0.0f64; 4410];
        s[7] = f64::NAN;
        assert!(AudioRecord::new(s).is_err());
        assert_eq!(AudioRecord::new(vec![0.0f32; 4410]).unwrap().echo().samples().len(), 4300);
    }
}
