use serde::{Deserialize, Serialize};

use crate::audio::fft;
use crate::audio::{EchoFrame, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub num_filters: usize,
    pub num_ceps: usize,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub fft_len: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self::broadband()
    }
}

impl MfccConfig {
    pub fn broadband() -> Self {
        Self {
            low_hz: 0.0,
            high_hz: SAMPLE_RATE_HZ as f64 / 2.0,
            num_filters: 26,
            num_ceps: 13,
            frame_ms: 25.0,
            hop_ms: 10.0,
            fft_len: 2048,
        }
    }

    pub fn narrowband() -> Self {
        Self {
            low_hz: 19_500.0,
            high_hz: 20_500.0,
            ..Self::broadband()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE_HZ as f64 / 2.0;
        if !(0.0 <= self.low_hz && self.low_hz < self.high_hz && self.high_hz <= nyquist) {
            return Err(Error::Config(format!(
                "mel band [{}, {}] Hz must satisfy 0 <= low < high <= {nyquist}",
                self.low_hz, self.high_hz
            )));
        }
        if self.num_filters == 0 || self.num_ceps == 0 || self.num_ceps > self.num_filters {
            return Err(Error::Config("need 1 <= num_ceps <= num_filters".into()));
        }
        if self.frame_samples() == 0 || self.hop_samples() == 0 || self.frame_samples() > self.fft_len {
            return Err(Error::Config("frame must be non-empty and fit the FFT length".into()));
        }
        Ok(())
    }

    pub fn frame_samples(&self) -> usize {
        (self.frame_ms * SAMPLE_RATE_HZ as f64 / 1000.0 + 1e-9).floor() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * SAMPLE_RATE_HZ as f64 / 1000.0 + 1e-9).floor() as usize
    }

    /// Number of full frames in a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.frame_samples() {
            0
        } else {
            (len - self.frame_samples()) / self.hop_samples() + 1
        }
    }

    /// Triangular mel filters (num_filters x fft_len/2+1), evaluated at each
    /// bin's centre frequency.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        let bins = self.fft_len / 2 + 1;
        let (lo, hi) = (hz_to_mel(self.low_hz), hz_to_mel(self.high_hz));
        let edges: Vec<f64> = (0..self.num_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (self.num_filters + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE_HZ as f64 / self.fft_len as f64;
        (0..self.num_filters)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub(crate) fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Cepstra per frame: rectangular frames, power spectrum `|X|^2 / N`, mel
/// filter energies, natural log with a floor, orthonormal DCT-II.
pub fn mfcc_frames<T: Scalar>(samples: &[T], cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let bank = cfg.filterbank();
    let (len, hop, nfft) = (cfg.frame_samples(), cfg.hop_samples(), cfg.fft_len);
    (0..cfg.frames_for(samples.len()))
        .map(|f| {
            let mut buf = vec![T::zero(); nfft];
            buf[..len].copy_from_slice(&samples[f * hop..f * hop + len]);
            let spec = fft(&buf)?;
            let power: Vec<f64> = spec[..nfft / 2 + 1]
                .iter()
                .map(|c| c.norm_sqr().as_f64() / nfft as f64)
                .collect();
            let log_energies: Vec<f64> = bank
                .iter()
                .map(|w| w.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>().max(LOG_FLOOR).ln())
                .collect();
            Ok(dct2(&log_energies, cfg.num_ceps))
        })
        .collect()
}

/// Concatenated cepstra of the echo window (8 x 13 = 104 values by default).
pub fn mfcc<T: Scalar>(frame: &EchoFrame<T>, cfg: &MfccConfig) -> Result<Vec<f64>> {
    Ok(mfcc_frames(frame.samples(), cfg)?.concat())
}
