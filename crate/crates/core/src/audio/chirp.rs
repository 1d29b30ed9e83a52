use super::ChirpConfig;
use crate::error::Result;
use crate::scalar::Scalar;

/// Synthesizes the single-tone chirp: `amplitude * sin(2π f n / fs)` for
/// `floor(chirp_ms * fs / 1000)` samples.
pub fn gen_chirp<T: Scalar>(cfg: &ChirpConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let step = 2.0 * std::f64::consts::PI * cfg.carrier_hz / cfg.sample_rate_hz;
    Ok((0..cfg.chirp_samples())
        .map(|n| T::of(cfg.amplitude * (step * n as f64).sin()))
        .collect())
}
