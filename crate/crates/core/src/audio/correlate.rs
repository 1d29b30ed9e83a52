use super::{EchoFrame, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Normalized correlation of every `window_samples`-long window of the frame
/// (stride 1) against a sine template at `template_hz`.
///
/// Each value is `<w, t> / (|w| |t|)`, taken as 0 where the window is silent,
/// so the output always lies in [-1, 1]. Output length is
/// `frame_len - window_samples + 1`.
pub fn sliding_correlation<T: Scalar>(
    frame: &EchoFrame<T>,
    template_hz: f64,
    window_samples: usize,
) -> Result<Vec<T>> {
    let x = frame.samples();
    if window_samples == 0 || window_samples > x.len() {
        return Err(Error::Argument(format!(
            "correlation window of {window_samples} samples does not fit a {}-sample frame",
            x.len()
        )));
    }
    let step = 2.0 * std::f64::consts::PI * template_hz / SAMPLE_RATE_HZ as f64;
    let template: Vec<T> = (0..window_samples)
        .map(|n| T::of((step * n as f64).sin()))
        .collect();
    let template_norm = template.iter().map(|&v| v * v).sum::<T>().sqrt();

    let out = x
        .windows(window_samples)
        .map(|w| {
            let energy = w.iter().map(|&v| v * v).sum::<T>();
            if energy == T::zero() || template_norm == T::zero() {
                return T::zero();
            }
            let dot = w.iter().zip(&template).map(|(&a, &b)| a * b).sum::<T>();
            (dot / (energy.sqrt() * template_norm)).max(-T::one()).min(T::one())
        })
        .collect();
    Ok(out)
}
