//! FFT-based features: the long full-band PSD, the short narrowband PSD
//! segment and the 32x5 echo spectrogram.

use std::io::Write;

use num_complex::Complex;
use rustfft::FftPlanner;

use super::{BandSelection, EchoFrame, ECHO_SAMPLES, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LONG_PSD_FRAMES: usize = 40;
/// Zero-padded transform length that puts exactly 147 bin centres in
/// [19.5, 20.5] kHz.
pub const NARROWBAND_FFT_LEN: usize = 6480;
pub const SPECTROGRAM_WINDOW: usize = 256;
pub const SPECTROGRAM_HOP: usize = 128;
pub const SPECTROGRAM_FRAMES: usize = (ECHO_SAMPLES - SPECTROGRAM_WINDOW) / SPECTROGRAM_HOP + 1;
pub const SPECTROGRAM_BINS: usize = 5;
const LOG_FLOOR: f64 = 1e-12;

/// Discrete Fourier transform of a real sequence of any length.
pub fn fft<T: Scalar>(x: &[T]) -> Result<Vec<Complex<T>>> {
    if x.is_empty() {
        return Err(Error::Argument("cannot transform an empty sequence".into()));
    }
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    Ok(buf)
}

/// Periodic Hann window, `0.5 (1 - cos(2πn/N))`.
pub fn hann_periodic<T: Scalar>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| {
            T::of(0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        })
        .collect()
}

/// One-sided power spectral density on a uniform grid starting at 0 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPsd<T> {
    pub bin_hz: f64,
    pub values: Vec<T>,
}

impl<T: Scalar> FullPsd<T> {
    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }
}

/// Concatenates 40 echo windows (172,000 samples) and returns the one-sided
/// periodogram `|X_k|^2 / (fs N)`, bins 0..=N/2.
pub fn long_psd<T: Scalar>(frames: &[EchoFrame<T>]) -> Result<FullPsd<T>> {
    if frames.len() != LONG_PSD_FRAMES {
        return Err(Error::Argument(format!(
            "long PSD needs exactly {LONG_PSD_FRAMES} echo frames, got {}",
            frames.len()
        )));
    }
    let joined: Vec<T> = frames.iter().flat_map(|f| f.samples().iter().copied()).collect();
    let n = joined.len();
    let fs = SAMPLE_RATE_HZ as f64;
    let spectrum = fft(&joined)?;
    let scale = T::of(1.0 / (fs * n as f64));
    Ok(FullPsd {
        bin_hz: fs / n as f64,
        values: spectrum[..=n / 2].iter().map(|c| c.norm_sqr() * scale).collect(),
    })
}

/// The narrowband power spectrum of one echo window.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdSegment<T> {
    pub values: Vec<T>,
    pub bin_hz: Vec<f64>,
}

impl<T: Scalar> PsdSegment<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "f_hz,value")?;
        for (f, v) in self.bin_hz.iter().zip(&self.values) {
            writeln!(out, "{f},{v}")?;
        }
        Ok(())
    }
}

/// Zero-pads the window to 6480 points and keeps the bins whose centres lie
/// in the band (2866..=3012 for the default band, 147 values). Values are
/// scaled as `|X_k|^2 / (fs L)` with `L` the unpadded length.
pub fn psd_narrowband<T: Scalar>(frame: &EchoFrame<T>, band: &BandSelection) -> PsdSegment<T> {
    let fs = SAMPLE_RATE_HZ as f64;
    let df = fs / NARROWBAND_FFT_LEN as f64;
    let lo = (band.low_hz / df).ceil() as usize;
    let hi = ((band.high_hz / df).floor() as usize).min(NARROWBAND_FFT_LEN / 2);

    let mut buf = vec![Complex::new(T::zero(), T::zero()); NARROWBAND_FFT_LEN];
    for (slot, &s) in buf.iter_mut().zip(frame.samples()) {
        slot.re = s;
    }
    FftPlanner::new()
        .plan_fft_forward(NARROWBAND_FFT_LEN)
        .process(&mut buf);

    let scale = T::of(1.0 / (fs * frame.samples().len() as f64));
    PsdSegment {
        values: (lo..=hi).map(|k| buf[k].norm_sqr() * scale).collect(),
        bin_hz: (lo..=hi).map(|k| k as f64 * df).collect(),
    }
}

/// Time x frequency log-power image of one echo window, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    grid: Vec<T>,
    freqs_hz: Vec<f64>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn frames(&self) -> usize {
        self.grid.len() / self.freqs_hz.len().max(1)
    }

    pub fn bins(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames(), self.bins())
    }

    pub fn get(&self, t: usize, f: usize) -> T {
        self.grid[t * self.bins() + f]
    }

    pub fn values(&self) -> &[T] {
        &self.grid
    }

    pub fn into_values(self) -> Vec<T> {
        self.grid
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_index,f_hz,value")?;
        for t in 0..self.frames() {
            for (f, hz) in self.freqs_hz.iter().enumerate() {
                writeln!(out, "{t},{hz},{}", self.get(t, f))?;
            }
        }
        Ok(())
    }
}

/// 256-point Hann frames with hop 128 (32 frames over 4300 samples). Keeps
/// the bins whose whole extent `[k df - df/2, k df + df/2]` fits in the band
/// (k = 114..=118 for the default band) and stores `10 log10(|X_k|^2 + 1e-12)`.
pub fn spectrogram<T: Scalar>(frame: &EchoFrame<T>, band: &BandSelection) -> Spectrogram<T> {
    let fs = SAMPLE_RATE_HZ as f64;
    let df = fs / SPECTROGRAM_WINDOW as f64;
    let lo = (band.low_hz / df + 0.5).ceil() as usize;
    let hi = ((band.high_hz / df - 0.5).floor() as usize).min(SPECTROGRAM_WINDOW / 2);
    let bins: Vec<usize> = (lo..=hi).collect();

    let x = frame.samples();
    let frames = (x.len() - SPECTROGRAM_WINDOW) / SPECTROGRAM_HOP + 1;
    let window = hann_periodic::<T>(SPECTROGRAM_WINDOW);
    let plan = FftPlanner::new().plan_fft_forward(SPECTROGRAM_WINDOW);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); SPECTROGRAM_WINDOW];
    let floor = T::of(LOG_FLOOR);
    let ten = T::of(10.0);

    let mut grid = Vec::with_capacity(frames * bins.len());
    for t in 0..frames {
        let start = t * SPECTROGRAM_HOP;
        for ((slot, &s), &w) in buf.iter_mut().zip(&x[start..start + SPECTROGRAM_WINDOW]).zip(&window) {
            *slot = Complex::new(s * w, T::zero());
        }
        plan.process(&mut buf);
        grid.extend(bins.iter().map(|&k| ten * (buf[k].norm_sqr() + floor).log10()));
    }
    Spectrogram {
        grid,
        freqs_hz: bins.iter().map(|&k| k as f64 * df).collect(),
    }
}
