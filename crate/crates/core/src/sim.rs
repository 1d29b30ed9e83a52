//! Seeded synthetic echo records.
//!
//! A record is the emitted chirp, a damped 20 kHz speaker ring, a sparse
//! tapped-delay line of reflections each shaped by the room's narrowband
//! resonators, white noise, and optionally an interfering "music" track.
//! Everything is a pure function of the profile, the capture context and a
//! 64-bit seed.

use std::collections::HashSet;
use std::f64::consts::{LN_10, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioRecord, CARRIER_HZ, CHIRP_SAMPLES, ECHO_SAMPLES, RECORD_SAMPLES, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::nn::network::mix;
use crate::scalar::Scalar;

const FS: f64 = SAMPLE_RATE_HZ as f64;
const ECHO_START: usize = RECORD_SAMPLES - ECHO_SAMPLES;
/// Stream tag for the interferer, so enabling it leaves every other draw alone.
const INTERFERER_STREAM: u64 = 0x1f7e_44fe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub freq_hz: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomProfile {
    pub room_id: String,
    /// Reflection delays after the chirp onset, strictly increasing, in (3, 90).
    pub path_delays_ms: Vec<f64>,
    /// Per-path gains in (0, 0.05] relative to the emitted chirp.
    pub path_gains: Vec<f64>,
    /// Two to four resonators between 19.5 and 20.5 kHz.
    pub resonance_peaks: Vec<Resonance>,
    /// Broadband attenuation in (0, 1) applied to every reflection.
    pub absorption: f64,
    /// Seeds the per-record variation of this room.
    pub seed: u64,
}

impl RoomProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("room `{}`: {msg}", self.room_id)));
        if self.path_delays_ms.len() < 3 {
            return bad("needs at least 3 reflection paths".into());
        }
        if self.path_delays_ms.len() != self.path_gains.len() {
            return bad("path delays and gains differ in length".into());
        }
        if self.path_delays_ms.iter().any(|&d| !(d > 3.0 && d < 90.0)) {
            return bad("path delays must lie in (3, 90) ms".into());
        }
        if self.path_delays_ms.windows(2).any(|w| w[1] <= w[0]) {
            return bad("path delays must be strictly increasing".into());
        }
        if self.path_gains.iter().any(|&g| !(g > 0.0 && g <= 0.05)) {
            return bad("path gains must lie in (0, 0.05]".into());
        }
        if !(2..=4).contains(&self.resonance_peaks.len()) {
            return bad("needs 2 to 4 resonance peaks".into());
        }
        if self
            .resonance_peaks
            .iter()
            .any(|r| !(19_500.0..=20_500.0).contains(&r.freq_hz) || !(r.q > 0.0 && r.q.is_finite()))
        {
            return bad("resonances must sit in [19.5, 20.5] kHz with a positive Q".into());
        }
        if !(self.absorption > 0.0 && self.absorption < 1.0) {
            return bad("absorption must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// A random valid profile.
    pub fn random(room_id: impl Into<String>, rng: &mut impl Rng) -> Self {
        let paths = rng.random_range(4..=7);
        let mut delays: Vec<f64> = Vec::with_capacity(paths);
        while delays.len() < paths {
            let d = rng.random_range(4.0..80.0);
            if delays.iter().all(|&e: &f64| (e - d).abs() > 6.0) {
                delays.push(d);
            }
        }
        delays.sort_by(f64::total_cmp);
        let first = rng.random_range(0.025..0.05);
        let decay = rng.random_range(0.7..0.9);
        let gains = (0..paths).map(|i| first * f64::powi(decay, i as i32)).collect();
        let peaks = rng.random_range(2..=4);
        let resonance_peaks = (0..peaks)
            .map(|_| Resonance {
                freq_hz: rng.random_range(19_900.0..20_100.0),
                q: rng.random_range(40.0..120.0),
            })
            .collect();
        Self {
            room_id: room_id.into(),
            path_delays_ms: delays,
            path_gains: gains,
            resonance_peaks,
            absorption: rng.random_range(0.1..0.5),
            seed: rng.random(),
        }
    }

    /// `n` distinct random profiles named `room-00`, `room-01`, ...
    pub fn defaults(n: usize, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| Self::random(format!("room-{i:02}"), &mut rng)).collect()
    }
}

/// How much one capture spot differs from another in the same room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpotJitter {
    /// Independent uniform offset of each path, ± this many ms.
    pub path_delay_ms: f64,
    /// Common uniform offset of all paths, ± this many ms.
    pub shift_ms: f64,
    /// Per-path gain perturbation, ± this many dB.
    pub path_gain_db: f64,
    /// Overall reflection level perturbation, ± this many dB.
    pub level_db: f64,
}

impl Default for SpotJitter {
    fn default() -> Self {
        Self {
            path_delay_ms: 1.0,
            shift_ms: 8.0,
            path_gain_db: 2.0,
            level_db: 3.0,
        }
    }
}

/// Multi-sine stand-in for background music.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Interferer {
    /// RMS amplitude of the whole track.
    pub rms: f64,
    /// Highest main component frequency.
    pub top_hz: f64,
    pub components: usize,
    /// Optional weak components between `top_hz` and this frequency.
    pub weak_to_hz: Option<f64>,
    /// Level of the weak components relative to the main ones.
    pub weak_db: f64,
}

impl Default for Interferer {
    fn default() -> Self {
        Self {
            rms: 0.1,
            top_hz: 19_000.0,
            components: 24,
            weak_to_hz: None,
            weak_db: -40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureContext {
    pub spot_jitter: SpotJitter,
    /// Duration of the speaker's damped ring after the chirp.
    pub ringing_ms: f64,
    /// Noise level relative to the reflection power; `None` is noiseless.
    pub snr_db: Option<f64>,
    pub interferer: Option<Interferer>,
    /// Recorded amplitude of the direct chirp.
    pub chirp_amplitude: f64,
}

impl Default for CaptureContext {
    fn default() -> Self {
        Self {
            spot_jitter: SpotJitter::default(),
            ringing_ms: 10.0,
            snr_db: Some(10.0),
            interferer: None,
            chirp_amplitude: 0.5,
        }
    }
}

impl CaptureContext {
    /// No jitter, no noise, no interferer.
    pub fn clean() -> Self {
        Self {
            spot_jitter: SpotJitter {
                path_delay_ms: 0.0,
                shift_ms: 0.0,
                path_gain_db: 0.0,
                level_db: 0.0,
            },
            snr_db: None,
            ..Self::default()
        }
    }

    pub fn with_interferer(&self, interferer: Interferer) -> Self {
        Self {
            interferer: Some(interferer),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..97.5).contains(&self.ringing_ms) {
            return Err(Error::Config("ringing_ms must lie in [0, 97.5)".into()));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("snr_db must be finite; omit it for a noiseless capture".into()));
            }
        }
        let j = &self.spot_jitter;
        if [j.path_delay_ms, j.shift_ms, j.path_gain_db, j.level_db]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("spot jitter scales must be finite and non-negative".into()));
        }
        if j.shift_ms + j.path_delay_ms > 30.0 {
            return Err(Error::Config("spot jitter may move a path by at most 30 ms".into()));
        }
        if !(self.chirp_amplitude > 0.0 && self.chirp_amplitude <= 1.0) {
            return Err(Error::Config("chirp_amplitude must lie in (0, 1]".into()));
        }
        match &self.interferer {
            Some(i) => i.validate(),
            None => Ok(()),
        }
    }
}

impl Interferer {
    pub fn validate(&self) -> Result<()> {
        let top = self.weak_to_hz.unwrap_or(self.top_hz).max(self.top_hz);
        if !(self.rms >= 0.0 && self.rms.is_finite()) || self.components == 0 {
            return Err(Error::Config("interferer needs a finite rms and at least one component".into()));
        }
        if !(self.top_hz > 100.0 && top < FS / 2.0) {
            return Err(Error::Config("interferer band must lie between 100 Hz and Nyquist".into()));
        }
        Ok(())
    }
}

/// Direct-form biquad band-pass with unit gain at the centre frequency.
struct Bandpass {
    b0: f64,
    a1: f64,
    a2: f64,
}

impl Bandpass {
    fn new(freq_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * freq_hz / FS;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Samples until the impulse response envelope falls below 1e-3.
    fn settle_samples(q: f64, freq_hz: f64) -> usize {
        let w0 = 2.0 * PI * freq_hz / FS;
        (3.0 * LN_10 * 2.0 * q / w0).ceil() as usize
    }

    /// Filters `x` into `out` (added), starting from rest.
    fn apply_add(&self, x: &[f64], out: &mut [f64], weight: f64) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for (o, &xn) in out.iter_mut().zip(x) {
            let y = self.b0 * (xn - x2) - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = xn;
            y2 = y1;
            y1 = y;
            *o += weight * y;
        }
    }
}

fn uniform_pm(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        rng.random_range(-scale..=scale)
    }
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// One record of `room` under `ctx`, fully determined by `seed`.
pub fn synth_record<T: Scalar>(room: &RoomProfile, ctx: &CaptureContext, seed: u64) -> Result<AudioRecord<T>> {
    room.validate()?;
    ctx.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0f64; RECORD_SAMPLES];
    let omega = 2.0 * PI * CARRIER_HZ;

    let chirp_len = CHIRP_SAMPLES as f64 / FS;
    for (n, v) in x.iter_mut().enumerate().take(CHIRP_SAMPLES) {
        *v = ctx.chirp_amplitude * (omega * n as f64 / FS).sin();
    }

    // Speaker ring: continues the carrier and decays to 1e-3 at `ringing_ms`.
    if ctx.ringing_ms > 0.0 {
        let tau = ctx.ringing_ms / 1000.0 / (1000f64).ln();
        let end = (CHIRP_SAMPLES + (ctx.ringing_ms / 1000.0 * FS) as usize).min(RECORD_SAMPLES);
        for (n, v) in x.iter_mut().enumerate().take(end).skip(CHIRP_SAMPLES) {
            let t = n as f64 / FS;
            *v += 0.3 * ctx.chirp_amplitude * (-(t - chirp_len) / tau).exp() * (omega * t).sin();
        }
    }

    let resonators: Vec<Bandpass> = room.resonance_peaks.iter().map(|r| Bandpass::new(r.freq_hz, r.q)).collect();
    let settle = room
        .resonance_peaks
        .iter()
        .map(|r| Bandpass::settle_samples(r.q, r.freq_hz))
        .max()
        .unwrap_or(0);
    let span = CHIRP_SAMPLES + 1 + settle;
    let jit = &ctx.spot_jitter;
    let shift = uniform_pm(&mut rng, jit.shift_ms);
    let level = db_to_amp(uniform_pm(&mut rng, jit.level_db)) * (1.0 - room.absorption);
    let norm = 1.0 / resonators.len() as f64;

    let mut reflections = vec![0.0f64; RECORD_SAMPLES];
    let mut dry = vec![0.0f64; span];
    let mut wet = vec![0.0f64; span];
    for (&delay_ms, &gain) in room.path_delays_ms.iter().zip(&room.path_gains) {
        let delay = (delay_ms + shift + uniform_pm(&mut rng, jit.path_delay_ms)).max(0.0) / 1000.0;
        let gain = gain * level * db_to_amp(uniform_pm(&mut rng, jit.path_gain_db));
        let start = (delay * FS).ceil() as usize;
        if start >= RECORD_SAMPLES {
            continue;
        }
        // Exact fractional delay of the analytic burst.
        for (i, d) in dry.iter_mut().enumerate() {
            let t = (start + i) as f64 / FS - delay;
            *d = if t < chirp_len {
                ctx.chirp_amplitude * gain * (omega * t).sin()
            } else {
                0.0
            };
        }
        wet.iter_mut().for_each(|w| *w = 0.0);
        for r in &resonators {
            r.apply_add(&dry, &mut wet, norm);
        }
        let end = (start + span).min(RECORD_SAMPLES);
        for (o, &w) in reflections[start..end].iter_mut().zip(&wet) {
            *o += w;
        }
    }

    if let Some(snr) = ctx.snr_db {
        let power = reflections[ECHO_START..].iter().map(|v| v * v).sum::<f64>() / ECHO_SAMPLES as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    for (v, r) in x.iter_mut().zip(&reflections) {
        *v += r;
    }

    if let Some(spec) = &ctx.interferer {
        let mut irng = ChaCha8Rng::seed_from_u64(mix(seed, INTERFERER_STREAM));
        let track = interferer_track(spec, &mut irng);
        for (v, t) in x.iter_mut().zip(&track) {
            *v += t;
        }
    }

    for v in x.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    AudioRecord::new(x.into_iter().map(T::of).collect())
}

/// Adds the interferer track that `synth_record` would mix into a record
/// with this seed, then clips.
pub fn add_interference<T: Scalar>(record: &AudioRecord<T>, spec: &Interferer, seed: u64) -> Result<AudioRecord<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, INTERFERER_STREAM));
    let track = interferer_track(spec, &mut rng);
    AudioRecord::new(
        record
            .samples()
            .iter()
            .zip(&track)
            .map(|(&v, t)| T::of((v.as_f64() + t).clamp(-1.0, 1.0)))
            .collect(),
    )
}

/// Slowly amplitude-modulated sines with roughly 1/f amplitudes.
fn interferer_track(spec: &Interferer, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lo: f64 = 100.0;
    let mut parts: Vec<(f64, f64, f64, f64, f64)> = (0..spec.components)
        .map(|_| {
            let f = (rng.random_range(lo.ln()..spec.top_hz.ln())).exp();
            (f, 1.0 / f.sqrt(), rng.random_range(0.0..2.0 * PI), rng.random_range(1.0..8.0), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let mut x = vec![0.0f64; RECORD_SAMPLES];
    let render = |x: &mut [f64], parts: &[(f64, f64, f64, f64, f64)]| {
        for &(f, a, phase, am, am_phase) in parts {
            let (w, wam) = (2.0 * PI * f / FS, 2.0 * PI * am / FS);
            for (n, v) in x.iter_mut().enumerate() {
                let n = n as f64;
                *v += a * (1.0 + 0.5 * (wam * n + am_phase).sin()) * (w * n + phase).sin();
            }
        }
    };
    render(&mut x, &parts);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let scale = if rms > 0.0 { spec.rms / rms } else { 0.0 };
    x.iter_mut().for_each(|v| *v *= scale);

    if let Some(hi) = spec.weak_to_hz.filter(|&hi| hi > spec.top_hz) {
        let weak = db_to_amp(spec.weak_db) * spec.rms * (2.0f64 / 4.0).sqrt();
        parts = (0..4)
            .map(|_| {
                let f = rng.random_range(spec.top_hz..hi);
                (f, weak, rng.random_range(0.0..2.0 * PI), rng.random_range(1.0..8.0), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        let mut extra = vec![0.0f64; RECORD_SAMPLES];
        render(&mut extra, &parts);
        for (v, e) in x.iter_mut().zip(&extra) {
            *v += e;
        }
    }
    x
}

/// Seed of record `index` of room `room_index`.
pub fn record_seed(master: u64, room_index: usize, room: &RoomProfile, index: usize) -> u64 {
    mix(mix(mix(master, room_index as u64), room.seed), index as u64)
}

/// `per_room` records of every room, in room order, generated in parallel.
pub fn synth_corpus<T: Scalar>(
    rooms: &[RoomProfile],
    per_room: usize,
    ctx: &CaptureContext,
    master_seed: u64,
) -> Result<Vec<(String, AudioRecord<T>)>> {
    synth_corpus_range(rooms, 0..per_room, ctx, master_seed)
}

/// Records `indices` of every room. Slicing the index range lets callers
/// add records to a corpus without regenerating it.
pub fn synth_corpus_range<T: Scalar>(
    rooms: &[RoomProfile],
    indices: std::ops::Range<usize>,
    ctx: &CaptureContext,
    master_seed: u64,
) -> Result<Vec<(String, AudioRecord<T>)>> {
    if indices.is_empty() {
        return Err(Error::Argument("per_room must be at least 1".into()));
    }
    let mut ids = HashSet::new();
    for r in rooms {
        if !ids.insert(r.room_id.as_str()) {
            return Err(Error::Argument(format!("duplicate room_id `{}`", r.room_id)));
        }
        r.validate()?;
    }
    ctx.validate()?;
    let jobs: Vec<(usize, usize)> = (0..rooms.len())
        .flat_map(|r| indices.clone().map(move |i| (r, i)))
        .collect();
    jobs.par_iter()
        .map(|&(r, i)| {
            let room = &rooms[r];
            Ok((room.room_id.clone(), synth_record(room, ctx, record_seed(master_seed, r, room, i))?))
        })
        .collect()
}

/// Everything needed to regenerate a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    /// Explicit profiles; when empty, `room_count` default profiles are drawn.
    pub rooms: Vec<RoomProfile>,
    pub room_count: usize,
    pub per_room: usize,
    pub context: CaptureContext,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            rooms: Vec::new(),
            room_count: 10,
            per_room: 1000,
            context: CaptureContext::default(),
            seed: 1,
        }
    }
}

impl SimSpec {
    pub fn profiles(&self) -> Vec<RoomProfile> {
        if self.rooms.is_empty() {
            RoomProfile::defaults(self.room_count, self.seed)
        } else {
            self.rooms.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("sim spec", e.to_string()))
    }
}
