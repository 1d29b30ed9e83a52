//! 16-bit PCM mono 44.1 kHz WAV files holding one or more consecutive records.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioRecord, RECORD_SAMPLES, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FULL_SCALE: f64 = 32_768.0;

fn spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn hound_error(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::format("data", e.to_string()),
        other => Error::format("header", other.to_string()),
    }
}

/// Anything that stops the header from parsing, a short read included.
fn header_error(err: hound::Error) -> Error {
    Error::format("header", err.to_string())
}

fn decode<R: Read, T: Scalar>(reader: WavReader<R>) -> Result<Vec<AudioRecord<T>>> {
    let s = reader.spec();
    if s.channels != 1 {
        return Err(Error::format("channels", format!("expected 1 (mono), found {}", s.channels)));
    }
    if s.sample_rate != SAMPLE_RATE_HZ {
        return Err(Error::format(
            "sample_rate",
            format!("expected {SAMPLE_RATE_HZ} Hz, found {}", s.sample_rate),
        ));
    }
    if s.sample_format != SampleFormat::Int || s.bits_per_sample != 16 {
        return Err(Error::format(
            "bits_per_sample",
            format!("expected 16-bit integer PCM, found {}-bit {:?}", s.bits_per_sample, s.sample_format),
        ));
    }
    let declared = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|r| r.map(|v| T::of(v as f64 / FULL_SCALE)))
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(hound_error)?;
    if samples.len() != declared {
        return Err(Error::format(
            "data",
            format!("truncated: header declares {declared} samples, found {}", samples.len()),
        ));
    }
    if samples.len() % RECORD_SAMPLES != 0 {
        return Err(Error::format(
            "data",
            format!("{} samples is not a whole number of {RECORD_SAMPLES}-sample records", samples.len()),
        ));
    }
    samples
        .chunks_exact(RECORD_SAMPLES)
        .map(|c| AudioRecord::new(c.to_vec()))
        .collect()
}

fn encode<W: Write + Seek, T: Scalar>(records: &[AudioRecord<T>], out: W) -> Result<()> {
    let mut writer = WavWriter::new(out, spec()).map_err(hound_error)?;
    for rec in records {
        for &s in rec.samples() {
            let q = (s.as_f64() * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0);
            writer.write_sample(q as i16).map_err(hound_error)?;
        }
    }
    writer.finalize().map_err(hound_error)
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<AudioRecord<T>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode(WavReader::new(std::io::BufReader::new(file)).map_err(header_error)?)
}

pub fn write<T: Scalar>(records: &[AudioRecord<T>], path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(records)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Vec<AudioRecord<T>>> {
    decode(WavReader::new(Cursor::new(bytes)).map_err(header_error)?)
}

pub fn to_bytes<T: Scalar>(records: &[AudioRecord<T>]) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::with_capacity(44 + records.len() * RECORD_SAMPLES * 2));
    encode(records, &mut cursor)?;
    Ok(cursor.into_inner())
}
