use super::{AudioRecord, EchoFrame, FrameLayout};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Splits a record into its chirp, guard and echo parts.
pub fn segment_record<'a, T: Scalar>(
    rec: &'a AudioRecord<T>,
    layout: &FrameLayout,
) -> Result<(&'a [T], &'a [T], EchoFrame<T>)> {
    let samples = rec.samples();
    if samples.len() != layout.total() {
        return Err(Error::Framing {
            expected: layout.total(),
            actual: samples.len(),
        });
    }
    let (chirp, rest) = samples.split_at(layout.chirp_samples);
    let (guard, echo) = rest.split_at(layout.guard_samples);
    Ok((chirp, guard, EchoFrame::new(echo.to_vec())?))
}
