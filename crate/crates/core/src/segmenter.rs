//! Fixed-length analysis windows cut from a recording.
//!
//! Two policies are supported. Without an end time a single window is taken
//! at the offset (one clip per recording). With an end time, contiguous
//! windows are taken from the offset until the end time or the end of the
//! recording, whichever comes first. Partial trailing windows are dropped.

use crate::audio_io::AudioBuffer;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("recording of {duration_s:.3} s is too short for a window ending at {needed_s:.3} s")]
    RecordingTooShort { duration_s: f64, needed_s: f64 },
    #[error("window [{start_s}, {end_s}) lies outside a {duration_s:.3} s buffer")]
    WindowOutOfRange {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("invalid segment policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPolicy {
    pub offset_s: f64,
    pub window_s: f64,
    pub end_s: Option<f64>,
}

impl SegmentPolicy {
    /// One 15 s clip starting at the 60th second.
    pub fn single_clip() -> Self {
        Self {
            offset_s: 60.0,
            window_s: 15.0,
            end_s: None,
        }
    }

    /// Contiguous 15 s clips from the 60th second up to the 7th minute.
    pub fn contiguous() -> Self {
        Self {
            end_s: Some(420.0),
            ..Self::single_clip()
        }
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |m: String| Err(SegmentError::InvalidPolicy(m));
        if !(self.window_s > 0.0) || !self.window_s.is_finite() {
            return bad(format!("window {} s must be positive", self.window_s));
        }
        if !(self.offset_s >= 0.0) || !self.offset_s.is_finite() {
            return bad(format!("offset {} s must be non-negative", self.offset_s));
        }
        if let Some(end) = self.end_s {
            if !(end >= self.offset_s + self.window_s) {
                return bad(format!(
                    "end {end} s leaves no room for a {} s window after offset {} s",
                    self.window_s, self.offset_s
                ));
            }
        }
        Ok(())
    }
}

impl Default for SegmentPolicy {
    fn default() -> Self {
        Self::single_clip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentWindow {
    pub start_s: f64,
    pub end_s: f64,
    pub index: usize,
}

impl SegmentWindow {
    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

// Tolerance for accumulated floating error when comparing window ends to the duration.
const EDGE_EPS: f64 = 1e-9;

pub fn plan_segments(duration_s: f64, policy: &SegmentPolicy) -> Result<Vec<SegmentWindow>, SegmentError> {
    policy.validate()?;
    let first_end = policy.offset_s + policy.window_s;
    if duration_s + EDGE_EPS < first_end {
        return Err(SegmentError::RecordingTooShort {
            duration_s,
            needed_s: first_end,
        });
    }
    let limit = match policy.end_s {
        None => first_end,
        Some(end) => end.min(duration_s),
    };
    let count = (((limit - policy.offset_s) / policy.window_s) + EDGE_EPS).floor() as usize;
    Ok((0..count)
        .map(|k| SegmentWindow {
            start_s: policy.offset_s + k as f64 * policy.window_s,
            end_s: policy.offset_s + (k + 1) as f64 * policy.window_s,
            index: k,
        })
        .collect())
}

fn to_sample(t: f64, rate: u32) -> usize {
    (t * rate as f64).round() as usize
}

/// Copies the samples of `window` out of `buffer`.
pub fn extract_segment(buffer: &AudioBuffer, window: &SegmentWindow) -> Result<AudioBuffer, SegmentError> {
    let out_of_range = || SegmentError::WindowOutOfRange {
        start_s: window.start_s,
        end_s: window.end_s,
        duration_s: buffer.duration_s(),
    };
    if !(window.start_s >= 0.0) || !(window.end_s > window.start_s) {
        return Err(out_of_range());
    }
    let rate = buffer.sample_rate_hz;
    let start = to_sample(window.start_s, rate);
    let len = to_sample(window.len_s(), rate);
    let end = start + len;
    if end > buffer.len() {
        return Err(out_of_range());
    }
    Ok(AudioBuffer::new(
        buffer.samples[start..end].to_vec(),
        rate,
        format!("{}#{}", buffer.source_id, window.index),
    ))
}

/// Plans and extracts every window of a buffer.
pub fn segment_buffer(buffer: &AudioBuffer, policy: &SegmentPolicy) -> Result<Vec<AudioBuffer>, SegmentError> {
    plan_segments(buffer.duration_s(), policy)?
        .iter()
        .map(|w| extract_segment(buffer, w))
        .collect()
}
