use super::DspError;
use crate::audio_io::AudioBuffer;
use std::f64::consts::PI;

/// Linear-phase low-pass FIR.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    /// Cutoff as a fraction of the input sample rate, in (0, 0.5).
    pub cutoff_norm: f64,
}

impl FirFilter {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Magnitude response at normalized frequency `f` (cycles per sample).
    pub fn magnitude_at(&self, f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &h) in self.taps.iter().enumerate() {
            let phase = -2.0 * PI * f * n as f64;
            re += h * phase.cos();
            im += h * phase.sin();
        }
        re.hypot(im)
    }
}

/// Hamming-windowed sinc low-pass with unit DC gain.
pub fn design_lowpass(cutoff_norm: f64, num_taps: usize) -> Result<FirFilter, DspError> {
    if !(cutoff_norm > 0.0 && cutoff_norm < 0.5) {
        return Err(DspError::InvalidFilterSpec(format!(
            "cutoff {cutoff_norm} outside (0, 0.5)"
        )));
    }
    if num_taps < 11 || num_taps.is_multiple_of(2) {
        return Err(DspError::InvalidFilterSpec(format!(
            "tap count {num_taps} must be odd and at least 11"
        )));
    }
    let m = (num_taps - 1) as f64;
    let center = (num_taps - 1) / 2;
    let mut taps = vec![0.0; num_taps];
    // Fill one half and mirror so the filter is symmetric bit for bit.
    for n in 0..=center {
        let k = n as f64 - m / 2.0;
        let ideal = if n == center {
            2.0 * cutoff_norm
        } else {
            (2.0 * PI * cutoff_norm * k).sin() / (PI * k)
        };
        let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos();
        taps[n] = ideal * window;
        taps[num_taps - 1 - n] = taps[n];
    }
    let dc: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= dc;
    }
    Ok(FirFilter { taps, cutoff_norm })
}

/// Low-pass filters with a centered, zero-padded convolution and keeps every
/// `factor`-th sample.
pub fn decimate(buffer: &AudioBuffer, factor: usize, filter: &FirFilter) -> Result<AudioBuffer, DspError> {
    if factor == 0 {
        return Err(DspError::InvalidFilterSpec("decimation factor must be >= 1".into()));
    }
    let limit = 0.5 / factor as f64 * 0.9;
    if filter.cutoff_norm > limit + 1e-12 {
        return Err(DspError::CutoffTooHigh {
            cutoff: filter.cutoff_norm,
            limit,
        });
    }
    if !buffer.sample_rate_hz.is_multiple_of(factor as u32) {
        return Err(DspError::InvalidFilterSpec(format!(
            "sample rate {} not divisible by {factor}",
            buffer.sample_rate_hz
        )));
    }
    let x = &buffer.samples;
    let n = x.len();
    let half = (filter.taps.len() / 2) as isize;
    let out_len = n.div_ceil(factor);
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let center = (j * factor) as isize;
        let mut acc = 0.0f64;
        for (k, &h) in filter.taps.iter().enumerate() {
            let idx = center + half - k as isize;
            if idx >= 0 && (idx as usize) < n {
                acc += h * x[idx as usize] as f64;
            }
        }
        out.push(acc as f32);
    }
    Ok(AudioBuffer::new(
        out,
        buffer.sample_rate_hz / factor as u32,
        buffer.source_id.clone(),
    ))
}
