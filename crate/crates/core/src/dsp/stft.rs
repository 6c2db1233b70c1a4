use super::DspError;
use crate::audio_io::AudioBuffer;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Added to magnitudes before taking the log.
pub const LOG_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    #[default]
    Hann,
}

impl WindowFn {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
    pub db_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 128,
            window_fn: WindowFn::Hann,
            db_floor: -80.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(DspError::InvalidConfig(format!(
                "fft size {} must be a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(DspError::InvalidConfig(format!(
                "hop {} must be in 1..={}",
                self.hop, self.fft_size
            )));
        }
        if !self.db_floor.is_finite() {
            return Err(DspError::InvalidConfig("db floor must be finite".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// One-sided STFT frames, `frames[k][m]` for bins `m = 0..=fft_size/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StftFrames {
    pub frames: Vec<Vec<Complex64>>,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `values[frame][bin]` in dB.
    pub values: Vec<Vec<f64>>,
    pub bin_hz: f64,
    pub frame_s: f64,
    pub db_floor: f64,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.len()
    }

    pub fn n_bins(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

pub fn stft(buffer: &AudioBuffer, config: &SpectrogramConfig) -> Result<StftFrames, DspError> {
    config.validate()?;
    let n = config.fft_size;
    if buffer.len() < n {
        return Err(DspError::SignalTooShort {
            len: buffer.len(),
            needed: n,
        });
    }
    let n_frames = (buffer.len() - n) / config.hop + 1;
    let window = config.window_fn.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::default(); n];
    for k in 0..n_frames {
        let start = k * config.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(buffer.samples[start + i] as f64 * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..=n / 2].to_vec());
    }
    Ok(StftFrames {
        frames,
        fft_size: n,
        hop: config.hop,
        sample_rate_hz: buffer.sample_rate_hz,
    })
}

/// dB magnitude spectrogram, `20 log10(|X| + eps)` clamped at the floor.
pub fn spectrogram(buffer: &AudioBuffer, config: &SpectrogramConfig) -> Result<Spectrogram, DspError> {
    let frames = stft(buffer, config)?;
    let values = frames
        .frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|c| (20.0 * (c.norm() + LOG_EPS).log10()).max(config.db_floor))
                .collect()
        })
        .collect();
    Ok(Spectrogram {
        values,
        bin_hz: buffer.sample_rate_hz as f64 / config.fft_size as f64,
        frame_s: config.hop as f64 / buffer.sample_rate_hz as f64,
        db_floor: config.db_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(bin: usize, cfg: &SpectrogramConfig, rate: u32, len: usize, amp: f64) -> AudioBuffer {
        let f = bin as f64 * rate as f64 / cfg.fft_size as f64;
        let s = (0..len)
            .map(|i| (amp * (2.0 * PI * f * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioBuffer::new(s, rate, "tone")
    }

    /// Plain O(n^2) DFT used as an independent reference.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::default(), |acc, (t, &v)| {
                    let a = -2.0 * PI * (k * t % n) as f64 / n as f64;
                    acc + Complex64::new(v * a.cos(), v * a.sin())
                })
            })
            .collect()
    }

    #[test]
    fn frame_count_and_bins() {
        let cfg = SpectrogramConfig::default();
        let buf = AudioBuffer::new(vec![0.0; 8000 * 15], 8000, "x");
        let f = stft(&buf, &cfg).unwrap();
        assert_eq!(f.frames.len(), (120_000 - 512) / 128 + 1);
        assert_eq!(f.frames.len(), 934);
        assert!(f.frames.iter().all(|fr| fr.len() == 257));
    }

    #[test]
    fn bin_center_sine_peaks_at_its_bin() {
        let cfg = SpectrogramConfig::default();
        for bin in [5usize, 37, 100, 200] {
            let f = stft(&tone(bin, &cfg, 8000, 4096, 0.5), &cfg).unwrap();
            for frame in &f.frames {
                let argmax = frame
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                    .unwrap()
                    .0;
                assert_eq!(argmax, bin);
            }
        }
    }

    #[test]
    fn zero_signal_gives_zero_frames_and_floor() {
        let cfg = SpectrogramConfig::default();
        let buf = AudioBuffer::new(vec![0.0; 2048], 8000, "z");
        let f = stft(&buf, &cfg).unwrap();
        assert!(f.frames.iter().flatten().all(|c| c.norm() == 0.0));
        let s = spectrogram(&buf, &cfg).unwrap();
        assert!(s.values.iter().flatten().all(|&v| v == cfg.db_floor));
    }

    #[test]
    fn matches_naive_dft() {
        let cfg = SpectrogramConfig { fft_size: 64, hop: 32, ..Default::default() };
        let s: Vec<f32> = (0..200).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        let buf = AudioBuffer::new(s.clone(), 1000, "r");
        let f = stft(&buf, &cfg).unwrap();
        let w = cfg.window_fn.coefficients(64);
        for (k, frame) in f.frames.iter().enumerate() {
            let x: Vec<f64> = (0..64).map(|i| s[k * 32 + i] as f64 * w[i]).collect();
            let reference = naive_dft(&x);
            for m in 0..=32 {
                assert!((frame[m] - reference[m]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn parseval_per_frame() {
        let cfg = SpectrogramConfig::default();
        let s: Vec<f32> = (0..3000)
            .map(|i| ((i as f64 * 0.37).sin() * 0.6 + (i as f64 * 1.91).cos() * 0.3) as f32)
            .collect();
        let buf = AudioBuffer::new(s.clone(), 8000, "p");
        let f = stft(&buf, &cfg).unwrap();
        let w = cfg.window_fn.coefficients(512);
        for (k, frame) in f.frames.iter().enumerate() {
            let time: f64 = (0..512).map(|i| (s[k * 128 + i] as f64 * w[i]).powi(2)).sum();
            // Rebuild the two-sided spectrum from the one-sided half (real input).
            let mut freq = frame[0].norm_sqr() + frame[256].norm_sqr();
            freq += 2.0 * frame[1..256].iter().map(|c| c.norm_sqr()).sum::<f64>();
            let rel = (time - freq / 512.0).abs() / time;
            assert!(rel <= 1e-6, "frame {k}: rel {rel}");
        }
    }

    #[test]
    fn unit_sine_peak_level() {
        let cfg = SpectrogramConfig::default();
        let s = spectrogram(&tone(64, &cfg, 8000, 2048, 1.0), &cfg).unwrap();
        // Hann coherent gain is 0.5, so the peak is 20 log10(256 * 0.5).
        let expected = 20.0 * (512.0f64 / 2.0 * 0.5).log10();
        for frame in &s.values {
            assert!((frame[64] - expected).abs() <= 0.5, "{} vs {}", frame[64], expected);
        }
    }

    #[test]
    fn doubling_amplitude_adds_six_db() {
        let cfg = SpectrogramConfig::default();
        let mk = |amp: f64| {
            let s = (0..4096)
                .map(|i| (amp * ((i as f64 * 0.21).sin() + 0.4 * (i as f64 * 0.05).cos())) as f32)
                .collect();
            spectrogram(&AudioBuffer::new(s, 8000, "a"), &cfg).unwrap()
        };
        let a = mk(0.2);
        let b = mk(0.4);
        let mut checked = 0;
        for (fa, fb) in a.values.iter().zip(&b.values) {
            for (&va, &vb) in fa.iter().zip(fb) {
                if va > cfg.db_floor + 10.0 {
                    assert!((vb - va - 6.0206).abs() <= 0.01, "{va} -> {vb}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn too_short_and_bad_config() {
        let cfg = SpectrogramConfig::default();
        let buf = AudioBuffer::new(vec![0.0; 100], 8000, "s");
        assert!(matches!(stft(&buf, &cfg), Err(DspError::SignalTooShort { .. })));
        let bad = SpectrogramConfig { fft_size: 500, ..cfg };
        assert!(matches!(stft(&buf, &bad), Err(DspError::InvalidConfig(_))));
        let bad = SpectrogramConfig { hop: 0, ..cfg };
        assert!(matches!(stft(&buf, &bad), Err(DspError::InvalidConfig(_))));
    }
}
