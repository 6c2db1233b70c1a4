//! Synthetic stand-in corpus.
//!
//! Depressed-class files are low harmonic tones with slow amplitude and
//! frequency modulation and a dark spectral tilt; non-depressed files are
//! higher, unmodulated harmonic tones over white noise. The two classes are
//! separable in the spectrogram domain by construction.

use super::{DatasetError, Label, Manifest, SampleRecord};
use crate::audio_io::{encode_wav, AudioBuffer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;
use std::path::Path;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_depressed: usize,
    pub n_non_depressed: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl SynthConfig {
    pub fn per_class(n: usize, seed: u64) -> Self {
        Self {
            n_depressed: n,
            n_non_depressed: n,
            duration_s: 90.0,
            sample_rate_hz: 16_000,
            seed,
        }
    }
}

const HARMONICS: usize = 12;

/// Synthesizes one recording of the given class.
pub fn synth_clip(label: Label, duration_s: f64, sample_rate_hz: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let rate = sample_rate_hz as f64;
    let nyquist = rate / 2.0;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(n);
    match label {
        Label::Depressed => {
            let f0 = rng.gen_range(95.0..135.0);
            let fm_rate = rng.gen_range(0.2..0.5);
            let am_rate = rng.gen_range(0.3..0.8);
            let am_phase = rng.gen_range(0.0..TAU);
            let amps: Vec<f64> = (1..=HARMONICS).map(|k| 1.0 / (k as f64).powf(1.5)).collect();
            let norm = 0.7 / amps.iter().sum::<f64>();
            let mut phase = 0.0f64;
            for i in 0..n {
                let t = i as f64 / rate;
                let f = f0 * (1.0 + 0.08 * (TAU * fm_rate * t).sin());
                phase = (phase + f / rate).fract();
                let env = 0.55 + 0.45 * (TAU * am_rate * t + am_phase).sin();
                let mut s = 0.0;
                for (k, a) in amps.iter().enumerate() {
                    if f * (k + 1) as f64 >= nyquist {
                        break;
                    }
                    s += a * (TAU * (k + 1) as f64 * phase).sin();
                }
                out.push((norm * env * s + 0.003 * noise.sample(rng)) as f32);
            }
        }
        Label::NonDepressed => {
            let f0 = rng.gen_range(170.0..260.0);
            let amps: Vec<f64> = (1..=HARMONICS).map(|k| 1.0 / k as f64).collect();
            let norm = 0.5 / amps.iter().sum::<f64>();
            let step = f0 / rate;
            for i in 0..n {
                let phase = (step * i as f64).fract();
                let mut s = 0.0;
                for (k, a) in amps.iter().enumerate() {
                    if f0 * (k + 1) as f64 >= nyquist {
                        break;
                    }
                    s += a * (TAU * (k + 1) as f64 * phase).sin();
                }
                out.push((norm * s + 0.05 * noise.sample(rng)) as f32);
            }
        }
    }
    for s in &mut out {
        *s = s.clamp(-1.0, 32767.0 / 32768.0);
    }
    out
}

/// Writes the corpus WAV files and `manifest.csv` into `out_dir`.
pub fn generate_corpus(config: &SynthConfig, out_dir: &Path) -> Result<Manifest, DatasetError> {
    let total = config.n_depressed + config.n_non_depressed;
    if total == 0 {
        return Err(DatasetError::InvalidArgument("corpus needs at least one file".into()));
    }
    if !(config.duration_s > 0.0) || config.sample_rate_hz == 0 {
        return Err(DatasetError::InvalidArgument("duration and sample rate must be positive".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| DatasetError::io(out_dir, e))?;

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Depressed, config.n_depressed)
        .chain(std::iter::repeat_n(Label::NonDepressed, config.n_non_depressed))
        .collect();
    labels.shuffle(&mut master);
    let scores: Vec<u8> = labels
        .iter()
        .map(|l| match l {
            Label::Depressed => master.gen_range(10..=24),
            Label::NonDepressed => master.gen_range(0..=9),
        })
        .collect();

    let mut records = Vec::with_capacity(total);
    for (i, (&label, &phq8)) in labels.iter().zip(&scores).enumerate() {
        let pid = format!("{}", 300 + i);
        let file = format!("{pid}_AUDIO.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);
        let samples = synth_clip(label, config.duration_s, config.sample_rate_hz, &mut rng);
        let bytes = encode_wav(&AudioBuffer::new(samples, config.sample_rate_hz, pid.clone()));
        let path = out_dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| DatasetError::io(&path, e))?;
        records.push(SampleRecord::new(pid, file, phq8));
    }
    let mut manifest = Manifest::new(records);
    manifest.seed = config.seed;
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    manifest.base_dir = Some(out_dir.to_path_buf());
    Ok(manifest)
}

/// `n_per_class` files of each class, 90 s at 16 kHz.
pub fn generate_synthetic_corpus(n_per_class: usize, seed: u64, out_dir: &Path) -> Result<Manifest, DatasetError> {
    if n_per_class == 0 {
        return Err(DatasetError::InvalidArgument("n_per_class must be >= 1".into()));
    }
    generate_corpus(&SynthConfig::per_class(n_per_class, seed), out_dir)
}
