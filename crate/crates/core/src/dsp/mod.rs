//! Anti-alias filtering, decimation, STFT, dB spectrograms and image rendering.

mod filter;
mod render;
mod stft;

pub use filter::{decimate, design_lowpass, FirFilter};
pub use render::{render_image, resize_bilinear, ColormapSpec, ImageTensor};
pub use stft::{spectrogram, stft, Spectrogram, SpectrogramConfig, StftFrames, WindowFn, LOG_EPS};

use crate::audio_io::AudioBuffer;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid filter spec: {0}")]
    InvalidFilterSpec(String),
    #[error("cutoff {cutoff} exceeds the anti-alias limit {limit} for this factor")]
    CutoffTooHigh { cutoff: f64, limit: f64 },
    #[error("signal of {len} samples is shorter than the {needed}-sample frame")]
    SignalTooShort { len: usize, needed: usize },
    #[error("invalid spectrogram config: {0}")]
    InvalidConfig(String),
    #[error("spectrogram has no cells")]
    EmptySpectrogram,
    #[error("invalid colormap: {0}")]
    InvalidColormap(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image io: {0}")]
    Image(String),
}

/// Settings for turning one audio clip into a CNN input image.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderPipeline {
    pub decimate_factor: usize,
    pub filter_taps: usize,
    pub spectrogram: SpectrogramConfig,
    pub out_size: usize,
    pub colormap: ColormapSpec,
}

impl Default for RenderPipeline {
    fn default() -> Self {
        Self {
            decimate_factor: 2,
            filter_taps: 63,
            spectrogram: SpectrogramConfig::default(),
            out_size: 224,
            colormap: ColormapSpec::Grayscale,
        }
    }
}

impl RenderPipeline {
    /// Cutoff used for a given factor: 0.45 / factor of the input rate.
    pub fn cutoff_for(factor: usize) -> f64 {
        0.45 / factor as f64
    }

    pub fn run(&self, clip: &AudioBuffer) -> Result<ImageTensor, DspError> {
        let audio = if self.decimate_factor > 1 {
            let filter = design_lowpass(Self::cutoff_for(self.decimate_factor), self.filter_taps)?;
            decimate(clip, self.decimate_factor, &filter)?
        } else {
            clip.clone()
        };
        let spec = spectrogram(&audio, &self.spectrogram)?;
        render_image(&spec, self.out_size, &self.colormap)
    }
}
