//! Speech-to-spectrogram pipeline and compact residual CNN fine-tuning for
//! binary depression screening from voice recordings.
//!
//! Stages: [`audio_io`] decodes PCM16 WAV, [`segmenter`] cuts fixed windows,
//! [`dsp`] filters, decimates and renders spectrogram images, [`dataset`]
//! handles manifests and augmentation, [`nn`] is the residual network,
//! [`trainer`] runs the staged fine-tuning procedure and [`metrics`] scores
//! predictions.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio_io;
pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod metrics;
pub mod nn;
pub mod segmenter;
pub mod trainer;
