#![allow(dead_code)]

use depvoice::audio_io::AudioBuffer;
use depvoice::dataset::{synth_clip, ImageSet, Label};
use depvoice::dsp::RenderPipeline;
use depvoice::nn::{Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Renders `n_per_class` synthetic 15 s clips per class straight to images,
/// alternating labels.
pub fn synthetic_images(n_per_class: usize, size: usize, seed: u64) -> ImageSet {
    let pipeline = RenderPipeline {
        out_size: size,
        ..RenderPipeline::default()
    };
    let mut set = ImageSet::default();
    for i in 0..2 * n_per_class {
        let label = if i % 2 == 0 { Label::Depressed } else { Label::NonDepressed };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let clip = AudioBuffer::new(synth_clip(label, 15.0, 16_000, &mut rng), 16_000, format!("s{i}"));
        set.push(format!("s{i}"), pipeline.run(&clip).expect("render"), label);
    }
    set
}

pub fn tiny_config(size: usize) -> ModelConfig {
    ModelConfig {
        stage_blocks: vec![1, 1, 1],
        stage_channels: vec![4, 8, 8],
        input_size: size,
        arch_tag: "test".into(),
        ..ModelConfig::default()
    }
}

pub fn tiny_model(size: usize, seed: u64) -> Model<f32> {
    Model::build(&tiny_config(size), seed).expect("valid config")
}
