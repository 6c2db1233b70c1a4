use crate::dsp::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Spectrogram-safe augmentations. Horizontal flips are deliberately absent:
/// the horizontal axis is time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub time_shift_frac: f64,
    pub time_mask_frac: f64,
    pub freq_mask_frac: f64,
    pub brightness_delta: f64,
    pub rng_seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            time_shift_frac: 0.1,
            time_mask_frac: 0.1,
            freq_mask_frac: 0.1,
            brightness_delta: 0.1,
            rng_seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("time_shift_frac", self.time_shift_frac),
            ("time_mask_frac", self.time_mask_frac),
            ("freq_mask_frac", self.freq_mask_frac),
            ("brightness_delta", self.brightness_delta),
        ] {
            if !(0.0..=0.5).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 0.5]"));
            }
        }
        Ok(())
    }
}

/// Applies draw number `draw` of the augmentation family. Draw 0 is the
/// identity; any other draw is a deterministic function of `(spec, draw)`.
pub fn augment(image: &ImageTensor, spec: &AugmentSpec, draw: u64) -> ImageTensor {
    if draw == 0 {
        return image.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(draw);
    let (h, w) = (image.height, image.width);

    let max_shift = (spec.time_shift_frac * w as f64).floor() as i64;
    let shift = if max_shift > 0 { rng.gen_range(-max_shift..=max_shift) } else { 0 };
    let mut out = ImageTensor::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let src = (c as i64 - shift).rem_euclid(w as i64) as usize;
            let (d, s) = (out.index(r, c, 0), image.index(r, src, 0));
            out.pixels[d..d + 3].copy_from_slice(&image.pixels[s..s + 3]);
        }
    }

    let band = |rng: &mut ChaCha8Rng, frac: f64, n: usize| -> (usize, usize) {
        let max_w = (frac * n as f64).floor() as usize;
        let width = if max_w > 0 { rng.gen_range(0..=max_w) } else { 0 };
        let start = rng.gen_range(0..=n - width);
        (start, start + width)
    };
    let (c0, c1) = band(&mut rng, spec.time_mask_frac, w);
    let (r0, r1) = band(&mut rng, spec.freq_mask_frac, h);
    for r in 0..h {
        for c in 0..w {
            if (c0..c1).contains(&c) || (r0..r1).contains(&r) {
                let d = out.index(r, c, 0);
                out.pixels[d..d + 3].fill(0.0);
            }
        }
    }

    let delta = if spec.brightness_delta > 0.0 {
        rng.gen_range(-spec.brightness_delta..=spec.brightness_delta) as f32
    } else {
        0.0
    };
    for p in &mut out.pixels {
        *p = (*p + delta).clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        let gray: Vec<f32> = (0..h * w).map(|i| (i % 97) as f32 / 96.0).collect();
        ImageTensor::from_gray(&gray, h, w)
    }

    #[test]
    fn draw_zero_is_identity() {
        let img = ramp(20, 30);
        assert_eq!(augment(&img, &AugmentSpec::default(), 0), img);
    }

    #[test]
    fn draws_differ_and_repeat() {
        let img = ramp(32, 32);
        let spec = AugmentSpec { rng_seed: 11, ..Default::default() };
        let a = augment(&img, &spec, 1);
        assert_eq!(a, augment(&img, &spec, 1));
        assert_ne!(a, augment(&img, &spec, 2));
        assert_ne!(a, img);
    }

    #[test]
    fn zero_strength_spec_is_identity() {
        let img = ramp(16, 16);
        let spec = AugmentSpec {
            time_shift_frac: 0.0,
            time_mask_frac: 0.0,
            freq_mask_frac: 0.0,
            brightness_delta: 0.0,
            rng_seed: 5,
        };
        assert_eq!(augment(&img, &spec, 3), img);
    }

    #[test]
    fn validation() {
        assert!(AugmentSpec::default().validate().is_ok());
        assert!(AugmentSpec { time_mask_frac: 0.6, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn output_in_unit_range(draw in 1u64..10_000, seed in any::<u64>(), h in 1usize..24, w in 1usize..24) {
            let img = ramp(h, w);
            let spec = AugmentSpec { rng_seed: seed, brightness_delta: 0.5, ..Default::default() };
            let out = augment(&img, &spec, draw);
            prop_assert_eq!((out.height, out.width, out.pixels.len()), (h, w, img.pixels.len()));
            prop_assert!(out.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
