use super::TrainError;
use crate::dataset::{augment, AugmentSpec, ImageSet};
use crate::dsp::ImageTensor;
use crate::nn::{images_to_act, Model};
use rayon::prelude::*;

/// Class probabilities for one image.
pub fn predict(model: &Model<f32>, image: &ImageTensor) -> Result<Vec<f32>, TrainError> {
    Ok(model.predict_proba(&images_to_act(&[image]))?)
}

/// Mean of `predict` over the identity (draw 0) and draws `1..=k`.
pub fn predict_tta(model: &Model<f32>, image: &ImageTensor, spec: &AugmentSpec, k: usize) -> Result<Vec<f32>, TrainError> {
    if k == 0 {
        return predict(model, image);
    }
    let views: Vec<ImageTensor> = (0..=k as u64).map(|d| augment(image, spec, d)).collect();
    let refs: Vec<&ImageTensor> = views.iter().collect();
    let probs = model.predict_proba(&images_to_act(&refs))?;
    let classes = model.config.num_classes;
    let mut mean = vec![0.0f64; classes];
    for row in probs.chunks(classes) {
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p as f64;
        }
    }
    Ok(mean.into_iter().map(|m| (m / (k + 1) as f64) as f32).collect())
}

/// Probabilities for every image in the set, in order. `tta` is
/// `(spec, k)`; `None` or `k == 0` is plain prediction.
pub fn predict_set(
    model: &Model<f32>,
    data: &ImageSet,
    tta: Option<(&AugmentSpec, usize)>,
) -> Result<Vec<Vec<f32>>, TrainError> {
    data.images
        .par_iter()
        .map(|img| match tta {
            Some((spec, k)) => predict_tta(model, img, spec, k),
            None => predict(model, img),
        })
        .collect()
}

pub fn argmax(p: &[f32]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
