use super::TrainError;
use crate::dataset::ImageSet;
use crate::nn::{images_to_act, Model};
use rayon::prelude::*;

/// Pooled body features of unaugmented images, tied to one frozen body.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub ids: Vec<String>,
    /// Row-major `[len x dim]`.
    pub features: Vec<f32>,
    pub dim: usize,
    pub body_hash: [u8; 32],
}

impl FeatureCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.ids.iter().position(|x| x == id).map(|i| self.row(i))
    }

    /// Gathers rows into a contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect()
    }

    pub fn is_valid_for(&self, model: &Model<f32>) -> bool {
        model.is_frozen(0) && model.is_frozen(1) && model.body_digest() == self.body_hash
    }

    pub fn ensure_valid_for(&self, model: &Model<f32>) -> Result<(), TrainError> {
        if self.is_valid_for(model) {
            Ok(())
        } else {
            Err(TrainError::StaleCache)
        }
    }
}

const CHUNK: usize = 16;

/// Evaluation-mode forward through the frozen body for every image.
pub fn cache_activations(model: &Model<f32>, data: &ImageSet) -> Result<FeatureCache, TrainError> {
    if !(model.is_frozen(0) && model.is_frozen(1)) {
        return Err(TrainError::BodyNotFrozen);
    }
    let chunks: Vec<Vec<f32>> = data
        .images
        .par_chunks(CHUNK)
        .map(|chunk| {
            let refs: Vec<_> = chunk.iter().collect();
            model.features(&images_to_act(&refs))
        })
        .collect::<Result<_, _>>()?;
    Ok(FeatureCache {
        ids: data.ids.clone(),
        features: chunks.concat(),
        dim: model.feature_dim(),
        body_hash: model.body_digest(),
    })
}
