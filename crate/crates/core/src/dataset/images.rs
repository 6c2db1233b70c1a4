use super::{DatasetError, Label, Manifest};
use crate::dsp::ImageTensor;

/// In-memory labeled images, the unit the trainer consumes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageSet {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
    pub labels: Vec<Label>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, image: ImageTensor, label: Label) {
        self.ids.push(id.into());
        self.images.push(image);
        self.labels.push(label);
    }

    pub fn class_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.class_index()).collect()
    }

    /// Loads every PNG referenced by the manifest.
    pub fn load(manifest: &Manifest) -> Result<Self, DatasetError> {
        let mut set = ImageSet::default();
        for r in &manifest.records {
            let img = ImageTensor::load_png(&manifest.resolve(r))?;
            set.push(format!("{}:{}", r.participant_id, r.path), img, r.label);
        }
        Ok(set)
    }

    /// Common square size of all images, if there is one.
    pub fn square_size(&self) -> Option<usize> {
        let first = self.images.first()?;
        self.images
            .iter()
            .all(|i| i.height == first.height && i.width == first.width && i.height == i.width)
            .then_some(first.height)
    }
}
