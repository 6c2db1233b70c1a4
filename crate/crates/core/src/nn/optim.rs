use super::model::{Gradients, Model};
use super::Scalar;
use std::collections::BTreeMap;

/// `v <- momentum * v + g; w <- w - lr * v`.
pub fn sgd_update<T: Scalar>(w: &mut [T], v: &mut [T], g: &[T], lr: T, momentum: T) {
    for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}

/// SGD with momentum over named tensors.
#[derive(Debug, Clone, Default)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    /// Applies one step. Each group uses `base_lr * lr_scale`; tensors in
    /// frozen groups and tensors without a gradient are left untouched.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>, base_lr: f64) {
        let groups = model.groups;
        let momentum = T::from_f64_lossy(self.momentum);
        for t in model.tensors_mut() {
            if !t.trainable || groups[t.group].frozen {
                continue;
            }
            let Some(g) = grads.get(&t.name) else { continue };
            let lr = T::from_f64_lossy(base_lr * groups[t.group].lr_scale);
            let v = self
                .velocity
                .entry(t.name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            sgd_update(t.data, v, g, lr, momentum);
        }
    }
}
