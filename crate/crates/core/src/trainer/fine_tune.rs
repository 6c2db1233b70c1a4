use super::cache::{cache_activations, FeatureCache};
use super::lr_find::{lr_find, suggest_lr, LrCurve, LrFindConfig, LrProbe};
use super::predict::argmax;
use super::schedule::SgdrSchedule;
use super::TrainError;
use crate::dataset::{augment, AugmentSpec, ImageSet};
use crate::dsp::ImageTensor;
use crate::nn::layers::{cross_entropy, softmax};
use crate::nn::{images_to_act, Act, Gradients, Model, Sgd, HEAD_GROUP, SGD_MOMENTUM};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    /// Head learning rate; `None` runs the LR range test on the cached head.
    pub head_lr: Option<f64>,
    /// Ratio between neighbouring group rates after unfreezing, in `[3, 10]`.
    pub disc_factor: f64,
    pub head_epochs_cached: usize,
    pub head_epochs_aug: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Consecutive overfitting cycle boundaries that end the unfrozen phase.
    pub overfit_patience: usize,
    pub cycle_len: usize,
    pub cycle_mult: usize,
    /// Hard cap on unfrozen SGDR cycles.
    pub max_cycles: usize,
    pub momentum: f64,
    /// `None` disables augmentation everywhere.
    pub augment: Option<AugmentSpec>,
    pub lr_find: LrFindConfig,
    /// Re-run the LR range test after unfreezing and use its suggestion as
    /// the head-group rate.
    pub refind_lr: bool,
    /// Estimate body batch-norm statistics from the training images before
    /// freezing.
    pub calibrate_bn: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            head_lr: Some(0.01),
            disc_factor: 10.0,
            head_epochs_cached: 2,
            head_epochs_aug: 3,
            batch_size: 16,
            seed: 0,
            overfit_patience: 2,
            cycle_len: 1,
            cycle_mult: 2,
            max_cycles: 10,
            momentum: SGD_MOMENTUM,
            augment: Some(AugmentSpec::default()),
            lr_find: LrFindConfig::default(),
            refind_lr: true,
            calibrate_bn: true,
        }
    }
}

/// Relative val-loss rise over the best value that counts as overfitting.
pub const OVERFIT_TOLERANCE: f64 = 0.01;

impl TrainPlan {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidPlan(m));
        if !(3.0..=10.0).contains(&self.disc_factor) {
            return bad(format!("disc_factor {} outside [3, 10]", self.disc_factor));
        }
        if let Some(lr) = self.head_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("head_lr {lr} must be positive"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.cycle_len == 0 || self.cycle_mult == 0 {
            return bad("cycle_len and cycle_mult must be at least 1".into());
        }
        if self.max_cycles == 0 || self.overfit_patience == 0 {
            return bad("max_cycles and overfit_patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if let Some(a) = &self.augment {
            a.validate().map_err(TrainError::InvalidPlan)?;
        }
        self.lr_find.validate()
    }

    pub fn group_scales(&self) -> [f64; 3] {
        let d = self.disc_factor;
        [1.0 / (d * d), 1.0 / d, 1.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Head only, on cached body features.
    HeadCached,
    /// Head only, full forwards through the frozen body with augmentation.
    HeadAugmented,
    /// Every group trainable at discriminative rates.
    Unfrozen,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::HeadCached => "head_cached",
            Phase::HeadAugmented => "head_augmented",
            Phase::Unfrozen => "unfrozen",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub schedule: SgdrSchedule,
    /// Global step of the phase's schedule step 0.
    pub first_step: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Overfit,
    CycleCap,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Schedule value (the head-group rate) at every global step.
    pub lr_trace: Vec<f64>,
    pub phases: Vec<PhaseRecord>,
    pub head_lr: f64,
    pub unfrozen_lr: f64,
    pub head_curve: Option<LrCurve>,
    pub unfrozen_curve: Option<LrCurve>,
    pub stop_reason: Option<StopReason>,
    /// Epoch whose weights were returned.
    pub best_epoch: Option<usize>,
    /// Body digests before and after the frozen-body phases.
    pub frozen_body_digests: Option<([u8; 32], [u8; 32])>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_acc,phase\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.4},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_acc, e.phase
            ));
        }
        s
    }

    pub fn lr_trace_csv(&self) -> String {
        let mut s = String::from("step,lr\n");
        for (i, lr) in self.lr_trace.iter().enumerate() {
            s.push_str(&format!("{i},{lr:e}\n"));
        }
        s
    }

    /// Largest deviation of the recorded trace from each phase's closed form.
    pub fn max_lr_trace_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for p in &self.phases {
            for k in 0..p.steps {
                let recorded = self.lr_trace[p.first_step + k];
                worst = worst.max((recorded - p.schedule.lr(k)).abs());
            }
        }
        worst
    }
}

/// Where head inputs come from during an epoch.
#[derive(Debug, Clone, Copy)]
pub enum Feed<'c> {
    Cached { train: &'c FeatureCache, val: &'c FeatureCache },
    Images { augment: Option<AugmentSpec> },
}

/// Step-by-step access to the training procedure. [`fine_tune`] drives a
/// session through every stage; tests drive individual phases.
pub struct Session<'a> {
    pub model: Model<f32>,
    pub plan: TrainPlan,
    pub history: TrainHistory,
    train: &'a ImageSet,
    val: &'a ImageSet,
    train_labels: Vec<usize>,
    val_labels: Vec<usize>,
    opt: Sgd<f32>,
    best: Option<(f64, usize, Model<f32>)>,
    epoch: usize,
}

/// Mean cross-entropy of the head on pooled features, with head gradients.
pub fn head_loss_and_grads(model: &Model<f32>, features: &[f32], labels: &[usize]) -> (f32, Gradients<f32>) {
    let n = labels.len();
    let logits = model.head.forward(features, n);
    let (loss, dlogits) = cross_entropy(&logits, labels, model.config.num_classes);
    let mut dw = vec![0.0; model.head.weight.len()];
    let mut db = vec![0.0; model.head.bias.len()];
    model.head.backward(features, &dlogits, n, Some((&mut dw, &mut db)));
    let mut g = Gradients::new();
    g.insert("head.weight".into(), dw);
    g.insert("head.bias".into(), db);
    (loss, g)
}

fn loss_and_correct(logits: &[f32], labels: &[usize], classes: usize) -> (f64, usize) {
    let (loss, _) = cross_entropy(logits, labels, classes);
    let probs = softmax(logits, classes);
    let correct = probs
        .chunks(classes)
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    (loss as f64 * labels.len() as f64, correct)
}

const EVAL_CHUNK: usize = 16;

impl<'a> Session<'a> {
    pub fn new(model: Model<f32>, train: &'a ImageSet, val: &'a ImageSet, plan: TrainPlan) -> Result<Self, TrainError> {
        plan.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("validation"));
        }
        let opt = Sgd::new(plan.momentum);
        Ok(Self {
            train_labels: train.class_indices(),
            val_labels: val.class_indices(),
            model,
            plan,
            history: TrainHistory::default(),
            train,
            val,
            opt,
            best: None,
            epoch: 0,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.plan.batch_size)
    }

    pub fn build_caches(&self) -> Result<(FeatureCache, FeatureCache), TrainError> {
        Ok((cache_activations(&self.model, self.train)?, cache_activations(&self.model, self.val)?))
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.plan.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    fn batch_images(&self, indices: &[usize], augment_spec: Option<&AugmentSpec>, draw_base: u64) -> Vec<ImageTensor> {
        indices
            .par_iter()
            .map(|&i| match augment_spec {
                Some(spec) => augment(&self.train.images[i], spec, draw_base + i as u64),
                None => self.train.images[i].clone(),
            })
            .collect()
    }

    /// Validation loss and accuracy with the current weights.
    pub fn validate(&self, feed: &Feed<'_>) -> Result<(f64, f64), TrainError> {
        let classes = self.model.config.num_classes;
        let n = self.val.len();
        let (loss_sum, correct) = match feed {
            Feed::Cached { val, .. } => {
                val.ensure_valid_for(&self.model)?;
                let logits = self.model.head.forward(&val.features, n);
                loss_and_correct(&logits, &self.val_labels, classes)
            }
            Feed::Images { .. } => {
                let parts: Vec<(f64, usize)> = self
                    .val
                    .images
                    .par_chunks(EVAL_CHUNK)
                    .zip(self.val_labels.par_chunks(EVAL_CHUNK))
                    .map(|(imgs, labels)| {
                        let refs: Vec<&ImageTensor> = imgs.iter().collect();
                        let logits = self.model.forward_eval(&images_to_act(&refs))?;
                        Ok(loss_and_correct(&logits, labels, classes))
                    })
                    .collect::<Result<_, TrainError>>()?;
                parts.into_iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
            }
        };
        Ok((loss_sum / n as f64, correct as f64 / n as f64))
    }

    fn step(&mut self, feed: &Feed<'_>, indices: &[usize], draw_base: u64, lr: f64) -> Result<f64, TrainError> {
        let labels: Vec<usize> = indices.iter().map(|&i| self.train_labels[i]).collect();
        let (loss, grads) = match feed {
            Feed::Cached { train, .. } => head_loss_and_grads(&self.model, &train.gather(indices), &labels),
            Feed::Images { augment } => {
                let imgs = self.batch_images(indices, augment.as_ref(), draw_base);
                let refs: Vec<&ImageTensor> = imgs.iter().collect();
                self.model.loss_and_grads(&images_to_act(&refs), &labels)?
            }
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { epoch: self.epoch });
        }
        self.opt.step(&mut self.model, &grads, lr);
        Ok(loss as f64)
    }

    /// One pass over the training set; `sched_step` is the position in the
    /// phase schedule and advances by the number of batches.
    fn run_epoch(
        &mut self,
        phase: Phase,
        feed: &Feed<'_>,
        schedule: &SgdrSchedule,
        sched_step: &mut usize,
    ) -> Result<EpochRecord, TrainError> {
        if let Feed::Cached { train, .. } = feed {
            train.ensure_valid_for(&self.model)?;
        }
        let order = self.epoch_order(self.epoch);
        let draw_base = 1 + (self.epoch * self.train.len()) as u64;
        let mut loss_sum = 0.0;
        for batch in order.chunks(self.plan.batch_size) {
            let lr = schedule.lr(*sched_step);
            let loss = self.step(feed, batch, draw_base, lr)?;
            self.history.lr_trace.push(lr);
            loss_sum += loss * batch.len() as f64;
            *sched_step += 1;
        }
        let (val_loss, val_acc) = self.validate(feed)?;
        let rec = EpochRecord {
            epoch: self.epoch,
            phase,
            train_loss: loss_sum / self.train.len() as f64,
            val_loss,
            val_acc,
        };
        if !val_loss.is_finite() {
            return Err(TrainError::NonFinite { epoch: self.epoch });
        }
        if self.best.as_ref().is_none_or(|b| val_loss < b.0) {
            self.best = Some((val_loss, self.epoch, self.model.clone()));
        }
        self.history.epochs.push(rec.clone());
        self.epoch += 1;
        Ok(rec)
    }

    fn begin_phase(&mut self, phase: Phase, schedule: SgdrSchedule) -> Result<usize, TrainError> {
        schedule.validate()?;
        self.opt.reset();
        let idx = self.history.phases.len();
        self.history.phases.push(PhaseRecord {
            phase,
            schedule,
            first_step: self.history.lr_trace.len(),
            steps: 0,
        });
        Ok(idx)
    }

    fn end_phase(&mut self, idx: usize) {
        let p = &mut self.history.phases[idx];
        p.steps = self.history.lr_trace.len() - p.first_step;
    }

    /// Runs `epochs` epochs under a fresh schedule whose peak is `lr_max`.
    pub fn run_phase(
        &mut self,
        phase: Phase,
        feed: Feed<'_>,
        lr_max: f64,
        cycle_len: usize,
        cycle_mult: usize,
        epochs: usize,
    ) -> Result<Vec<EpochRecord>, TrainError> {
        let schedule = SgdrSchedule::new(lr_max, cycle_len, cycle_mult, self.steps_per_epoch());
        let idx = self.begin_phase(phase, schedule)?;
        let mut sched_step = 0;
        let mut out = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            out.push(self.run_epoch(phase, &feed, &schedule, &mut sched_step)?);
        }
        self.end_phase(idx);
        Ok(out)
    }

    /// SGDR over all groups until validation loss exceeds its best by more
    /// than the tolerance at `overfit_patience` consecutive cycle ends, or
    /// `max_cycles` cycles complete.
    pub fn run_until_overfit(&mut self, lr_max: f64) -> Result<StopReason, TrainError> {
        let schedule = SgdrSchedule::new(lr_max, self.plan.cycle_len, self.plan.cycle_mult, self.steps_per_epoch());
        let idx = self.begin_phase(Phase::Unfrozen, schedule)?;
        let feed = Feed::Images { augment: self.plan.augment };
        let mut sched_step = 0;
        let mut strikes = 0;
        let mut reason = StopReason::CycleCap;
        for cycle in 0..self.plan.max_cycles {
            let mut last = None;
            for _ in 0..schedule.cycle_epochs(cycle) {
                last = Some(self.run_epoch(Phase::Unfrozen, &feed, &schedule, &mut sched_step)?);
            }
            let val_loss = last.expect("cycle has epochs").val_loss;
            let best = self.best.as_ref().map_or(f64::INFINITY, |b| b.0);
            if val_loss > best * (1.0 + OVERFIT_TOLERANCE) {
                strikes += 1;
            } else {
                strikes = 0;
            }
            if strikes >= self.plan.overfit_patience {
                reason = StopReason::Overfit;
                break;
            }
        }
        self.end_phase(idx);
        self.history.stop_reason = Some(reason);
        Ok(reason)
    }

    pub fn find_lr_cached(&mut self, cache: &FeatureCache) -> Result<LrCurve, TrainError> {
        cache.ensure_valid_for(&self.model)?;
        let mut probe = HeadProbe {
            model: &mut self.model,
            cache,
            labels: &self.train_labels,
            order: shuffled(self.train.len(), self.plan.seed),
            batch: self.plan.batch_size,
            opt: Sgd::new(self.plan.momentum),
        };
        lr_find(&mut probe, &self.plan.lr_find)
    }

    pub fn find_lr_full(&mut self) -> Result<LrCurve, TrainError> {
        let mut probe = ModelProbe {
            model: &mut self.model,
            data: self.train,
            labels: &self.train_labels,
            order: shuffled(self.train.len(), self.plan.seed),
            batch: self.plan.batch_size,
            opt: Sgd::new(self.plan.momentum),
        };
        lr_find(&mut probe, &self.plan.lr_find)
    }

    /// Weights with the lowest validation loss seen so far (or the current
    /// weights if no epoch has run), plus the history.
    pub fn finish(mut self) -> (Model<f32>, TrainHistory) {
        match self.best.take() {
            Some((_, epoch, model)) => {
                self.history.best_epoch = Some(epoch);
                (model, self.history)
            }
            None => (self.model, self.history),
        }
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng);
    v
}

fn probe_batch(order: &[usize], iter: usize, batch: usize) -> Vec<usize> {
    (0..batch.min(order.len())).map(|j| order[(iter * batch + j) % order.len()]).collect()
}

struct HeadProbe<'m> {
    model: &'m mut Model<f32>,
    cache: &'m FeatureCache,
    labels: &'m [usize],
    order: Vec<usize>,
    batch: usize,
    opt: Sgd<f32>,
}

impl LrProbe for HeadProbe<'_> {
    type State = (Vec<f32>, Vec<f32>, Sgd<f32>);

    fn snapshot(&self) -> Self::State {
        (self.model.head.weight.clone(), self.model.head.bias.clone(), self.opt.clone())
    }

    fn restore(&mut self, (w, b, opt): Self::State) {
        self.model.head.weight = w;
        self.model.head.bias = b;
        self.opt = opt;
    }

    fn train_step(&mut self, iter: usize, lr: f64) -> Result<f64, TrainError> {
        let idx = probe_batch(&self.order, iter, self.batch);
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let (loss, grads) = head_loss_and_grads(self.model, &self.cache.gather(&idx), &labels);
        self.opt.step(self.model, &grads, lr);
        Ok(loss as f64)
    }
}

struct ModelProbe<'m> {
    model: &'m mut Model<f32>,
    data: &'m ImageSet,
    labels: &'m [usize],
    order: Vec<usize>,
    batch: usize,
    opt: Sgd<f32>,
}

impl LrProbe for ModelProbe<'_> {
    type State = (Model<f32>, Sgd<f32>);

    fn snapshot(&self) -> Self::State {
        (self.model.clone(), self.opt.clone())
    }

    fn restore(&mut self, (m, opt): Self::State) {
        *self.model = m;
        self.opt = opt;
    }

    fn train_step(&mut self, iter: usize, lr: f64) -> Result<f64, TrainError> {
        let idx = probe_batch(&self.order, iter, self.batch);
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let refs: Vec<&ImageTensor> = idx.iter().map(|&i| &self.data.images[i]).collect();
        let (loss, grads) = self.model.loss_and_grads(&images_to_act(&refs), &labels)?;
        if loss.is_finite() {
            self.opt.step(self.model, &grads, lr);
        }
        Ok(loss as f64)
    }
}

fn suggestion_or(curve: &LrCurve, fallback: f64) -> Result<f64, TrainError> {
    match suggest_lr(curve) {
        Ok(lr) => Ok(lr),
        Err(TrainError::NoDescent | TrainError::TooFewPoints(_)) => Ok(fallback),
        Err(e) => Err(e),
    }
}

/// The staged fine-tuning procedure:
///
/// 1. freeze the body and cache pooled features of unaugmented images,
/// 2. pick the head rate (plan value or LR range test on the cache),
/// 3. train the head on the cache,
/// 4. train the head on augmented images through the frozen body,
/// 5. unfreeze, set discriminative group rates,
/// 6. optionally re-run the range test for the head-group rate,
/// 7. SGDR with growing cycles until validation loss overfits.
///
/// Returns the weights from the epoch with the lowest validation loss.
/// Sets body batch-norm running statistics from `data`, in batches taken in
/// set order.
pub fn calibrate_body(model: &mut Model<f32>, data: &ImageSet, batch_size: usize) -> Result<(), TrainError> {
    let refs: Vec<&ImageTensor> = data.images.iter().collect();
    let batches: Vec<Act<f32>> = refs.chunks(batch_size.max(1)).map(images_to_act).collect();
    model.calibrate_bn(&batches)?;
    Ok(())
}

pub fn fine_tune(
    model: Model<f32>,
    train: &ImageSet,
    val: &ImageSet,
    plan: &TrainPlan,
) -> Result<(Model<f32>, TrainHistory), TrainError> {
    let mut s = Session::new(model, train, val, plan.clone())?;
    if plan.calibrate_bn {
        calibrate_body(&mut s.model, train, plan.batch_size)?;
    }
    s.model.set_frozen(&[0, 1], true)?;
    s.model.set_frozen(&[HEAD_GROUP], false)?;
    s.model.set_lr_scales([1.0; 3]);
    let (train_cache, val_cache) = s.build_caches()?;
    let body_before = s.model.body_digest();

    let head_lr = match plan.head_lr {
        Some(lr) => lr,
        None => {
            let curve = s.find_lr_cached(&train_cache)?;
            let lr = suggest_lr(&curve)?;
            s.history.head_curve = Some(curve);
            lr
        }
    };
    s.history.head_lr = head_lr;

    let cached = Feed::Cached {
        train: &train_cache,
        val: &val_cache,
    };
    s.run_phase(Phase::HeadCached, cached, head_lr, 1, 1, plan.head_epochs_cached)?;
    let augmented = Feed::Images { augment: plan.augment };
    s.run_phase(Phase::HeadAugmented, augmented, head_lr, 1, 1, plan.head_epochs_aug)?;
    s.history.frozen_body_digests = Some((body_before, s.model.body_digest()));

    s.model.set_frozen(&[0, 1, HEAD_GROUP], false)?;
    s.model.set_lr_scales(plan.group_scales());
    let unfrozen_lr = if plan.refind_lr {
        let curve = s.find_lr_full()?;
        let lr = suggestion_or(&curve, head_lr)?;
        s.history.unfrozen_curve = Some(curve);
        lr
    } else {
        head_lr
    };
    s.history.unfrozen_lr = unfrozen_lr;
    s.run_until_overfit(unfrozen_lr)?;
    Ok(s.finish())
}
