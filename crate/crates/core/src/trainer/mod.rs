//! Staged fine-tuning: LR range test, cosine schedule with warm restarts,
//! cached-feature head training, discriminative group rates and
//! test-time augmentation.

mod cache;
mod fine_tune;
mod lr_find;
mod predict;
mod schedule;

pub use cache::{cache_activations, FeatureCache};
pub use fine_tune::{calibrate_body, 
    fine_tune, head_loss_and_grads, EpochRecord, Feed, Phase, PhaseRecord, Session, StopReason, TrainHistory,
    TrainPlan, OVERFIT_TOLERANCE,
};
pub use lr_find::{
    lr_find, suggest_lr, LrCurve, LrFindConfig, LrProbe, DIVERGENCE_FACTOR, MIN_CURVE_POINTS, SMOOTHING_BETA,
};
pub use predict::{argmax, predict, predict_set, predict_tta};
pub use schedule::{sgdr_lr, SgdrSchedule};

use crate::nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid training plan: {0}")]
    InvalidPlan(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("feature cache requires groups 0 and 1 to be frozen")]
    BodyNotFrozen,
    #[error("feature cache no longer matches the model body")]
    StaleCache,
    #[error("loss is not finite on the first step of the learning-rate sweep")]
    DivergedImmediately,
    #[error("learning-rate curve never decreases")]
    NoDescent,
    #[error("learning-rate curve has {0} points, need at least 10")]
    TooFewPoints(usize),
    #[error("loss became non-finite in epoch {epoch}")]
    NonFinite { epoch: usize },
}
