//! iLOCO: feature-interaction importance with confidence intervals.
//!
//! The crate fits full and feature-excluded predictors, turns their
//! per-sample error differences into interaction scores, and wraps the
//! scores in normal-approximation intervals. Two estimators are provided:
//! data splitting ([`split`]) and minipatch ensembles ([`minipatch`]).

pub mod anova;
pub mod bench;
pub mod error;
pub mod inference;
pub mod learners;
pub mod minipatch;
pub mod occlusion;
pub mod rng;
pub mod simgen;
pub mod split;
pub mod tabular;

pub use error::{Error, Result};
pub use inference::{ci_normal, InteractionResult};
pub use learners::{FittedModel, LearnerSpec};
pub use minipatch::{train_ensemble, MinipatchConfig, MinipatchEnsemble};
pub use occlusion::{
    iloco_samples, EstimatorTag, FeatureSet, InteractionScoreSamples, OcclusionPredictor,
};
pub use rng::RngStream;
pub use split::{fit_split, SplitFit};
pub use tabular::{load_csv, Dataset, Task};
