//! Unsupervised domain adaptation for a compact single-stage detector.
//!
//! The crate is organized bottom-up:
//!
//! * [`data`]: boxes, images, datasets, the synthetic shapes generator,
//!   photometric corruptions and the on-disk dataset layout.
//! * [`detector`]: a small BatchNorm CNN with a one-box-per-cell head,
//!   GIoU and focal losses, NMS decoding, checkpoints and the SGD optimizer.
//! * [`domainmix`]: balanced cross-domain sampling and 2x2 collages with
//!   exact box remapping.
//! * [`pseudolabel`]: thresholded self-labels, persisted to disk.
//! * [`adapt`]: source training, gradual BN-first adaptation,
//!   teacher-guided adaptation and the ablation rows.
//! * [`eval`]: AP50, absolute and effective gains, mPC/rPC robustness.

pub mod adapt;
pub mod data;
pub mod detector;
pub mod domainmix;
mod error;
pub mod eval;
pub mod pseudolabel;
pub mod seed;

pub use adapt::{AblationMode, AdaptConfig, AdaptRunRecord, Event, TrainConfig};
pub use data::{
    BoundingBox, CorruptionKind, CorruptionSpec, Dataset, Domain, Image, LabeledImage,
    ShapesConfig,
};
pub use detector::{Detection, Detector, DetectorConfig, ModelParams, ParamTag};
pub use domainmix::{MixConfig, MixPlan, MixedSample};
pub use error::{Error, Result};
pub use eval::{GainReport, RobustnessReport};
pub use pseudolabel::PseudoLabelSet;
