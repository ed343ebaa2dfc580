//! Text-rotation classification (horizontal vs. vertical) with a residual
//! CNN whose intermediate feature maps are pulled toward text-box masks
//! during training.
//!
//! The crate covers synthetic data generation, mask pyramids, the backbone
//! and its hand-written backward pass, the losses, a momentum-SGD trainer,
//! Hmean metrics and a Hough-transform baseline.

pub mod ablation;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod error;
pub mod gradcheck;
pub mod hough;
pub mod io;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod synth;
pub mod trainer;
pub mod visualize;

pub use backbone::{BackboneConfig, Mode, Model, StageFeatures};
pub use domain::{
    angle_to_class, normalize_angle, BoundingBox, ImageTensor, RotationAngle, RotationClass,
};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossConfig, StageSelection};
pub use mask::{build_pyramid, downscale_mask, rasterize_mask, Downscale, Mask, MaskPyramid};
pub use metrics::{hmean, ConfusionCounts, EvalReport};
pub use synth::{AnnotatedSample, DatasetOptions, SceneSpec, Split};
pub use trainer::{TrainConfig, TrainLogRecord};
