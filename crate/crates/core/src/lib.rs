//! Hallucination-aware splat training on synthetic scenes.
//!
//! The crate provides a differentiable 3D Gaussian splat renderer, a
//! simulated augmentation prior with exact hallucination ground truth, a
//! multi-view consistency scorer with score-to-mask thresholding, per-pixel
//! argmin/weighted fusion of multiple augmented versions, and a single-phase
//! training loop that combines input-view and masked novel-view supervision.

pub mod augment;
pub mod buffer;
pub mod error;
pub mod fusion;
pub mod io;
pub mod loss;
pub mod render;
pub mod rng;
pub mod scene;
pub mod scorer;
pub mod train;

pub use buffer::{BinaryMask, DepthBuffer, ImageBuffer, ScoreMap};
pub use error::{HadError, Result};
pub use scene::{
    interpolate_pose, make_synthetic_scene, Camera, GaussianPrimitive, GaussianSet, SceneKind,
    SceneSpec, ViewRecord, ViewRole, ViewSet,
};
