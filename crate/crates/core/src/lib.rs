//! RGB-D SLAM on 2D Gaussian surfels.
//!
//! The scene is a set of planar elliptical Gaussians ("surfels") with
//! position, orientation, two tangential scales, opacity and color. A
//! differentiable CPU rasterizer renders color, expected depth, silhouette,
//! blended normals and a per-ray depth-distortion term, and provides exact
//! reverse-mode gradients with respect to every splat parameter and the
//! camera pose. Tracking, mapping and bundle adjustment are first-order
//! descent loops over those gradients.

pub mod ba;
pub mod dataset;
pub mod mapping;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod rasterizer;
pub mod scene;
pub mod synth;
pub mod tracking;
pub mod viz;

pub use objectives::{ExposureParams, LossBreakdown};
pub use rasterizer::{render, render_backward, RenderAdjoints, RenderOptions, RenderOutput};
pub use scene::{CameraIntrinsics, Frame, Gaussian2D, GaussianMap, Pose};
