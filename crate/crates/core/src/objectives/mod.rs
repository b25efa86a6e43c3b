//! Scalar loss terms and their adjoint seeds, composed into the tracking,
//! mapping and bundle-adjustment objectives.
//!
//! Every per-pixel term is a mean over its mask, so the weights are
//! resolution independent. Gradients are produced as `RenderAdjoints` seeds
//! that `render_backward` turns into parameter gradients; the point-to-plane
//! term reduces to a normal-weighted depth residual under projective
//! association, so no loss here needs a pose path outside the renderer.

pub mod ssim;

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::rasterizer::{RenderAdjoints, RenderOutput};
use crate::scene::{CameraIntrinsics, Frame};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("no valid pixels")]
    EmptyMask,
    #[error("shape mismatch")]
    ShapeMismatch,
    #[error("image smaller than the SSIM window")]
    ImageTooSmall,
}

/// Per-frame affine exposure: adjusted = exp(a) * color + b.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ExposureParams {
    pub a: f64,
    pub b: f64,
}

/// Apply the exposure model; unclamped (losses consume the raw values,
/// only metric reporting clamps).
pub fn exposure_adjust(color: &[f64], e: &ExposureParams) -> Vec<f64> {
    let gain = e.a.exp();
    color.iter().map(|c| gain * c + e.b).collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LossBreakdown {
    pub color_l1: f64,
    pub dssim: f64,
    pub p2point: f64,
    pub p2plane: f64,
    pub distortion: f64,
    pub normal: f64,
    pub total: f64,
    #[serde(skip)]
    pub pixel_mask: Vec<bool>,
}

/// Term toggles for the tracking objective (unit weights per the loss
/// definition; toggles exist for ablations).
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
pub struct TrackingTerms {
    pub use_color: bool,
    pub use_p2point: bool,
    pub use_p2plane: bool,
}

impl Default for TrackingTerms {
    fn default() -> Self {
        TrackingTerms {
            use_color: true,
            use_p2point: true,
            use_p2plane: true,
        }
    }
}

/// Mapping loss weights: L_rec = (1-lambda) L1 + lambda DSSIM, plus
/// point-to-point, alpha * distortion and beta * normal consistency.
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
pub struct MappingWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for MappingWeights {
    fn default() -> Self {
        MappingWeights {
            lambda: 0.2,
            alpha: 1000.0,
            beta: 0.05,
        }
    }
}

/// Mean masked L1 between two interleaved RGB images.
pub fn loss_color_l1(rendered: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64, ObjectiveError> {
    if rendered.len() != gt.len() || rendered.len() != mask.len() * 3 {
        return Err(ObjectiveError::ShapeMismatch);
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                acc += (rendered[i * 3 + c] - gt[i * 3 + c]).abs();
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(ObjectiveError::EmptyMask);
    }
    Ok(acc / (3 * n) as f64)
}

/// Mean masked L1 between depth maps.
pub fn loss_p2point(
    depth_rendered: &[f64],
    depth_gt: &[f64],
    mask: &[bool],
) -> Result<f64, ObjectiveError> {
    if depth_rendered.len() != depth_gt.len() || depth_rendered.len() != mask.len() {
        return Err(ObjectiveError::ShapeMismatch);
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            acc += (depth_rendered[i] - depth_gt[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(ObjectiveError::EmptyMask);
    }
    Ok(acc / n as f64)
}

/// Mean masked |(x_GT - x) . N_GT| over point maps with unit normals.
pub fn loss_p2plane(
    points_rendered: &[Vector3<f64>],
    points_gt: &[Vector3<f64>],
    normals_gt: &[Vector3<f64>],
    mask: &[bool],
) -> Result<f64, ObjectiveError> {
    if points_rendered.len() != points_gt.len()
        || points_rendered.len() != normals_gt.len()
        || points_rendered.len() != mask.len()
    {
        return Err(ObjectiveError::ShapeMismatch);
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            acc += (points_gt[i] - points_rendered[i]).dot(&normals_gt[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(ObjectiveError::EmptyMask);
    }
    Ok(acc / n as f64)
}

/// 1 - SSIM over interleaved RGB images.
pub fn loss_dssim(
    rendered: &[f64],
    gt: &[f64],
    width: usize,
    height: usize,
) -> Result<f64, ObjectiveError> {
    ssim::ssim_mean(rendered, gt, width, height, 3)
        .map(|s| 1.0 - s)
        .ok_or(ObjectiveError::ImageTooSmall)
}

/// Mean over masked pixels of sum_i w_i (1 - n_i . N_GT), evaluated from the
/// blended buffers: per pixel it equals weight_sum - normal_buffer . N_GT.
/// Normals are camera-frame on both sides.
pub fn loss_normal_consistency(
    out: &RenderOutput,
    normals_gt_cam: &[Vector3<f64>],
    mask: &[bool],
) -> Result<f64, ObjectiveError> {
    let n_px = out.width * out.height;
    if normals_gt_cam.len() != n_px || mask.len() != n_px {
        return Err(ObjectiveError::ShapeMismatch);
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let nb = Vector3::new(
                out.normal[i * 3],
                out.normal[i * 3 + 1],
                out.normal[i * 3 + 2],
            );
            acc += out.weight_sum[i] - nb.dot(&normals_gt_cam[i]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(ObjectiveError::EmptyMask);
    }
    Ok(acc / n as f64)
}

/// Mask used by tracking: valid GT depth in a well-observed region.
pub fn tracking_mask(out: &RenderOutput, frame: &Frame, sil_threshold: f64) -> Vec<bool> {
    (0..frame.depth.len())
        .map(|i| frame.depth[i] > 0.0 && out.silhouette[i] > sil_threshold)
        .collect()
}

/// Mask used by mapping and BA: valid GT depth only.
pub fn mapping_mask(frame: &Frame) -> Vec<bool> {
    frame.depth.iter().map(|&d| d > 0.0).collect()
}

/// Evaluation of one composite objective together with adjoint seeds for the
/// renderer and the exposure gradient.
pub struct LossGrads {
    pub breakdown: LossBreakdown,
    pub adjoints: RenderAdjoints,
    /// d total / d (exposure a, exposure b).
    pub exposure: [f64; 2],
}

/// Weights of the generic objective total = sum w_i * term_i. The named
/// tracking/mapping/BA objectives are instances; the gradient suite checks
/// each term in isolation with one-hot weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermWeights {
    pub color_l1: f64,
    pub dssim: f64,
    pub p2point: f64,
    pub p2plane: f64,
    pub distortion: f64,
    pub normal: f64,
}

/// Which pixels constrain the objective.
#[derive(Debug, Clone, Copy)]
pub enum MaskMode {
    /// Valid GT depth and silhouette above the threshold.
    Tracking { sil_threshold: f64 },
    /// Valid GT depth only.
    ValidDepth,
}

/// Evaluate the weighted objective and produce adjoint seeds for
/// `render_backward` plus the exposure gradient.
pub fn weighted_loss(
    out: &RenderOutput,
    frame: &Frame,
    intr: &CameraIntrinsics,
    exposure: &ExposureParams,
    weights: &TermWeights,
    mask_mode: MaskMode,
) -> Result<LossGrads, ObjectiveError> {
    let mask = match mask_mode {
        MaskMode::Tracking { sil_threshold } => tracking_mask(out, frame, sil_threshold),
        MaskMode::ValidDepth => mapping_mask(frame),
    };
    let n_masked = mask.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        return Err(ObjectiveError::EmptyMask);
    }
    let ctx = TermCtx {
        out,
        frame,
        intr,
        exposure,
    };
    let mut adj = RenderAdjoints::zeros(out.width, out.height);
    let mut eg = [0.0; 2];
    let mut lb = LossBreakdown::default();
    if weights.color_l1 != 0.0 {
        lb.color_l1 = color_l1_term(&ctx, &mask, n_masked, weights.color_l1, &mut adj, &mut eg);
    }
    if weights.dssim != 0.0 {
        lb.dssim = dssim_term(&ctx, weights.dssim, &mut adj, &mut eg)?;
    }
    if weights.p2point != 0.0 {
        lb.p2point = p2point_term(&ctx, &mask, n_masked, weights.p2point, &mut adj);
    }
    if weights.p2plane != 0.0 {
        lb.p2plane = p2plane_term(&ctx, &mask, weights.p2plane, &mut adj);
    }
    if weights.distortion != 0.0 {
        lb.distortion = distortion_term(&ctx, &mask, n_masked, weights.distortion, &mut adj);
    }
    if weights.normal != 0.0 {
        lb.normal = normal_term(&ctx, &mask, weights.normal, &mut adj);
    }
    lb.total = weights.color_l1 * lb.color_l1
        + weights.dssim * lb.dssim
        + weights.p2point * lb.p2point
        + weights.p2plane * lb.p2plane
        + weights.distortion * lb.distortion
        + weights.normal * lb.normal;
    lb.pixel_mask = mask;
    Ok(LossGrads {
        breakdown: lb,
        adjoints: adj,
        exposure: eg,
    })
}

struct TermCtx<'a> {
    out: &'a RenderOutput,
    frame: &'a Frame,
    intr: &'a CameraIntrinsics,
    exposure: &'a ExposureParams,
}

/// Color L1 on the exposure-adjusted render: value, color-buffer seeds and
/// exposure gradient, all scaled by `weight`.
fn color_l1_term(
    ctx: &TermCtx,
    mask: &[bool],
    n_masked: usize,
    weight: f64,
    adj: &mut RenderAdjoints,
    exposure_grad: &mut [f64; 2],
) -> f64 {
    let gain = ctx.exposure.a.exp();
    let norm = 1.0 / (3 * n_masked) as f64;
    let mut acc = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        for c in 0..3 {
            let rendered = ctx.out.color[i * 3 + c];
            let adjusted = gain * rendered + ctx.exposure.b;
            let e = adjusted - ctx.frame.color[i * 3 + c];
            acc += e.abs();
            let sgn = if e > 0.0 {
                1.0
            } else if e < 0.0 {
                -1.0
            } else {
                0.0
            };
            adj.color[i * 3 + c] += weight * sgn * gain * norm;
            exposure_grad[0] += weight * sgn * gain * rendered * norm;
            exposure_grad[1] += weight * sgn * norm;
        }
    }
    acc * norm
}

/// Point-to-point depth L1: value and depth-buffer seeds.
fn p2point_term(
    ctx: &TermCtx,
    mask: &[bool],
    n_masked: usize,
    weight: f64,
    adj: &mut RenderAdjoints,
) -> f64 {
    let norm = 1.0 / n_masked as f64;
    let mut acc = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let e = ctx.out.depth[i] - ctx.frame.depth[i];
        acc += e.abs();
        let sgn = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };
        adj.depth[i] += weight * sgn * norm;
    }
    acc * norm
}

/// Projective point-to-plane: |(x_GT - x) . N_GT| with both points
/// back-projected along the same pixel ray, which reduces the residual to
/// (ray . N_cam) (D_GT - D). Seeds only the depth buffer.
fn p2plane_term(
    ctx: &TermCtx,
    mask: &[bool],
    weight: f64,
    adj: &mut RenderAdjoints,
) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    let w = ctx.frame.width;
    for (i, &m) in mask.iter().enumerate() {
        if !m || !ctx.frame.normal_valid[i] {
            continue;
        }
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let norm = 1.0 / n as f64;
    for (i, &m) in mask.iter().enumerate() {
        if !m || !ctx.frame.normal_valid[i] {
            continue;
        }
        let x = (i % w) as f64;
        let y = (i / w) as f64;
        let ray = ctx.intr.pixel_ray(x, y);
        let dn = ray.dot(&ctx.frame.normals_cam[i]);
        let e = dn * (ctx.frame.depth[i] - ctx.out.depth[i]);
        acc += e.abs();
        let sgn = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };
        adj.depth[i] += weight * sgn * (-dn) * norm;
    }
    acc * norm
}

/// Depth distortion: mean of the per-pixel pairwise accumulator.
fn distortion_term(
    ctx: &TermCtx,
    mask: &[bool],
    n_masked: usize,
    weight: f64,
    adj: &mut RenderAdjoints,
) -> f64 {
    let norm = 1.0 / n_masked as f64;
    let mut acc = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            acc += ctx.out.distortion[i];
            adj.distortion[i] += weight * norm;
        }
    }
    acc * norm
}

/// Normal consistency: per pixel weight_sum - normal_buf . N_GT_cam.
fn normal_term(
    ctx: &TermCtx,
    mask: &[bool],
    weight: f64,
    adj: &mut RenderAdjoints,
) -> f64 {
    let mut n = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m && ctx.frame.normal_valid[i] {
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let norm = 1.0 / n as f64;
    let mut acc = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m || !ctx.frame.normal_valid[i] {
            continue;
        }
        let ng = ctx.frame.normals_cam[i];
        let nb = Vector3::new(
            ctx.out.normal[i * 3],
            ctx.out.normal[i * 3 + 1],
            ctx.out.normal[i * 3 + 2],
        );
        acc += ctx.out.weight_sum[i] - nb.dot(&ng);
        adj.weight_sum[i] += weight * norm;
        adj.normal[i * 3] += weight * (-ng.x) * norm;
        adj.normal[i * 3 + 1] += weight * (-ng.y) * norm;
        adj.normal[i * 3 + 2] += weight * (-ng.z) * norm;
    }
    acc * norm
}

/// DSSIM on the exposure-adjusted render; seeds the color buffer.
fn dssim_term(
    ctx: &TermCtx,
    weight: f64,
    adj: &mut RenderAdjoints,
    exposure_grad: &mut [f64; 2],
) -> Result<f64, ObjectiveError> {
    let gain = ctx.exposure.a.exp();
    let adjusted = exposure_adjust(&ctx.out.color, ctx.exposure);
    let (val, grad) = ssim::dssim_with_grad(
        &adjusted,
        &ctx.frame.color,
        ctx.out.width,
        ctx.out.height,
        3,
    )
    .ok_or(ObjectiveError::ImageTooSmall)?;
    for (i, g) in grad.iter().enumerate() {
        adj.color[i] += weight * g * gain;
        exposure_grad[0] += weight * g * gain * ctx.out.color[i];
        exposure_grad[1] += weight * g;
    }
    Ok(val)
}

/// Tracking objective: L_c + point-to-point + point-to-plane (unit weights,
/// per-term toggles) over the well-observed mask.
pub fn tracking_loss(
    out: &RenderOutput,
    frame: &Frame,
    intr: &CameraIntrinsics,
    exposure: &ExposureParams,
    terms: &TrackingTerms,
    sil_threshold: f64,
) -> Result<LossGrads, ObjectiveError> {
    let w = TermWeights {
        color_l1: terms.use_color as u8 as f64,
        p2point: terms.use_p2point as u8 as f64,
        p2plane: terms.use_p2plane as u8 as f64,
        ..TermWeights::default()
    };
    weighted_loss(out, frame, intr, exposure, &w, MaskMode::Tracking { sil_threshold })
}

/// Mapping objective: (1-lambda) L1 + lambda DSSIM + point-to-point
/// + alpha distortion + beta normal consistency over valid GT depth.
/// No point-to-plane term here. Exposure is frozen outside tracking.
pub fn mapping_loss(
    out: &RenderOutput,
    frame: &Frame,
    intr: &CameraIntrinsics,
    exposure: &ExposureParams,
    weights: &MappingWeights,
) -> Result<LossGrads, ObjectiveError> {
    let w = TermWeights {
        color_l1: 1.0 - weights.lambda,
        dssim: weights.lambda,
        p2point: 1.0,
        p2plane: 0.0,
        distortion: weights.alpha,
        normal: weights.beta,
    };
    weighted_loss(out, frame, intr, exposure, &w, MaskMode::ValidDepth)
}

/// BA objective: L_c + point-to-point + point-to-plane + alpha distortion
/// + beta normal consistency over valid GT depth.
pub fn ba_loss(
    out: &RenderOutput,
    frame: &Frame,
    intr: &CameraIntrinsics,
    exposure: &ExposureParams,
    weights: &MappingWeights,
) -> Result<LossGrads, ObjectiveError> {
    let w = TermWeights {
        color_l1: 1.0,
        dssim: 0.0,
        p2point: 1.0,
        p2plane: 1.0,
        distortion: weights.alpha,
        normal: weights.beta,
    };
    weighted_loss(out, frame, intr, exposure, &w, MaskMode::ValidDepth)
}
