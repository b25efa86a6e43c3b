//! Gradient-descent bundle adjustment: joint refinement of keyframe poses
//! and the map.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mapping::{
    keyframe_probabilities, sample_keyframes, KeyframeCandidate, MapLearningRates,
};
use crate::objectives::{ba_loss, ExposureParams, MappingWeights};
use crate::optim::AdamState;
use crate::rasterizer::{render, render_backward, GradientTargets, RenderOptions};
use crate::scene::{CameraIntrinsics, Frame, GaussianMap, Pose};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaConfig {
    /// Frames between BA runs.
    pub period: usize,
    /// Total gradient iterations per run.
    pub iterations: usize,
    /// Keyframes sampled per run (the newest candidate is always included).
    pub batch: usize,
    /// Pose learning-rate scale relative to the tracking rates.
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_translation: f64,
    /// Multiplicative pose learning-rate decay per visit of a keyframe.
    pub lr_decay: f64,
}

impl Default for BaConfig {
    fn default() -> Self {
        BaConfig {
            period: 100,
            iterations: 200,
            batch: 8,
            lr_scale: 0.5,
            lr_rotation: 3e-3,
            lr_translation: 3e-3,
            lr_decay: 0.98,
        }
    }
}

/// One frame participating in a BA run. `anchor` poses are the gauge and
/// stay fixed.
pub struct BaEntry<'a> {
    pub candidate_index: usize,
    pub frame: &'a Frame,
    pub pose: Pose,
    pub exposure: ExposureParams,
    pub anchor: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BaStats {
    pub selected: Vec<usize>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub iterations: usize,
    pub skipped_non_finite: usize,
}

/// Select keyframes for a BA run: the pose-consistent sampler against the
/// newest candidate, which is itself always part of the batch.
pub fn select_ba_keyframes(
    candidates: &[KeyframeCandidate],
    batch: usize,
    rng: &mut ChaCha8Rng,
    k: usize,
    scaler: f64,
    p_c: f64,
) -> Vec<usize> {
    assert!(!candidates.is_empty());
    let newest = candidates.len() - 1;
    let cur = &candidates[newest];
    let pool: Vec<KeyframeCandidate> = candidates[..newest].to_vec();
    let mut selected = vec![newest];
    if !pool.is_empty() {
        let probs =
            keyframe_probabilities(&pool, &cur.pose, cur.frame_index, k, scaler, p_c);
        let picked = sample_keyframes(&pool, &probs, batch.saturating_sub(1), rng);
        selected.extend(picked);
    }
    selected
}

/// Run one BA pass over the given entries: `iterations` single-keyframe
/// gradient steps in seeded random order, each updating both the visited
/// keyframe's pose and the map. Returns per-entry refined poses in place.
#[allow(clippy::too_many_arguments)]
pub fn run_ba(
    map: &mut GaussianMap,
    entries: &mut [BaEntry],
    intr: &CameraIntrinsics,
    cfg: &BaConfig,
    weights: &MappingWeights,
    map_lr: &MapLearningRates,
    scene_scale: f64,
    seed: u64,
    opts: &RenderOptions,
) -> Result<BaStats, crate::pipeline::PipelineError> {
    assert!(!entries.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = BaStats::default();

    // Batch loss at fixed poses, for the non-increase contract.
    let batch_loss = |map: &GaussianMap, entries: &[BaEntry]| -> f64 {
        entries
            .iter()
            .map(|e| {
                render(map, intr, &e.pose, opts)
                    .ok()
                    .and_then(|out| ba_loss(&out, e.frame, intr, &e.exposure, weights).ok())
                    .map(|lg| lg.breakdown.total)
                    .unwrap_or(f64::INFINITY)
            })
            .sum()
    };
    stats.loss_before = batch_loss(map, entries);

    let n = map.len();
    let mut adam_pos = AdamState::new(n * 3);
    let mut adam_rot = AdamState::new(n * 3);
    let mut adam_scale = AdamState::new(n * 2);
    let mut adam_op = AdamState::new(n);
    let mut adam_col = AdamState::new(n * 3);
    let mut adam_pose: Vec<AdamState> = entries
        .iter()
        .map(|_| {
            let mut a = AdamState::new(6);
            a.beta1 = 0.0;
            a.beta2 = 0.99;
            a
        })
        .collect();
    // Rotations pivot about each frame's observed centroid, like tracking.
    let pivots: Vec<Vector3<f64>> = entries
        .iter()
        .map(|e| e.pose.transform_point(&crate::tracking::mean_cam_point(e.frame)))
        .collect();
    let mut visits: Vec<i32> = vec![0; entries.len()];
    let lr_pos = map_lr.position * scene_scale;
    let lr_rot_pose = cfg.lr_rotation * cfg.lr_scale;
    let lr_trans_pose = cfg.lr_translation * cfg.lr_scale;

    // Visit order: repeated seeded shuffles of the batch.
    let mut schedule: Vec<usize> = Vec::with_capacity(cfg.iterations);
    while schedule.len() < cfg.iterations {
        let mut round: Vec<usize> = (0..entries.len()).collect();
        round.shuffle(&mut rng);
        schedule.extend(round);
    }
    schedule.truncate(cfg.iterations);

    for &ei in &schedule {
        let entry = &entries[ei];
        let out = render(map, intr, &entry.pose, opts)?;
        let lg = match ba_loss(&out, entry.frame, intr, &entry.exposure, weights) {
            Ok(lg) => lg,
            Err(_) => {
                stats.skipped_non_finite += 1;
                continue;
            }
        };
        if !lg.breakdown.total.is_finite() {
            stats.skipped_non_finite += 1;
            continue;
        }
        let grads = render_backward(
            map,
            intr,
            &entry.pose,
            &out,
            &lg.adjoints,
            GradientTargets::all(),
            opts,
        )?;

        if !entry.anchor {
            let pivot = pivots[ei];
            let s = cfg.lr_decay.powi(visits[ei]);
            visits[ei] += 1;
            let ap = &mut adam_pose[ei];
            ap.begin_step();
            let pose = entries[ei].pose;
            let arm = pose.translation - pivot;
            let g_theta = grads.pose.rot_tangent + arm.cross(&grads.pose.translation);
            let g_delta = grads.pose.translation;
            let dr = Vector3::new(
                ap.update(0, g_theta.x, lr_rot_pose * s),
                ap.update(1, g_theta.y, lr_rot_pose * s),
                ap.update(2, g_theta.z, lr_rot_pose * s),
            );
            let dt = Vector3::new(
                ap.update(3, g_delta.x, lr_trans_pose * s),
                ap.update(4, g_delta.y, lr_trans_pose * s),
                ap.update(5, g_delta.z, lr_trans_pose * s),
            );
            if dr == Vector3::zeros() {
                entries[ei].pose = Pose::new(pose.rotation, pose.translation + dt);
            } else {
                let dq = nalgebra::UnitQuaternion::from_scaled_axis(dr);
                let mut q = dq * pose.rotation;
                q.renormalize();
                entries[ei].pose = Pose::new(q, dq * (pose.translation - pivot) + pivot + dt);
            }
        }

        adam_pos.begin_step();
        adam_rot.begin_step();
        adam_scale.begin_step();
        adam_op.begin_step();
        adam_col.begin_step();
        for (i, g) in map.gaussians.iter_mut().enumerate() {
            let mg = &grads.map;
            g.position += Vector3::new(
                adam_pos.update(i * 3, mg.position[i].x, lr_pos),
                adam_pos.update(i * 3 + 1, mg.position[i].y, lr_pos),
                adam_pos.update(i * 3 + 2, mg.position[i].z, lr_pos),
            );
            let dr = Vector3::new(
                adam_rot.update(i * 3, mg.rot_tangent[i].x, map_lr.rotation),
                adam_rot.update(i * 3 + 1, mg.rot_tangent[i].y, map_lr.rotation),
                adam_rot.update(i * 3 + 2, mg.rot_tangent[i].z, map_lr.rotation),
            );
            if dr != Vector3::zeros() {
                let mut q = nalgebra::UnitQuaternion::from_scaled_axis(dr) * g.rotation;
                q.renormalize();
                g.rotation = q;
            }
            g.log_scale.x += adam_scale.update(i * 2, mg.log_scale[i].x, map_lr.log_scale);
            g.log_scale.y += adam_scale.update(i * 2 + 1, mg.log_scale[i].y, map_lr.log_scale);
            g.opacity_logit += adam_op.update(i, mg.opacity_logit[i], map_lr.opacity);
            g.color.x += adam_col.update(i * 3, mg.color[i].x, map_lr.color);
            g.color.y += adam_col.update(i * 3 + 1, mg.color[i].y, map_lr.color);
            g.color.z += adam_col.update(i * 3 + 2, mg.color[i].z, map_lr.color);
        }
        stats.iterations += 1;
    }

    stats.loss_after = batch_loss(map, entries);
    Ok(stats)
}
