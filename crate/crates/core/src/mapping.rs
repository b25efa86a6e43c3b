//! Silhouette-driven Gaussian expansion, pose-consistent keyframe sampling
//! and map optimization with frozen poses.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::objectives::{mapping_loss, ExposureParams, MappingWeights};
use crate::optim::AdamState;
use crate::rasterizer::{render, render_backward, GradientTargets, RenderOptions, RenderOutput};
use crate::scene::{seed_gaussians, CameraIntrinsics, Frame, GaussianMap, Pose};

/// Learning rates per Gaussian parameter group. The position rate is scaled
/// by the scene scale at run time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MapLearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for MapLearningRates {
    fn default() -> Self {
        MapLearningRates {
            position: 1e-4,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MappingConfig {
    /// Expansion / candidate-admission period in frames.
    pub k: usize,
    /// Keyframes sampled per map update (the current frame is always added).
    pub n_keyframes: usize,
    /// Silhouette threshold below which a pixel counts as unobserved.
    pub rho_e: f64,
    /// Probability reserved for the current frame during sampling.
    pub p_c: f64,
    /// Scaler constant of the sampling probability.
    pub scaler: f64,
    /// Relative depth margin of the geometry-in-front expansion test.
    pub tau_depth: f64,
    /// Gradient steps per map update.
    pub iterations: usize,
    /// Map update period in frames (1 = every frame).
    pub period: usize,
    /// Pixel stride of splat seeding.
    pub stride: usize,
    /// Remove splats with opacity below this after an update, when set.
    pub prune_opacity: Option<f64>,
    pub weights: MappingWeights,
    pub lr: MapLearningRates,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            k: 8,
            n_keyframes: 8,
            rho_e: 0.5,
            p_c: 0.1,
            scaler: 0.2,
            tau_depth: 0.05,
            iterations: 15,
            period: 1,
            stride: 2,
            prune_opacity: None,
            weights: MappingWeights::default(),
            lr: MapLearningRates::default(),
        }
    }
}

/// An admitted keyframe: the frame data lives in the pipeline's frame store.
#[derive(Debug, Clone, Copy)]
pub struct KeyframeCandidate {
    pub frame_index: usize,
    pub pose: Pose,
    pub exposure: ExposureParams,
}

/// Pixels the map should grow into: unobserved silhouette plus regions where
/// the ground-truth geometry sits in front of the rendered surface. Pixels
/// without valid depth never seed.
pub fn expansion_mask(
    out: &RenderOutput,
    frame: &Frame,
    rho_e: f64,
    tau_depth: f64,
) -> Vec<bool> {
    (0..frame.depth.len())
        .map(|i| {
            if frame.depth[i] <= 0.0 {
                return false;
            }
            let s = out.silhouette[i];
            if s < rho_e {
                return true;
            }
            s > 0.5 && frame.depth[i] < out.depth[i] - tau_depth * frame.depth[i]
        })
        .collect()
}

/// Seed new splats at masked pixels, exactly like map initialization.
/// Existing splats are untouched; returns the number added.
pub fn expand_gaussians(
    map: &mut GaussianMap,
    frame: &Frame,
    pose: &Pose,
    mask: &[bool],
    intr: &CameraIntrinsics,
    stride: usize,
) -> usize {
    seed_gaussians(map, frame, pose, intr, stride, Some(mask))
}

/// Pose-consistent sampling probability of each candidate against the
/// current frame: sum over {position distance, rotation angle, time lapse in
/// candidate periods} of log2(1 + 1/(l + s)), normalized so the candidates
/// carry 1 - p_c in total.
pub fn keyframe_probabilities(
    candidates: &[KeyframeCandidate],
    current_pose: &Pose,
    current_index: usize,
    k: usize,
    s: f64,
    p_c: f64,
) -> Vec<f64> {
    let raw: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let d_l = (c.pose.translation - current_pose.translation).norm();
            let r_l = c.pose.rotation_angle_to(current_pose);
            let t_l = (current_index.saturating_sub(c.frame_index)) as f64 / k.max(1) as f64;
            pose_consistency_score(d_l, r_l, t_l, s)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        let u = (1.0 - p_c) / candidates.len().max(1) as f64;
        return vec![u; candidates.len()];
    }
    raw.iter().map(|r| (1.0 - p_c) * r / total).collect()
}

/// Raw pose-consistency score of Eq-style terms log2(1 + 1/(l+s)).
pub fn pose_consistency_score(d_l: f64, r_l: f64, t_l: f64, s: f64) -> f64 {
    [d_l, r_l, t_l]
        .iter()
        .map(|l| (1.0 + 1.0 / (l + s)).log2())
        .sum()
}

/// Draw up to n candidates without replacement by CDF inversion over the
/// probability-sorted list, renormalizing after each draw. Zero-probability
/// candidates are never drawn. Deterministic for a fixed RNG stream.
pub fn sample_keyframes(
    candidates: &[KeyframeCandidate],
    probabilities: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    assert_eq!(candidates.len(), probabilities.len());
    let mut pool: Vec<usize> = (0..candidates.len()).collect();
    // Sort by probability descending, frame index ascending as tiebreak.
    pool.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap()
            .then(candidates[a].frame_index.cmp(&candidates[b].frame_index))
    });
    let mut picked = Vec::new();
    let mut remaining: Vec<(usize, f64)> =
        pool.into_iter().map(|i| (i, probabilities[i])).collect();
    while picked.len() < n && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|(_, p)| p).sum();
        if total <= 0.0 {
            break;
        }
        let u = rng.gen::<f64>() * total;
        let mut cum = 0.0;
        let mut chosen = None;
        for (slot, (_, p)) in remaining.iter().enumerate() {
            if *p <= 0.0 {
                continue;
            }
            cum += p;
            if cum > u {
                chosen = Some(slot);
                break;
            }
        }
        // Floating-point tail: fall back to the last positive entry.
        let slot = chosen.unwrap_or_else(|| {
            remaining
                .iter()
                .rposition(|(_, p)| *p > 0.0)
                .expect("positive total implies a positive entry")
        });
        picked.push(remaining.remove(slot).0);
    }
    picked
}

/// One keyframe slot of a map update batch.
pub struct MapUpdateEntry<'a> {
    pub frame: &'a Frame,
    pub pose: Pose,
    pub exposure: ExposureParams,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MapUpdateStats {
    pub iterations: usize,
    pub skipped_non_finite: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub pruned: usize,
}

/// Optimize the map against the batch for the configured iteration count,
/// cycling through the keyframes one render per iteration. Poses are frozen.
/// Optimizer state is fresh per call.
pub fn map_update(
    map: &mut GaussianMap,
    batch: &[MapUpdateEntry],
    intr: &CameraIntrinsics,
    cfg: &MappingConfig,
    scene_scale: f64,
    opts: &RenderOptions,
) -> Result<MapUpdateStats, crate::pipeline::PipelineError> {
    assert!(!batch.is_empty());
    let n = map.len();
    let mut adam_pos = AdamState::new(n * 3);
    let mut adam_rot = AdamState::new(n * 3);
    let mut adam_scale = AdamState::new(n * 2);
    let mut adam_op = AdamState::new(n);
    let mut adam_col = AdamState::new(n * 3);
    let lr_pos = cfg.lr.position * scene_scale;

    let mut stats = MapUpdateStats::default();
    for it in 0..cfg.iterations {
        let entry = &batch[it % batch.len()];
        let out = render(map, intr, &entry.pose, opts)?;
        let lg = match mapping_loss(&out, entry.frame, intr, &entry.exposure, &cfg.weights) {
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
        if it == 0 {
            stats.first_loss = lg.breakdown.total;
        }
        stats.last_loss = lg.breakdown.total;
        let grads = render_backward(
            map,
            intr,
            &entry.pose,
            &out,
            &lg.adjoints,
            GradientTargets::map_only(),
            opts,
        )?;

        adam_pos.begin_step();
        adam_rot.begin_step();
        adam_scale.begin_step();
        adam_op.begin_step();
        adam_col.begin_step();
        for (i, g) in map.gaussians.iter_mut().enumerate() {
            let mg = &grads.map;
            let dp = Vector3::new(
                adam_pos.update(i * 3, mg.position[i].x, lr_pos),
                adam_pos.update(i * 3 + 1, mg.position[i].y, lr_pos),
                adam_pos.update(i * 3 + 2, mg.position[i].z, lr_pos),
            );
            g.position += dp;
            let dr = Vector3::new(
                adam_rot.update(i * 3, mg.rot_tangent[i].x, cfg.lr.rotation),
                adam_rot.update(i * 3 + 1, mg.rot_tangent[i].y, cfg.lr.rotation),
                adam_rot.update(i * 3 + 2, mg.rot_tangent[i].z, cfg.lr.rotation),
            );
            if dr != Vector3::zeros() {
                let mut q = nalgebra::UnitQuaternion::from_scaled_axis(dr) * g.rotation;
                q.renormalize();
                g.rotation = q;
            }
            g.log_scale.x += adam_scale.update(i * 2, mg.log_scale[i].x, cfg.lr.log_scale);
            g.log_scale.y += adam_scale.update(i * 2 + 1, mg.log_scale[i].y, cfg.lr.log_scale);
            g.opacity_logit += adam_op.update(i, mg.opacity_logit[i], cfg.lr.opacity);
            g.color.x += adam_col.update(i * 3, mg.color[i].x, cfg.lr.color);
            g.color.y += adam_col.update(i * 3 + 1, mg.color[i].y, cfg.lr.color);
            g.color.z += adam_col.update(i * 3 + 2, mg.color[i].z, cfg.lr.color);
        }
        stats.iterations += 1;
    }

    if let Some(min_op) = cfg.prune_opacity {
        let keep: Vec<bool> = map.gaussians.iter().map(|g| g.opacity() >= min_op).collect();
        let mut kept = Vec::with_capacity(map.len());
        let mut kept_frames = Vec::with_capacity(map.len());
        for (i, g) in map.gaussians.iter().enumerate() {
            if keep[i] {
                kept.push(*g);
                kept_frames.push(map.creation_frame[i]);
            } else {
                stats.pruned += 1;
            }
        }
        map.gaussians = kept;
        map.creation_frame = kept_frames;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn candidate(frame_index: usize, pose: Pose) -> KeyframeCandidate {
        KeyframeCandidate {
            frame_index,
            pose,
            exposure: ExposureParams::default(),
        }
    }

    /// Direct formula evaluation: d=r=0, t=1, s=0.2 gives
    /// 2 log2(6) + log2(11/6).
    #[test]
    fn probability_formula_value() {
        let p = pose_consistency_score(0.0, 0.0, 1.0, 0.2);
        let expect = 2.0 * 6.0f64.log2() + (11.0 / 6.0f64).log2();
        assert_relative_eq!(p, expect, epsilon = 1e-9);
        assert_relative_eq!(p, 6.044394119358453, epsilon = 1e-9);
    }

    #[test]
    fn probabilities_normalize_and_split_evenly() {
        let cur = Pose::identity();
        let cands = vec![candidate(0, cur), candidate(0, cur)];
        let probs = keyframe_probabilities(&cands, &cur, 8, 8, 0.2, 0.1);
        assert_relative_eq!(probs[0], 0.45, epsilon = 1e-12);
        assert_relative_eq!(probs[1], 0.45, epsilon = 1e-12);
        let total: f64 = probs.iter().sum::<f64>() + 0.1;
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert!(probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn score_monotone_decreasing_in_each_term() {
        let base = pose_consistency_score(0.1, 0.1, 0.1, 0.2);
        assert!(pose_consistency_score(0.2, 0.1, 0.1, 0.2) < base);
        assert!(pose_consistency_score(0.1, 0.2, 0.1, 0.2) < base);
        assert!(pose_consistency_score(0.1, 0.1, 0.2, 0.2) < base);
    }

    #[test]
    fn sampling_single_candidate() {
        let cands = vec![candidate(3, Pose::identity())];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let picked = sample_keyframes(&cands, &[0.9], 1, &mut rng);
        assert_eq!(picked, vec![0]);
        // n larger than the pool returns everyone.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let picked = sample_keyframes(&cands, &[0.9], 5, &mut rng);
        assert_eq!(picked.len(), 1);
    }

    #[test]
    fn sampling_skips_zero_probability() {
        let cands: Vec<_> = (0..4).map(|i| candidate(i, Pose::identity())).collect();
        let probs = vec![0.3, 0.0, 0.4, 0.3];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picked = sample_keyframes(&cands, &probs, 3, &mut rng);
            assert_eq!(picked.len(), 3);
            assert!(!picked.contains(&1), "seed {seed} drew the zero candidate");
        }
    }

    #[test]
    fn sampling_reproducible() {
        let cands: Vec<_> = (0..10).map(|i| candidate(i, Pose::identity())).collect();
        let probs: Vec<f64> = (0..10).map(|i| (i + 1) as f64 / 55.0).collect();
        let a = sample_keyframes(&cands, &probs, 4, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_keyframes(&cands, &probs, 4, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    /// Empirical frequencies of uniform sampling stay within 3 sigma of the
    /// multinomial expectation.
    #[test]
    fn sampling_uniform_statistics() {
        let m = 5usize;
        let cands: Vec<_> = (0..m).map(|i| candidate(i, Pose::identity())).collect();
        let probs = vec![1.0 / m as f64; m];
        let trials = 10_000usize;
        let mut counts = vec![0usize; m];
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..trials {
            let picked = sample_keyframes(&cands, &probs, 1, &mut rng);
            counts[picked[0]] += 1;
        }
        let p = 1.0 / m as f64;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "candidate {i}: {c} vs mean {mean:.1} sigma {sigma:.1}"
            );
        }
    }

    /// Candidate order only permutes the output probabilities.
    #[test]
    fn probabilities_order_invariant() {
        let poses = [
            Pose::new(
                nalgebra::UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.1),
                Vector3::new(0.1, 0.0, 0.0),
            ),
            Pose::new(
                nalgebra::UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.3),
                Vector3::new(0.0, 0.2, 0.0),
            ),
            Pose::identity(),
        ];
        let cur = Pose::new(
            nalgebra::UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.05),
            Vector3::new(0.05, 0.0, 0.0),
        );
        let cands: Vec<_> = (0..3).map(|i| candidate(i, poses[i])).collect();
        let rev: Vec<_> = cands.iter().rev().cloned().collect();
        let p1 = keyframe_probabilities(&cands, &cur, 10, 4, 0.2, 0.1);
        let p2 = keyframe_probabilities(&rev, &cur, 10, 4, 0.2, 0.1);
        for i in 0..3 {
            assert_relative_eq!(p1[i], p2[2 - i], epsilon = 1e-12);
        }
    }
}
