//! The per-frame SLAM loop: tracking, candidate admission, expansion,
//! mapping, bundle adjustment, evaluation and artifact output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::ba::{run_ba, BaConfig, BaEntry};
use crate::dataset::{write_trajectory, Dataset, DatasetError};
use crate::mapping::{
    expand_gaussians, expansion_mask, keyframe_probabilities, map_update, sample_keyframes,
    KeyframeCandidate, MapUpdateEntry, MappingConfig,
};
use crate::metrics::{metric_ate, metric_depth_rmse, metric_psnr, metric_ssim, MetricError};
use crate::objectives::{exposure_adjust, ExposureParams, ObjectiveError};
use crate::rasterizer::{render, RasterError, RenderOptions};
use crate::scene::{init_map_from_frame, Frame, GaussianMap, Pose, SceneError};
use crate::tracking::{track_from, TrackerState, TrackingConfig};
use crate::viz::{export_map_ply, VizError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
}

/// Full run configuration. Presets encode the Base/Small/Tiny variants;
/// explicit overrides win over preset values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlamConfig {
    pub preset: String,
    pub resolution_divisor: usize,
    pub seed: u64,
    /// Every eval_stride-th frame is held out of mapping/BA (0 disables).
    pub eval_stride: usize,
    /// Map-update iterations spent on frame 0.
    pub init_iterations: usize,
    pub silhouette_literal: bool,
    pub z_near: f64,
    pub tracking: TrackingConfig,
    pub mapping: MappingConfig,
    pub ba: BaConfig,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self::base()
    }
}

impl SlamConfig {
    pub fn base() -> SlamConfig {
        SlamConfig {
            preset: "base".into(),
            resolution_divisor: 1,
            seed: 0,
            eval_stride: 8,
            init_iterations: 30,
            silhouette_literal: false,
            z_near: 0.01,
            tracking: TrackingConfig {
                iterations: 15,
                ..TrackingConfig::default()
            },
            mapping: MappingConfig {
                k: 8,
                p_c: 0.1,
                iterations: 15,
                period: 1,
                ..MappingConfig::default()
            },
            ba: BaConfig::default(),
        }
    }

    pub fn small() -> SlamConfig {
        let mut cfg = Self::base();
        cfg.preset = "small".into();
        cfg.resolution_divisor = 2;
        cfg.tracking.iterations = 10;
        cfg.mapping.iterations = 10;
        cfg.mapping.period = 2;
        cfg.mapping.k = 4;
        cfg.mapping.p_c = 0.5;
        cfg
    }

    pub fn tiny() -> SlamConfig {
        let mut cfg = Self::base();
        cfg.preset = "tiny".into();
        cfg.resolution_divisor = 4;
        cfg.tracking.iterations = 8;
        cfg.mapping.iterations = 8;
        cfg.mapping.period = 2;
        cfg.mapping.k = 4;
        cfg.mapping.p_c = 0.5;
        cfg
    }

    pub fn preset(name: &str) -> Result<SlamConfig, PipelineError> {
        match name {
            "base" => Ok(Self::base()),
            "small" => Ok(Self::small()),
            "tiny" => Ok(Self::tiny()),
            other => Err(PipelineError::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            z_near: self.z_near,
            silhouette_literal: self.silhouette_literal,
        }
    }

    /// Apply a dotted-path override, e.g. "tracking.iterations=20" or
    /// "mapping.weights.beta=0.1". Values parse as JSON scalars with a
    /// string fallback.
    pub fn apply_override(&mut self, path: &str, value: &str) -> Result<(), PipelineError> {
        let mut v = serde_json::to_value(&*self)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let pointer = format!("/{}", path.replace('.', "/"));
        let slot = v
            .pointer_mut(&pointer)
            .ok_or_else(|| PipelineError::Config(format!("unknown config path '{path}'")))?;
        *slot = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        *self = serde_json::from_value(v)
            .map_err(|e| PipelineError::Config(format!("invalid value for '{path}': {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Metrics {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub depth_rmse_mm: Option<f64>,
    pub ate_mm: Option<f64>,
}

pub struct SlamResult {
    pub trajectory: Vec<Pose>,
    pub map: GaussianMap,
    pub metrics: Metrics,
    pub log: Vec<serde_json::Value>,
    pub diverged_frames: Vec<usize>,
    pub wall_seconds: f64,
}

/// Run the full SLAM loop over a dataset. Deterministic for fixed
/// (dataset, config, seed). Artifacts are written when `out_dir` is given:
/// run.log.jsonl, est_trajectory.txt, metrics.json and map.ply.
pub fn run_slam(
    dataset: &Dataset,
    cfg: &SlamConfig,
    out_dir: Option<&Path>,
) -> Result<SlamResult, PipelineError> {
    let start = Instant::now();
    let opts = cfg.render_options();
    let intr = dataset.scaled_intrinsics(cfg.resolution_divisor);
    let mut frames: Vec<Frame> = Vec::with_capacity(dataset.len);
    for i in 0..dataset.len {
        frames.push(dataset.load_frame(i, cfg.resolution_divisor)?);
    }
    if frames.is_empty() {
        return Err(PipelineError::Config("dataset has no frames".into()));
    }

    let mut log: Vec<serde_json::Value> = Vec::new();
    let gt = dataset.groundtruth.as_deref();
    let pose0 = gt.map_or(Pose::identity(), |g| g[0]);
    let scene_scale = frames[0].mean_valid_depth().max(1e-6);

    // Bootstrap the map from frame 0.
    let mut map = init_map_from_frame(&frames[0], &pose0, &intr, cfg.mapping.stride)?;
    {
        let batch = [MapUpdateEntry {
            frame: &frames[0],
            pose: pose0,
            exposure: ExposureParams::default(),
        }];
        let mut boot_cfg = cfg.mapping;
        boot_cfg.iterations = cfg.init_iterations;
        let stats = map_update(&mut map, &batch, &intr, &boot_cfg, scene_scale, &opts)?;
        log.push(json!({"event": "init", "frame": 0, "splats": map.len(), "stats": stats}));
    }

    let mut trajectory = vec![pose0];
    let mut exposures = vec![ExposureParams::default()];
    let mut tracker = TrackerState::default();
    tracker.push_pose(pose0);
    let mut candidates: Vec<KeyframeCandidate> = vec![KeyframeCandidate {
        frame_index: 0,
        pose: pose0,
        exposure: ExposureParams::default(),
    }];
    let mut diverged_frames = Vec::new();

    let held_out = |i: usize| cfg.eval_stride > 0 && i % cfg.eval_stride == cfg.eval_stride - 1;

    for i in 1..frames.len() {
        let frame = &frames[i];
        let tr = track_from(
            &map,
            frame,
            tracker.initial_pose().expect("frame 0 seeded"),
            &intr,
            &cfg.tracking,
            &opts,
        )?;
        if tr.diverged {
            diverged_frames.push(i);
        }
        trajectory.push(tr.pose);
        exposures.push(tr.exposure);
        tracker.push_pose(tr.pose);
        log.push(json!({
            "event": "track",
            "frame": i,
            "loss": tr.loss,
            "diverged": tr.diverged,
            "pose": tr.pose.as_tum(),
        }));

        if held_out(i) {
            continue;
        }

        // Candidate admission and Gaussian expansion every k frames.
        if i % cfg.mapping.k == 0 {
            candidates.push(KeyframeCandidate {
                frame_index: i,
                pose: tr.pose,
                exposure: tr.exposure,
            });
            let out = render(&map, &intr, &tr.pose, &opts)?;
            let mask = expansion_mask(&out, frame, cfg.mapping.rho_e, cfg.mapping.tau_depth);
            let added = expand_gaussians(&mut map, frame, &tr.pose, &mask, &intr, cfg.mapping.stride);
            log.push(json!({
                "event": "expand",
                "frame": i,
                "mask_pixels": mask.iter().filter(|&&m| m).count(),
                "added": added,
                "splats": map.len(),
            }));
        }

        // Map update on the preset period: the current frame plus sampled
        // keyframes.
        if i % cfg.mapping.period == 0 {
            let pool: Vec<KeyframeCandidate> = candidates
                .iter()
                .filter(|c| c.frame_index != i)
                .copied()
                .collect();
            let mut batch_frames: Vec<usize> = vec![i];
            let mut batch: Vec<MapUpdateEntry> = vec![MapUpdateEntry {
                frame,
                pose: tr.pose,
                exposure: tr.exposure,
            }];
            if !pool.is_empty() {
                let probs = keyframe_probabilities(
                    &pool,
                    &tr.pose,
                    i,
                    cfg.mapping.k,
                    cfg.mapping.scaler,
                    cfg.mapping.p_c,
                );
                let mut rng = ChaCha8Rng::seed_from_u64(
                    cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let picked = sample_keyframes(&pool, &probs, cfg.mapping.n_keyframes, &mut rng);
                for &p in &picked {
                    let c = &pool[p];
                    batch_frames.push(c.frame_index);
                    batch.push(MapUpdateEntry {
                        frame: &frames[c.frame_index],
                        pose: c.pose,
                        exposure: c.exposure,
                    });
                }
            }
            let stats = map_update(&mut map, &batch, &intr, &cfg.mapping, scene_scale, &opts)?;
            log.push(json!({
                "event": "map",
                "frame": i,
                "batch": batch_frames,
                "stats": stats,
            }));
        }

        // Bundle adjustment on its own cadence.
        if cfg.ba.period > 0 && i % cfg.ba.period == 0 && candidates.len() >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ 0xBA ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let selected = crate::ba::select_ba_keyframes(
                &candidates,
                cfg.ba.batch,
                &mut rng,
                cfg.mapping.k,
                cfg.mapping.scaler,
                cfg.mapping.p_c,
            );
            let mut entries: Vec<BaEntry> = selected
                .iter()
                .map(|&ci| {
                    let c = &candidates[ci];
                    BaEntry {
                        candidate_index: ci,
                        frame: &frames[c.frame_index],
                        pose: c.pose,
                        exposure: c.exposure,
                        anchor: c.frame_index == 0,
                    }
                })
                .collect();
            let seed = cfg.seed ^ 0xBA5E ^ i as u64;
            let stats = run_ba(
                &mut map,
                &mut entries,
                &intr,
                &cfg.ba,
                &cfg.mapping.weights,
                &cfg.mapping.lr,
                scene_scale,
                seed,
                &opts,
            )?;
            // Write refined poses back to the candidate list and trajectory.
            for e in &entries {
                let ci = e.candidate_index;
                candidates[ci].pose = e.pose;
                let fi = candidates[ci].frame_index;
                trajectory[fi] = e.pose;
            }
            // Keep the constant-velocity history consistent when it was
            // refined.
            tracker.prev = Some(trajectory[i]);
            if i >= 1 {
                tracker.prev2 = Some(trajectory[i - 1]);
            }
            log.push(json!({
                "event": "ba",
                "frame": i,
                "stats": stats,
            }));
        }
    }

    // Evaluation: held-out frames (all frames when the split is empty).
    let eval_frames: Vec<usize> = (0..frames.len()).filter(|&i| held_out(i)).collect();
    let eval_frames = if eval_frames.is_empty() {
        (0..frames.len()).collect()
    } else {
        eval_frames
    };
    let mut psnr_acc = 0.0;
    let mut ssim_acc = 0.0;
    let mut n_eval = 0usize;
    let mut depth_renders: Vec<Vec<f64>> = Vec::new();
    let mut depth_gts: Vec<Vec<f64>> = Vec::new();
    let mut depth_masks: Vec<Vec<bool>> = Vec::new();
    for &i in &eval_frames {
        let out = render(&map, &intr, &trajectory[i], &opts)?;
        let adjusted = exposure_adjust(&out.color, &exposures[i]);
        psnr_acc += metric_psnr(&adjusted, &frames[i].color);
        ssim_acc += metric_ssim(&adjusted, &frames[i].color, intr.width, intr.height)?;
        depth_renders.push(out.depth);
        depth_gts.push(frames[i].depth.clone());
        depth_masks.push(frames[i].depth.iter().map(|&d| d > 0.0).collect());
        n_eval += 1;
    }
    let rmse = {
        let r: Vec<&[f64]> = depth_renders.iter().map(|v| v.as_slice()).collect();
        let g: Vec<&[f64]> = depth_gts.iter().map(|v| v.as_slice()).collect();
        let m: Vec<&[bool]> = depth_masks.iter().map(|v| v.as_slice()).collect();
        metric_depth_rmse(&r, &g, &m).ok()
    };
    let ate = gt.and_then(|g| metric_ate(&trajectory, &g[..trajectory.len()], true).ok());
    let metrics = Metrics {
        psnr: (n_eval > 0).then(|| psnr_acc / n_eval as f64),
        ssim: (n_eval > 0).then(|| ssim_acc / n_eval as f64),
        depth_rmse_mm: rmse,
        ate_mm: ate,
    };
    log.push(json!({"event": "metrics", "metrics": metrics, "eval_frames": eval_frames}));

    let result = SlamResult {
        trajectory,
        map,
        metrics,
        log,
        diverged_frames,
        wall_seconds: start.elapsed().as_secs_f64(),
    };

    if let Some(dir) = out_dir {
        write_artifacts(&result, dir)?;
    }
    Ok(result)
}

pub fn write_artifacts(result: &SlamResult, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_trajectory(&dir.join("est_trajectory.txt"), &result.trajectory)?;
    let metrics_path = dir.join("metrics.json");
    fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&result.metrics).expect("metrics serialize"),
    )
    .map_err(|source| PipelineError::Io {
        path: metrics_path.clone(),
        source,
    })?;
    let log_path = dir.join("run.log.jsonl");
    let f = fs::File::create(&log_path).map_err(|source| PipelineError::Io {
        path: log_path.clone(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(f);
    for line in &result.log {
        writeln!(w, "{line}").map_err(|source| PipelineError::Io {
            path: log_path.clone(),
            source,
        })?;
    }
    export_map_ply(&result.map, &dir.join("map.ply"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The preset tables pin the published per-variant settings.
    #[test]
    fn preset_tables() {
        let base = SlamConfig::base();
        assert_eq!(base.resolution_divisor, 1);
        assert_eq!(base.tracking.iterations, 15);
        assert_eq!(base.mapping.iterations, 15);
        assert_eq!(base.mapping.period, 1);
        assert_eq!(base.mapping.k, 8);
        assert_eq!(base.mapping.p_c, 0.1);
        assert_eq!(base.mapping.rho_e, 0.5);
        assert_eq!(base.mapping.scaler, 0.2);
        assert_eq!(base.ba.iterations, 200);

        let small = SlamConfig::small();
        assert_eq!(small.resolution_divisor, 2);
        assert_eq!(small.tracking.iterations, 10);
        assert_eq!(small.mapping.iterations, 10);
        assert_eq!(small.mapping.period, 2);
        assert_eq!(small.mapping.k, 4);
        assert_eq!(small.mapping.p_c, 0.5);
        assert_eq!(small.mapping.rho_e, 0.5);

        let tiny = SlamConfig::tiny();
        assert_eq!(tiny.resolution_divisor, 4);
        assert_eq!(tiny.tracking.iterations, 8);
        assert_eq!(tiny.mapping.iterations, 8);
        assert_eq!(tiny.mapping.period, 2);
        assert_eq!(tiny.mapping.k, 4);
        assert_eq!(tiny.mapping.p_c, 0.5);
        assert_eq!(tiny.mapping.rho_e, 0.5);
    }

    #[test]
    fn overrides_win_over_presets() {
        let mut cfg = SlamConfig::base();
        cfg.apply_override("tracking.iterations", "20").unwrap();
        assert_eq!(cfg.tracking.iterations, 20);
        cfg.apply_override("mapping.weights.beta", "0.1").unwrap();
        assert_eq!(cfg.mapping.weights.beta, 0.1);
        cfg.apply_override("preset", "custom").unwrap();
        assert_eq!(cfg.preset, "custom");
        assert!(cfg.apply_override("no.such.path", "1").is_err());
    }
}
