//! Shared fixtures and oracles for the integration and acceptance suites:
//! the finite-difference gradient harness, the brute-force reference
//! renderer and the synthetic tracking fixtures.
#![allow(dead_code)]

use nalgebra::{Matrix4, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surfel_slam::mapping::{map_update, MapUpdateEntry, MappingConfig};
use surfel_slam::objectives::{
    weighted_loss, ExposureParams, MaskMode, TermWeights,
};
use surfel_slam::rasterizer::{
    compute_homography, ray_splat_intersect, render, render_backward, splat_weight,
    GradientTargets, RenderOptions, DEPTH_EPS, G_MIN, T_STOP,
};
use surfel_slam::scene::{
    init_map_from_frame, logit, rotation_from_normal, CameraIntrinsics, Frame, Gaussian2D,
    GaussianMap, Pose,
};
use surfel_slam::synth::SceneKind;

pub const OPTS: RenderOptions = RenderOptions {
    z_near: 0.01,
    silhouette_literal: false,
};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Absolute cushion for gradients that are legitimately ~zero.
pub const ABS_TOL: f64 = 1e-8;

pub fn test_intrinsics(size: usize) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 1.25 * size as f64,
        fy: 1.25 * size as f64,
        cx: (size - 1) as f64 / 2.0,
        cy: (size - 1) as f64 / 2.0,
        width: size,
        height: size,
        depth_scale: 1000.0,
    }
}

pub struct Scene {
    pub map: GaussianMap,
    pub pose: Pose,
    pub exposure: ExposureParams,
    pub frame: Frame,
    pub intr: CameraIntrinsics,
}

/// Randomized scene with margins that keep the objective smooth around the
/// evaluation point: separated splat depths, tilted but non-grazing normals,
/// moderate opacities.
pub fn random_scene(seed: u64, n_splats: usize, with_tiny: bool) -> Scene {
    random_scene_sized(seed, n_splats, with_tiny, 8)
}

/// The renderer's blending contract has genuine (spec'd) discontinuities:
/// the 1% filtered-Gaussian cutoff, the max() of the two filter kernels and
/// the L1 kinks at zero residual. Central differences at h=1e-4 are only
/// meaningful away from them, so scenes are rejected unless every
/// (pixel, splat) pair keeps a margin from each switch point.
pub fn fd_safe(scene: &Scene) -> bool {
    use surfel_slam::rasterizer::{build_splat_screens, G_MIN};
    let out = match render(&scene.map, &scene.intr, &scene.pose, &OPTS) {
        Ok(o) => o,
        Err(_) => return false,
    };
    let screens = build_splat_screens(&scene.map, &scene.intr, &scene.pose, &OPTS);
    let (w, h) = (scene.intr.width, scene.intr.height);
    // Cutoff and branch margins over every pixel-splat pair.
    for s in &screens {
        if s.culled {
            return false;
        }
        let m = &s.m;
        for py in 0..h {
            for px in 0..w {
                let (x, y) = (px as f64, py as f64);
                let (a1, a2, a4) = (m[0][0], m[0][1], m[0][2]);
                let (b1, b2, b4) = (m[1][0], m[1][1], m[1][2]);
                let (c1, c2, c4) = (m[2][0], m[2][1], m[2][2]);
                let hu1 = x * c1 - a1;
                let hu2 = x * c2 - a2;
                let hu4 = x * c4 - a4;
                let hv1 = y * c1 - b1;
                let hv2 = y * c2 - b2;
                let hv4 = y * c4 - b4;
                let den = hu1 * hv2 - hu2 * hv1;
                if den.abs() < 1e-6 {
                    return false;
                }
                let u = (hu2 * hv4 - hu4 * hv2) / den;
                let v = (hu4 * hv1 - hu1 * hv4) / den;
                let g_uv = (-(u * u + v * v) / 2.0).exp();
                let dx = x - s.center_px.0;
                let dy = y - s.center_px.1;
                let g_scr = (-(dx * dx + dy * dy)).exp();
                let ghat = g_uv.max(g_scr);
                if (ghat - G_MIN).abs() < 5e-4 {
                    return false;
                }
                if ghat >= G_MIN && (g_uv - g_scr).abs() < 5e-4 {
                    return false;
                }
            }
        }
    }
    // Residual margins at every valid pixel.
    let gain = scene.exposure.a.exp();
    for i in 0..w * h {
        if scene.frame.depth[i] <= 0.0 {
            continue;
        }
        for c in 0..3 {
            let e = gain * out.color[i * 3 + c] + scene.exposure.b - scene.frame.color[i * 3 + c];
            if e.abs() < 1e-3 {
                return false;
            }
        }
        if (out.depth[i] - scene.frame.depth[i]).abs() < 1e-3 {
            return false;
        }
        // The point-to-plane residual dn * (D_gt - D) flips sign exactly
        // with the depth residual, so the depth margin above covers it.
        // Distortion |z_i - z_j| kinks at coincident intersection depths.
        let items = out.blend.pixel(i);
        for a in 0..items.len() {
            for b in a + 1..items.len() {
                if (items[a].z - items[b].z).abs() < 5e-4 {
                    return false;
                }
            }
        }
    }
    true
}

pub fn random_scene_sized(seed: u64, n_splats: usize, with_tiny: bool, size: usize) -> Scene {
    for attempt in 0..64u64 {
        let scene = build_scene(seed.wrapping_add(7919 * attempt), n_splats, with_tiny, size);
        if fd_safe(&scene) {
            return scene;
        }
    }
    panic!("no FD-safe scene found from seed {seed}");
}

pub fn build_scene(seed: u64, n_splats: usize, with_tiny: bool, size: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = test_intrinsics(size);
    let mut map = GaussianMap::default();
    for i in 0..n_splats {
        let tiny = with_tiny && i % 2 == 1;
        // Tilt capped and depths in geometric progression with scales tied
        // to depth: splat planes never intersect inside the frustum, so the
        // distortion term stays away from its |z_i - z_j| kinks.
        let normal = Vector3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            -1.0,
        )
        .normalize();
        let spin = UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(normal),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let rotation = spin * rotation_from_normal(&normal);
        let z = 0.8 * 1.35f64.powi(i as i32) + rng.gen_range(0.0..0.04);
        let base: f64 = if tiny {
            rng.gen_range(0.018..0.026)
        } else {
            rng.gen_range(0.35..0.55)
        };
        let scale = base * z;
        map.push(
            Gaussian2D {
                position: Vector3::new(
                    rng.gen_range(-0.06..0.06) * z,
                    rng.gen_range(-0.06..0.06) * z,
                    z,
                ),
                rotation,
                log_scale: Vector2::new(
                    (scale * rng.gen_range(0.85..1.15)).ln(),
                    (scale * rng.gen_range(0.85..1.15)).ln(),
                ),
                opacity_logit: logit(rng.gen_range(0.35..0.75)),
                color: Vector3::new(
                    rng.gen_range(0.15..0.85),
                    rng.gen_range(0.15..0.85),
                    rng.gen_range(0.15..0.85),
                ),
            },
            0,
        );
    }
    let pose = Pose::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
        )),
        Vector3::new(
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
        ),
    );
    let exposure = ExposureParams {
        a: rng.gen_range(-0.1..0.1),
        b: rng.gen_range(-0.05..0.05),
    };
    let n = intr.npixels();
    let color: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.1..0.9)).collect();
    let depth: Vec<f64> = (0..n).map(|_| rng.gen_range(0.85..1.15)).collect();
    let frame = Frame::new(0, &intr, color, depth);
    Scene {
        map,
        pose,
        exposure,
        frame,
        intr,
    }
}

#[derive(Clone, Copy, Debug)]
pub enum LossKind {
    ColorL1,
    P2Point,
    P2Plane,
    Distortion,
    Normal,
    Tracking,
    Mapping,
    Ba,
}

impl LossKind {
    pub fn weights(self) -> TermWeights {
        match self {
            LossKind::ColorL1 => TermWeights {
                color_l1: 1.0,
                ..TermWeights::default()
            },
            LossKind::P2Point => TermWeights {
                p2point: 1.0,
                ..TermWeights::default()
            },
            LossKind::P2Plane => TermWeights {
                p2plane: 1.0,
                ..TermWeights::default()
            },
            LossKind::Distortion => TermWeights {
                distortion: 1.0,
                ..TermWeights::default()
            },
            LossKind::Normal => TermWeights {
                normal: 1.0,
                ..TermWeights::default()
            },
            LossKind::Tracking => TermWeights {
                color_l1: 1.0,
                p2point: 1.0,
                p2plane: 1.0,
                ..TermWeights::default()
            },
            LossKind::Mapping => TermWeights {
                color_l1: 0.8,
                dssim: 0.2,
                p2point: 1.0,
                distortion: 1000.0,
                normal: 0.05,
                ..TermWeights::default()
            },
            LossKind::Ba => TermWeights {
                color_l1: 1.0,
                p2point: 1.0,
                p2plane: 1.0,
                distortion: 1000.0,
                normal: 0.05,
                ..TermWeights::default()
            },
        }
    }
}

pub fn loss_value(kind: LossKind, scene: &Scene) -> f64 {
    let out = render(&scene.map, &scene.intr, &scene.pose, &OPTS).unwrap();
    let lg = weighted_loss(
        &out,
        &scene.frame,
        &scene.intr,
        &scene.exposure,
        &kind.weights(),
        MaskMode::ValidDepth,
    )
    .unwrap();
    lg.breakdown.total
}

pub struct Analytic {
    pub map: surfel_slam::rasterizer::MapGradients,
    pub pose: surfel_slam::rasterizer::PoseGradient,
    pub exposure: [f64; 2],
}

pub fn analytic(kind: LossKind, scene: &Scene) -> Analytic {
    let out = render(&scene.map, &scene.intr, &scene.pose, &OPTS).unwrap();
    let lg = weighted_loss(
        &out,
        &scene.frame,
        &scene.intr,
        &scene.exposure,
        &kind.weights(),
        MaskMode::ValidDepth,
    )
    .unwrap();
    let grads = render_backward(
        &scene.map,
        &scene.intr,
        &scene.pose,
        &out,
        &lg.adjoints,
        GradientTargets::all(),
        &OPTS,
    )
    .unwrap();
    Analytic {
        map: grads.map,
        pose: grads.pose,
        exposure: lg.exposure,
    }
}

/// All differentiable scalar parameters of the scene.
pub fn param_count(scene: &Scene) -> usize {
    scene.map.len() * 12 + 6 + 2
}

pub fn param_name(scene: &Scene, p: usize) -> String {
    let per = 12;
    if p < scene.map.len() * per {
        let s = p / per;
        let k = p % per;
        let name = [
            "pos.x", "pos.y", "pos.z", "rot.x", "rot.y", "rot.z", "lsu", "lsv", "opacity",
            "col.r", "col.g", "col.b",
        ][k];
        format!("splat{s}.{name}")
    } else if p < scene.map.len() * per + 6 {
        let k = p - scene.map.len() * per;
        ["pose.rx", "pose.ry", "pose.rz", "pose.tx", "pose.ty", "pose.tz"][k].to_string()
    } else {
        ["exposure.a", "exposure.b"][p - scene.map.len() * per - 6].to_string()
    }
}

/// Apply a +h bump to parameter p, in the same parametrization the analytic
/// gradients use (left-multiplicative rotation tangents).
pub fn perturb(scene: &Scene, p: usize, h: f64) -> Scene {
    let mut out = Scene {
        map: scene.map.clone(),
        pose: scene.pose,
        exposure: scene.exposure,
        frame: scene.frame.clone(),
        intr: scene.intr,
    };
    let per = 12;
    if p < scene.map.len() * per {
        let s = p / per;
        let k = p % per;
        let g = &mut out.map.gaussians[s];
        match k {
            0 => g.position.x += h,
            1 => g.position.y += h,
            2 => g.position.z += h,
            3..=5 => {
                let mut axis = Vector3::zeros();
                axis[k - 3] = h;
                g.rotation = UnitQuaternion::from_scaled_axis(axis) * g.rotation;
            }
            6 => g.log_scale.x += h,
            7 => g.log_scale.y += h,
            8 => g.opacity_logit += h,
            9 => g.color.x += h,
            10 => g.color.y += h,
            11 => g.color.z += h,
            _ => unreachable!(),
        }
    } else if p < scene.map.len() * per + 6 {
        let k = p - scene.map.len() * per;
        if k < 3 {
            let mut axis = Vector3::zeros();
            axis[k] = h;
            out.pose = Pose::new(
                UnitQuaternion::from_scaled_axis(axis) * scene.pose.rotation,
                scene.pose.translation,
            );
        } else {
            let mut t = scene.pose.translation;
            t[k - 3] += h;
            out.pose = Pose::new(scene.pose.rotation, t);
        }
    } else if p == scene.map.len() * per + 6 {
        out.exposure.a += h;
    } else {
        out.exposure.b += h;
    }
    out
}

pub fn analytic_param(scene: &Scene, an: &Analytic, p: usize) -> f64 {
    let per = 12;
    if p < scene.map.len() * per {
        let s = p / per;
        match p % per {
            0 => an.map.position[s].x,
            1 => an.map.position[s].y,
            2 => an.map.position[s].z,
            3 => an.map.rot_tangent[s].x,
            4 => an.map.rot_tangent[s].y,
            5 => an.map.rot_tangent[s].z,
            6 => an.map.log_scale[s].x,
            7 => an.map.log_scale[s].y,
            8 => an.map.opacity_logit[s],
            9 => an.map.color[s].x,
            10 => an.map.color[s].y,
            11 => an.map.color[s].z,
            _ => unreachable!(),
        }
    } else if p < scene.map.len() * per + 6 {
        match p - scene.map.len() * per {
            0 => an.pose.rot_tangent.x,
            1 => an.pose.rot_tangent.y,
            2 => an.pose.rot_tangent.z,
            3 => an.pose.translation.x,
            4 => an.pose.translation.y,
            5 => an.pose.translation.z,
            _ => unreachable!(),
        }
    } else if p == scene.map.len() * per + 6 {
        an.exposure[0]
    } else {
        an.exposure[1]
    }
}

/// Core check: every parameter of every kind on one scene. Returns the worst
/// relative error observed.
pub fn check_scene(kind: LossKind, scene: &Scene) -> f64 {
    let an = analytic(kind, scene);
    let mut worst: f64 = 0.0;
    for p in 0..param_count(scene) {
        let plus = loss_value(kind, &perturb(scene, p, FD_STEP));
        let minus = loss_value(kind, &perturb(scene, p, -FD_STEP));
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic_param(scene, &an, p);
        let denom = fd.abs().max(a.abs());
        let err = (fd - a).abs();
        let rel = if denom > 0.0 { err / denom } else { 0.0 };
        assert!(
            err <= REL_TOL * denom + ABS_TOL,
            "{kind:?} {}: fd {fd:.9e} vs analytic {a:.9e} (rel {rel:.3e})",
            param_name(scene, p)
        );
        if denom > 1e-6 {
            worst = worst.max(rel);
        }
    }
    worst
}


pub struct RefOutput {
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub weight_sum: Vec<f64>,
    pub silhouette: Vec<f64>,
    pub normal: Vec<f64>,
    pub distortion: Vec<f64>,
    pub items_per_pixel: Vec<usize>,
}

struct RefItem {
    weight: f64,
    z: f64,
}

/// Reference forward pass over every splat at every pixel.
pub fn reference_render(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> RefOutput {
    // Full homogeneous world-to-screen: (x z, y z, z, 1) = K T p.
    let a = pose.rotation_matrix().transpose();
    let b_cam = -(a * pose.translation);
    let mut k4 = Matrix4::identity();
    k4[(0, 0)] = intr.fx;
    k4[(0, 2)] = intr.cx;
    k4[(1, 1)] = intr.fy;
    k4[(1, 2)] = intr.cy;
    k4[(2, 2)] = 1.0;
    let mut t4 = Matrix4::identity();
    for r in 0..3 {
        for c in 0..3 {
            t4[(r, c)] = a[(r, c)];
        }
        t4[(r, 3)] = b_cam[r];
    }
    let w4 = k4 * t4;

    struct RefSplat {
        m: Matrix4<f64>,
        center_px: (f64, f64),
        view_depth: f64,
        cam_normal: Vector3<f64>,
        alpha: f64,
        color: [f64; 3],
    }
    let mut splats: Vec<(usize, RefSplat)> = Vec::new();
    for (i, g) in map.gaussians.iter().enumerate() {
        let m = w4 * compute_homography(g);
        let view_depth = m[(2, 3)];
        if view_depth < opts.z_near {
            continue;
        }
        let tw = g.normal();
        let p_cam = a * g.position + b_cam;
        let n_raw = a * tw;
        let flip = if n_raw.dot(&p_cam) < 0.0 { -1.0 } else { 1.0 };
        splats.push((
            i,
            RefSplat {
                m,
                center_px: (m[(0, 3)] / m[(2, 3)], m[(1, 3)] / m[(2, 3)]),
                view_depth,
                cam_normal: flip * n_raw,
                alpha: g.opacity(),
                color: [
                    g.color.x.clamp(0.0, 1.0),
                    g.color.y.clamp(0.0, 1.0),
                    g.color.z.clamp(0.0, 1.0),
                ],
            },
        ));
    }
    // One global front-to-back order with index tiebreak.
    splats.sort_by(|(ia, sa), (ib, sb)| {
        sa.view_depth
            .partial_cmp(&sb.view_depth)
            .unwrap()
            .then(ia.cmp(ib))
    });

    let (w, h) = (intr.width, intr.height);
    let n = w * h;
    let mut out = RefOutput {
        color: vec![0.0; n * 3],
        depth: vec![0.0; n],
        weight_sum: vec![0.0; n],
        silhouette: vec![0.0; n],
        normal: vec![0.0; n * 3],
        distortion: vec![0.0; n],
        items_per_pixel: vec![0; n],
    };
    for py in 0..h {
        for px in 0..w {
            let idx = py * w + px;
            let (x, y) = (px as f64, py as f64);
            let mut t = 1.0f64;
            let mut items: Vec<RefItem> = Vec::new();
            let mut col = [0.0f64; 3];
            let mut dnum = 0.0;
            let mut wsum = 0.0;
            let mut nrm = [0.0f64; 3];
            for (_, s) in &splats {
                let Some((u, v, z)) = ray_splat_intersect(&s.m, (x, y)) else {
                    continue;
                };
                if z < opts.z_near {
                    continue;
                }
                let (ghat, _) = splat_weight(u, v, x - s.center_px.0, y - s.center_px.1);
                if ghat < G_MIN {
                    continue;
                }
                let a_i = s.alpha * ghat;
                let weight = t * a_i;
                col[0] += weight * s.color[0];
                col[1] += weight * s.color[1];
                col[2] += weight * s.color[2];
                dnum += weight * z;
                wsum += weight;
                nrm[0] += weight * s.cam_normal.x;
                nrm[1] += weight * s.cam_normal.y;
                nrm[2] += weight * s.cam_normal.z;
                items.push(RefItem { weight, z });
                t *= 1.0 - a_i;
                if t < T_STOP {
                    break;
                }
            }
            out.color[idx * 3] = col[0];
            out.color[idx * 3 + 1] = col[1];
            out.color[idx * 3 + 2] = col[2];
            out.depth[idx] = dnum / (wsum + DEPTH_EPS);
            out.weight_sum[idx] = wsum;
            out.silhouette[idx] = if opts.silhouette_literal {
                wsum / (wsum + DEPTH_EPS)
            } else {
                wsum.clamp(0.0, 1.0)
            };
            out.normal[idx * 3] = nrm[0];
            out.normal[idx * 3 + 1] = nrm[1];
            out.normal[idx * 3 + 2] = nrm[2];
            // Same sorted running-sum evaluation of the pairwise distortion.
            let mut order: Vec<usize> = (0..items.len()).collect();
            order.sort_by(|&p, &q| items[p].z.partial_cmp(&items[q].z).unwrap().then(p.cmp(&q)));
            let mut acc = 0.0;
            let mut ws = 0.0;
            let mut wzs = 0.0;
            for &p in &order {
                acc += items[p].weight * (items[p].z * ws - wzs);
                ws += items[p].weight;
                wzs += items[p].weight * items[p].z;
            }
            out.distortion[idx] = acc;
            out.items_per_pixel[idx] = items.len();
        }
    }
    out
}

pub fn random_map(seed: u64, n_splats: usize, wild: bool) -> GaussianMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = GaussianMap::default();
    for _ in 0..n_splats {
        let range = if wild { 0.8 } else { 0.3 };
        map.push(
            Gaussian2D {
                position: Vector3::new(
                    rng.gen_range(-range..range),
                    rng.gen_range(-range..range),
                    // Includes splats behind the near plane now and then.
                    rng.gen_range(-0.2..2.5),
                ),
                rotation: UnitQuaternion::from_scaled_axis(Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                )),
                log_scale: Vector2::new(
                    rng.gen_range(0.005f64..0.6).ln(),
                    rng.gen_range(0.005f64..0.6).ln(),
                ),
                opacity_logit: logit(rng.gen_range(0.05..0.95)),
                color: Vector3::new(
                    rng.gen_range(-0.2..1.2),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                ),
            },
            0,
        );
    }
    map
}

pub fn random_pose(seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    Pose::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        )),
        Vector3::new(
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ),
    )
}


// --- synthetic SLAM fixtures ---

pub fn small_intr() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 65.0,
        fy: 65.0,
        cx: 39.5,
        cy: 29.5,
        width: 80,
        height: 60,
        depth_scale: 10000.0,
    }
}

pub fn wavy_scene() -> SceneKind {
    SceneKind::WavyPlane {
        z0: 0.8,
        amplitude: 0.04,
        freq: 9.0,
    }
}

pub fn fit_map(frame: &Frame, intr: &CameraIntrinsics, iters: usize) -> GaussianMap {
    let mut map = init_map_from_frame(frame, &Pose::identity(), intr, 2).unwrap();
    let batch = [MapUpdateEntry {
        frame,
        pose: Pose::identity(),
        exposure: ExposureParams::default(),
    }];
    let cfg = MappingConfig {
        iterations: iters,
        ..MappingConfig::default()
    };
    map_update(&mut map, &batch, intr, &cfg, frame.mean_valid_depth(), &OPTS).unwrap();
    map
}

/// Self-rendered observation from a pose: the tracking loss has its global
/// minimum exactly there.
pub fn self_observation(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    pose: &Pose,
    index: usize,
) -> Frame {
    let out = render(map, intr, pose, &OPTS).unwrap();
    let color: Vec<f64> = out.color.iter().map(|c| c.clamp(0.0, 1.0)).collect();
    let depth: Vec<f64> = (0..intr.npixels())
        .map(|i| {
            if out.silhouette[i] > 0.5 {
                out.depth[i]
            } else {
                0.0
            }
        })
        .collect();
    Frame::new(index, intr, color, depth)
}

pub fn tracking_fixture(intr: &CameraIntrinsics, fit_iters: usize) -> (GaussianMap, Frame) {
    let frame = wavy_scene().frame(0, intr, &Pose::identity());
    let map = fit_map(&frame, intr, fit_iters);
    let obs = self_observation(&map, intr, &Pose::identity(), 1);
    (map, obs)
}

pub fn perturbed_pose(rng: &mut ChaCha8Rng, rot_deg: f64, trans: f64) -> Pose {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    )
    .normalize();
    let tdir = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    )
    .normalize();
    Pose::new(
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), rot_deg.to_radians()),
        tdir * trans,
    )
}
