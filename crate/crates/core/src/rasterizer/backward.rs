//! Reverse-mode gradients of the render buffers with respect to splat
//! parameters and the camera pose.
//!
//! The chain runs adjoint buffers -> blend weights -> filtered Gaussian
//! values and intersection depths -> rows of M = W*H -> the splat homography
//! and the world-to-screen transform. Rotations (splat and pose) are
//! differentiated in a left-multiplicative 3-vector tangent: R(theta) =
//! exp([theta]_x) R0, so the gradient of any rotation column r_c contributes
//! r_c x g_{r_c}.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::scene::{CameraIntrinsics, GaussianMap, Pose};

use super::screen::{build_splat_screens, intrinsic_matrix, SplatScreen};
use super::{RasterError, RenderAdjoints, RenderOptions, RenderOutput, DEPTH_EPS, TILE_SIZE};

#[derive(Debug, Clone, Copy)]
pub struct GradientTargets {
    pub map: bool,
    pub pose: bool,
}

impl GradientTargets {
    pub fn map_only() -> Self {
        GradientTargets {
            map: true,
            pose: false,
        }
    }
    pub fn pose_only() -> Self {
        GradientTargets {
            map: false,
            pose: true,
        }
    }
    pub fn all() -> Self {
        GradientTargets {
            map: true,
            pose: true,
        }
    }
}

/// Per-splat gradients, indexed like the map.
#[derive(Debug, Clone)]
pub struct MapGradients {
    pub position: Vec<Vector3<f64>>,
    pub rot_tangent: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector2<f64>>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
}

impl MapGradients {
    pub fn zeros(n: usize) -> Self {
        MapGradients {
            position: vec![Vector3::zeros(); n],
            rot_tangent: vec![Vector3::zeros(); n],
            log_scale: vec![Vector2::zeros(); n],
            opacity_logit: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
        }
    }

    fn add(&mut self, other: &MapGradients) {
        for i in 0..self.position.len() {
            self.position[i] += other.position[i];
            self.rot_tangent[i] += other.rot_tangent[i];
            self.log_scale[i] += other.log_scale[i];
            self.opacity_logit[i] += other.opacity_logit[i];
            self.color[i] += other.color[i];
        }
    }
}

/// Camera pose gradient: rotation in the left tangent at the current
/// quaternion, translation raw.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoseGradient {
    pub rot_tangent: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseGradient {
    pub fn add(&mut self, other: &PoseGradient) {
        self.rot_tangent += other.rot_tangent;
        self.translation += other.translation;
    }
}

#[derive(Debug, Clone)]
pub struct RenderGradients {
    pub map: MapGradients,
    pub pose: PoseGradient,
}

struct BandGrads {
    map: Option<MapGradients>,
    g_w3: Matrix3<f64>,
    g_wt: Vector3<f64>,
    g_a_extra: Matrix3<f64>,
}

/// Exact reverse-mode gradients for the adjoints of every buffer produced by
/// `render`. The blend state of the matching forward call is required.
pub fn render_backward(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    pose: &Pose,
    out: &RenderOutput,
    adj: &RenderAdjoints,
    targets: GradientTargets,
    opts: &RenderOptions,
) -> Result<RenderGradients, RasterError> {
    if out.width != intr.width || out.height != intr.height {
        return Err(RasterError::MismatchedBlendState(format!(
            "render is {}x{}, intrinsics {}x{}",
            out.width, out.height, intr.width, intr.height
        )));
    }
    if out.blend.map_len != map.len() {
        return Err(RasterError::MismatchedBlendState(format!(
            "blend state from {} splats, map has {}",
            out.blend.map_len,
            map.len()
        )));
    }
    let n = out.width * out.height;
    if out.blend.offsets.len() != n + 1 {
        return Err(RasterError::MismatchedBlendState(
            "offset table length".into(),
        ));
    }

    let screens = build_splat_screens(map, intr, pose, opts);
    let opacities: Vec<f64> = map.gaussians.iter().map(|g| g.opacity()).collect();
    let colors: Vec<[f64; 3]> = map
        .gaussians
        .iter()
        .map(|g| {
            [
                g.color.x.clamp(0.0, 1.0),
                g.color.y.clamp(0.0, 1.0),
                g.color.z.clamp(0.0, 1.0),
            ]
        })
        .collect();

    let (w3, _) = super::screen::world_to_screen(pose, intr);
    let n_bands = out.height.div_ceil(TILE_SIZE);
    let bands: Vec<BandGrads> = (0..n_bands)
        .into_par_iter()
        .map(|band| {
            backward_band(
                band, map, &screens, &opacities, &colors, out, adj, pose, &w3, targets,
            )
        })
        .collect();

    // Deterministic merge in band order.
    let mut map_grads = MapGradients::zeros(if targets.map { map.len() } else { 0 });
    let mut g_w3 = Matrix3::zeros();
    let mut g_wt = Vector3::zeros();
    let mut g_a_extra = Matrix3::zeros();
    for b in &bands {
        if let Some(m) = &b.map {
            map_grads.add(m);
        }
        g_w3 += b.g_w3;
        g_wt += b.g_wt;
        g_a_extra += b.g_a_extra;
    }

    let mut pose_grad = PoseGradient::default();
    if targets.pose {
        let k = intrinsic_matrix(intr);
        let r0 = pose.rotation_matrix();
        let mut g_a = k.transpose() * g_w3 + g_a_extra;
        let g_b = k.transpose() * g_wt;
        // b = -A t couples the translation into the rotation block.
        g_a -= g_b * pose.translation.transpose();
        pose_grad.translation = -(r0 * g_b);
        let g_r = g_a.transpose();
        let mut g_phi = Vector3::zeros();
        for c in 0..3 {
            let rc: Vector3<f64> = r0.column(c).into();
            let gc: Vector3<f64> = g_r.column(c).into();
            g_phi += rc.cross(&gc);
        }
        pose_grad.rot_tangent = g_phi;
    }

    Ok(RenderGradients {
        map: map_grads,
        pose: pose_grad,
    })
}

#[allow(clippy::too_many_arguments)]
fn backward_band(
    band: usize,
    map: &GaussianMap,
    screens: &[SplatScreen],
    opacities: &[f64],
    colors: &[[f64; 3]],
    out: &RenderOutput,
    adj: &RenderAdjoints,
    pose: &Pose,
    w3: &Matrix3<f64>,
    targets: GradientTargets,
) -> BandGrads {
    let width = out.width;
    let y0 = band * TILE_SIZE;
    let y1 = ((band + 1) * TILE_SIZE).min(out.height);
    let nsplat = map.len();

    let mut map_grads = targets.map.then(|| MapGradients::zeros(nsplat));
    // Accumulated gradient on the rows of M per splat, chained once per band.
    let mut g_m: Vec<[[f64; 3]; 3]> = vec![[[0.0; 3]; 3]; nsplat];
    // Accumulated gradient on the pre-flip camera normal per splat.
    let mut g_nraw: Vec<Vector3<f64>> = vec![Vector3::zeros(); nsplat];
    let mut touched = vec![false; nsplat];
    let mut touched_list: Vec<u32> = Vec::new();

    // Scratch for distortion prefix sums.
    let mut order: Vec<u32> = Vec::new();
    let mut dist_dw: Vec<f64> = Vec::new();
    let mut dist_dz: Vec<f64> = Vec::new();

    for y in y0..y1 {
        for x in 0..width {
            let idx = y * width + x;
            let items = out.blend.pixel(idx);
            if items.is_empty() {
                continue;
            }
            let gc = Vector3::new(
                adj.color[idx * 3],
                adj.color[idx * 3 + 1],
                adj.color[idx * 3 + 2],
            );
            let gd = adj.depth[idx];
            let gw = adj.weight_sum[idx];
            let gn = Vector3::new(
                adj.normal[idx * 3],
                adj.normal[idx * 3 + 1],
                adj.normal[idx * 3 + 2],
            );
            let gdist = adj.distortion[idx];
            if gc == Vector3::zeros()
                && gd == 0.0
                && gw == 0.0
                && gn == Vector3::zeros()
                && gdist == 0.0
            {
                continue;
            }

            let wsum = out.weight_sum[idx];
            let depth = out.depth[idx];
            let denom_w = wsum + DEPTH_EPS;

            // Pairwise distortion derivatives from sorted prefix/suffix sums.
            let k = items.len();
            if gdist != 0.0 && k >= 2 {
                order.clear();
                order.extend(0..k as u32);
                order.sort_by(|&a, &b| {
                    items[a as usize]
                        .z
                        .partial_cmp(&items[b as usize].z)
                        .unwrap()
                        .then(a.cmp(&b))
                });
                dist_dw.clear();
                dist_dw.resize(k, 0.0);
                dist_dz.clear();
                dist_dz.resize(k, 0.0);
                let mut tot_w = 0.0;
                let mut tot_wz = 0.0;
                for it in items {
                    tot_w += it.weight;
                    tot_wz += it.weight * it.z;
                }
                let mut pw = 0.0;
                let mut pwz = 0.0;
                for &oi in order.iter() {
                    let it = &items[oi as usize];
                    let sw = tot_w - pw - it.weight;
                    let swz = tot_wz - pwz - it.weight * it.z;
                    dist_dw[oi as usize] = (it.z * pw - pwz) + (swz - it.z * sw);
                    dist_dz[oi as usize] = it.weight * (pw - sw);
                    pw += it.weight;
                    pwz += it.weight * it.z;
                }
            } else {
                dist_dw.clear();
                dist_dw.resize(k, 0.0);
                dist_dz.clear();
                dist_dz.resize(k, 0.0);
            }

            let xf = x as f64;
            let yf = y as f64;
            let mut g_t_next = 0.0f64;
            for i in (0..k).rev() {
                let it = &items[i];
                let sid = it.splat as usize;
                let s = &screens[sid];
                let alpha = opacities[sid];
                let a = alpha * it.ghat;
                let t_i = it.t_before;
                let w = it.weight;
                let c = &colors[sid];

                let g_w_i = gc.x * c[0]
                    + gc.y * c[1]
                    + gc.z * c[2]
                    + gd * (it.z - depth) / denom_w
                    + gw
                    + gn.dot(&s.cam_normal)
                    + gdist * dist_dw[i];
                let g_z = gd * w / denom_w + gdist * dist_dz[i];

                let g_a = (g_w_i - g_t_next) * t_i;
                let g_t = g_w_i * a + g_t_next * (1.0 - a);

                if !touched[sid] {
                    touched[sid] = true;
                    touched_list.push(it.splat);
                }

                if let Some(mg) = map_grads.as_mut() {
                    // Color through the render-time clamp.
                    let raw = &map.gaussians[sid].color;
                    if raw.x > 0.0 && raw.x < 1.0 {
                        mg.color[sid].x += gc.x * w;
                    }
                    if raw.y > 0.0 && raw.y < 1.0 {
                        mg.color[sid].y += gc.y * w;
                    }
                    if raw.z > 0.0 && raw.z < 1.0 {
                        mg.color[sid].z += gc.z * w;
                    }
                    mg.opacity_logit[sid] += g_a * it.ghat * alpha * (1.0 - alpha);
                }
                // Normal buffer path: blended n = flip * (A t_w).
                g_nraw[sid] += (gn * w) * s.flip;

                // Filtered Gaussian value.
                let g_ghat = g_a * alpha;
                let mut g_u = 0.0f64;
                let mut g_v = 0.0f64;
                let gm = &mut g_m[sid];
                if it.screen_branch {
                    let dx = xf - s.center_px.0;
                    let dy = yf - s.center_px.1;
                    let g_ctr_x = g_ghat * 2.0 * it.ghat * dx;
                    let g_ctr_y = g_ghat * 2.0 * it.ghat * dy;
                    let a4 = s.m[0][2];
                    let b4 = s.m[1][2];
                    let c4 = s.m[2][2];
                    gm[0][2] += g_ctr_x / c4;
                    gm[1][2] += g_ctr_y / c4;
                    gm[2][2] -= (g_ctr_x * a4 + g_ctr_y * b4) / (c4 * c4);
                } else {
                    g_u += g_ghat * (-it.u * it.ghat);
                    g_v += g_ghat * (-it.v * it.ghat);
                }

                // Depth of the intersection: z = c1 u + c2 v + c4.
                let a1 = s.m[0][0];
                let a2 = s.m[0][1];
                let a4 = s.m[0][2];
                let b1 = s.m[1][0];
                let b2 = s.m[1][1];
                let b4 = s.m[1][2];
                let c1 = s.m[2][0];
                let c2 = s.m[2][1];
                let c4 = s.m[2][2];
                g_u += g_z * c1;
                g_v += g_z * c2;
                gm[2][0] += g_z * it.u;
                gm[2][1] += g_z * it.v;
                gm[2][2] += g_z;

                // Closed-form intersection through the transformed pixel
                // planes h_u = M^T (-1, 0, x, 0), h_v = M^T (0, -1, y, 0).
                let hu1 = xf * c1 - a1;
                let hu2 = xf * c2 - a2;
                let hu4 = xf * c4 - a4;
                let hv1 = yf * c1 - b1;
                let hv2 = yf * c2 - b2;
                let hv4 = yf * c4 - b4;
                let den = hu1 * hv2 - hu2 * hv1;
                let inv_den = 1.0 / den;
                let g_nu = g_u * inv_den;
                let g_nv = g_v * inv_den;
                let g_den = -(it.u * g_u + it.v * g_v) * inv_den;
                // u = (hu2 hv4 - hu4 hv2)/den, v = (hu4 hv1 - hu1 hv4)/den.
                let g_hu1 = -g_nv * hv4 + g_den * hv2;
                let g_hu2 = g_nu * hv4 - g_den * hv1;
                let g_hu4 = -g_nu * hv2 + g_nv * hv1;
                let g_hv1 = g_nv * hu4 - g_den * hu2;
                let g_hv2 = -g_nu * hu4 + g_den * hu1;
                let g_hv4 = g_nu * hu2 - g_nv * hu1;
                gm[0][0] -= g_hu1;
                gm[0][1] -= g_hu2;
                gm[0][2] -= g_hu4;
                gm[1][0] -= g_hv1;
                gm[1][1] -= g_hv2;
                gm[1][2] -= g_hv4;
                gm[2][0] += xf * g_hu1 + yf * g_hv1;
                gm[2][1] += xf * g_hu2 + yf * g_hv2;
                gm[2][2] += xf * g_hu4 + yf * g_hv4;

                g_t_next = g_t;
            }
        }
    }

    // Chain per-splat M-row gradients into parameters and pose accumulators.
    let r0 = pose.rotation_matrix();

    let mut g_w3_acc = Matrix3::zeros();
    let mut g_wt_acc = Vector3::zeros();
    let mut g_a_extra = Matrix3::zeros();
    touched_list.sort_unstable();
    for &sid_u in &touched_list {
        let sid = sid_u as usize;
        let g = &g_m[sid];
        let gc1 = Vector3::new(g[0][0], g[1][0], g[2][0]);
        let gc2 = Vector3::new(g[0][1], g[1][1], g[2][1]);
        let gc4 = Vector3::new(g[0][2], g[1][2], g[2][2]);
        let gau = &map.gaussians[sid];
        let (su, sv) = gau.scale_uv();
        let rot = gau.rotation_matrix();
        let tu: Vector3<f64> = rot.column(0).into();
        let tv: Vector3<f64> = rot.column(1).into();
        let tw: Vector3<f64> = rot.column(2).into();
        if targets.pose {
            let h1 = su * tu;
            let h2 = sv * tv;
            g_w3_acc += gc1 * h1.transpose() + gc2 * h2.transpose() + gc4 * gau.position.transpose();
            g_wt_acc += gc4;
            g_a_extra += g_nraw[sid] * tw.transpose();
        }
        if let Some(mg) = map_grads.as_mut() {
            let g_h1 = w3.transpose() * gc1;
            let g_h2 = w3.transpose() * gc2;
            let g_x = w3.transpose() * gc4;
            mg.position[sid] += g_x;
            let g_su = tu.dot(&g_h1);
            let g_sv = tv.dot(&g_h2);
            mg.log_scale[sid] += Vector2::new(g_su * su, g_sv * sv);
            let g_tu = su * g_h1;
            let g_tv = sv * g_h2;
            let g_tw = r0 * g_nraw[sid];
            mg.rot_tangent[sid] += tu.cross(&g_tu) + tv.cross(&g_tv) + tw.cross(&g_tw);
        }
    }

    BandGrads {
        map: map_grads,
        g_w3: g_w3_acc,
        g_wt: g_wt_acc,
        g_a_extra,
    }
}
