//! Per-splat screen-space precomputation shared by the forward and backward
//! passes.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::scene::{CameraIntrinsics, GaussianMap, Pose};

use super::{RenderOptions, FILTER_CUT_RADIUS_PX, UV_CUT_RADIUS};

/// World-to-screen transform split into its linear part and translation:
/// a world point p maps to K (A p + b) with A = R^T, b = -R^T t, so the
/// homogeneous screen point is (x z, y z, z).
pub fn world_to_screen(pose: &Pose, intr: &CameraIntrinsics) -> (Matrix3<f64>, Vector3<f64>) {
    let a = pose.rotation_matrix().transpose();
    let b = -(a * pose.translation);
    let k = intrinsic_matrix(intr);
    (k * a, k * b)
}

pub fn intrinsic_matrix(intr: &CameraIntrinsics) -> Matrix3<f64> {
    Matrix3::new(
        intr.fx, 0.0, intr.cx, //
        0.0, intr.fy, intr.cy, //
        0.0, 0.0, 1.0,
    )
}

/// Screen-space state of one splat.
#[derive(Debug, Clone)]
pub struct SplatScreen {
    /// Rows of M = W*H restricted to its nonzero columns (1, 2, 4).
    pub m: [[f64; 3]; 3],
    /// Projected center (column 4 of M dehomogenized).
    pub center_px: (f64, f64),
    /// Camera depth of the splat center; the blend sort key.
    pub view_depth: f64,
    /// Unit splat normal in the camera frame, oriented away from the camera.
    pub cam_normal: Vector3<f64>,
    /// Sign applied to R^T t_w to get `cam_normal`.
    pub flip: f64,
    /// Conservative screen AABB of the 1% contribution region
    /// (xmin, xmax, ymin, ymax); `None` means it may cover the whole image.
    pub aabb: Option<[f64; 4]>,
    /// Center behind the near plane; excluded from blending entirely.
    pub culled: bool,
}

/// Build screen-space state for every splat. Pure and deterministic.
pub fn build_splat_screens(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> Vec<SplatScreen> {
    let (w3, wt) = world_to_screen(pose, intr);
    let a = pose.rotation_matrix().transpose();
    let b_cam = -(a * pose.translation);
    map.gaussians
        .par_iter()
        .map(|g| {
            let (su, sv) = g.scale_uv();
            let r = g.rotation_matrix();
            let tu: Vector3<f64> = r.column(0).into();
            let tv: Vector3<f64> = r.column(1).into();
            let tw: Vector3<f64> = r.column(2).into();
            let h1 = su * tu;
            let h2 = sv * tv;
            let mc1 = w3 * h1;
            let mc2 = w3 * h2;
            let mc4 = w3 * g.position + wt;
            let m = [
                [mc1.x, mc2.x, mc4.x],
                [mc1.y, mc2.y, mc4.y],
                [mc1.z, mc2.z, mc4.z],
            ];
            let view_depth = mc4.z;
            let culled = view_depth < opts.z_near;
            let center_px = if culled {
                (0.0, 0.0)
            } else {
                (mc4.x / mc4.z, mc4.y / mc4.z)
            };
            let p_cam = a * g.position + b_cam;
            let n_raw = a * tw;
            let flip = if n_raw.dot(&p_cam) < 0.0 { -1.0 } else { 1.0 };
            let cam_normal = flip * n_raw;
            let aabb = if culled {
                None
            } else {
                let rho = UV_CUT_RADIUS * su.max(sv);
                if p_cam.z - rho <= opts.z_near {
                    None
                } else {
                    // The UV 1% isocontour lies inside a sphere of radius rho
                    // around the center; bound its projection, then pad by
                    // the low-pass kernel radius.
                    let denom = (p_cam.z - rho) * p_cam.z;
                    let rx = intr.fx * rho * (p_cam.x.abs() + p_cam.z) / denom + FILTER_CUT_RADIUS_PX;
                    let ry = intr.fy * rho * (p_cam.y.abs() + p_cam.z) / denom + FILTER_CUT_RADIUS_PX;
                    Some([
                        center_px.0 - rx,
                        center_px.0 + rx,
                        center_px.1 - ry,
                        center_px.1 + ry,
                    ])
                }
            };
            SplatScreen {
                m,
                center_px,
                view_depth,
                cam_normal,
                flip,
                aabb,
                culled,
            }
        })
        .collect()
}
