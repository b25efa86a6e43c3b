//! Differentiable forward renderer for 2D Gaussian surfels.
//!
//! Splats are transformed to screen space once per render, binned into 16x16
//! pixel tiles, and blended front to back per pixel. Both the tiled path and
//! the brute-force reference used in tests share one blending contract:
//!
//! * splats whose center depth is in front of `z_near` participate, ordered
//!   by (center view depth, splat index);
//! * an intersection is skipped when the ray-splat system is degenerate
//!   (|denominator| < 1e-12), behind the near plane, or its filtered Gaussian
//!   value falls below the 1% cutoff;
//! * blending stops once transmittance drops below 1e-4.
//!
//! Tile culling is conservative with respect to the 1% cutoff, so tiling and
//! culling never change the result, bit for bit.

mod backward;
mod forward;
mod screen;

pub use backward::{render_backward, GradientTargets, MapGradients, PoseGradient, RenderGradients};
pub use forward::render;
pub use screen::{build_splat_screens, world_to_screen, SplatScreen};

use nalgebra::{Matrix4, Vector3};
use thiserror::Error;

use crate::scene::Gaussian2D;

/// Blending terminates when transmittance falls below this.
pub const T_STOP: f64 = 1e-4;
/// Contributions with filtered Gaussian value below this are skipped; tile
/// culling bounds the matching 1% isocontour.
pub const G_MIN: f64 = 0.01;
/// Ray-splat denominators smaller than this are treated as grazing.
pub const DEN_EPS: f64 = 1e-12;
/// Small constant preventing a zero divisor in the expected depth.
pub const DEPTH_EPS: f64 = 1e-8;
/// Screen-space low-pass filter: sigma = sqrt(2)/2 px, so 2*sigma^2 = 1.
pub const FILTER_TWO_SIGMA_SQ: f64 = 1.0;
/// UV radius of the 1% isocontour, sqrt(2 ln 100).
pub const UV_CUT_RADIUS: f64 = 3.034854258770293;
/// Screen radius of the low-pass kernel 1% isocontour plus margin, px.
pub const FILTER_CUT_RADIUS_PX: f64 = 2.6;

pub const TILE_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("empty scene")]
    EmptyScene,
    #[error("mismatched blend state: {0}")]
    MismatchedBlendState(String),
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Splat centers and intersections closer than this are culled.
    pub z_near: f64,
    /// Use the literal silhouette formula S = w/(w+eps) instead of the
    /// accumulated-opacity form clamp(w, 0, 1).
    pub silhouette_literal: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            z_near: 0.01,
            silhouette_literal: false,
        }
    }
}

/// One saved ray-splat intersection, enough to replay the pixel's blending
/// for the backward pass and the pairwise distortion terms.
#[derive(Debug, Clone, Copy)]
pub struct Intersection {
    pub splat: u32,
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub ghat: f64,
    /// Transmittance before this splat.
    pub t_before: f64,
    /// Blending weight omega = t_before * opacity * ghat.
    pub weight: f64,
    /// True when the screen-space low-pass kernel won the max.
    pub screen_branch: bool,
}

/// Per-pixel intersection lists in a flat arena.
#[derive(Debug, Clone, Default)]
pub struct BlendState {
    /// Length npixels+1; items of pixel i live in offsets[i]..offsets[i+1].
    pub offsets: Vec<u32>,
    pub items: Vec<Intersection>,
    /// Splat count of the map this state was rendered from.
    pub map_len: usize,
}

impl BlendState {
    pub fn pixel(&self, idx: usize) -> &[Intersection] {
        &self.items[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// H*W*3 blended color (splat colors clamped to [0,1]).
    pub color: Vec<f64>,
    /// H*W expected depth sum(w z)/(sum w + eps).
    pub depth: Vec<f64>,
    /// H*W raw accumulated weight sum(w); always in [0,1].
    pub weight_sum: Vec<f64>,
    /// H*W silhouette map derived from weight_sum per RenderOptions.
    pub silhouette: Vec<f64>,
    /// H*W*3 blended camera-frame normals sum(w n).
    pub normal: Vec<f64>,
    /// H*W pairwise depth distortion sum_{i<j} w_i w_j |z_i - z_j|.
    pub distortion: Vec<f64>,
    pub blend: BlendState,
}

/// Upstream gradients for each render buffer. `weight_sum` seeds the raw
/// accumulated weight (the quantity losses actually consume).
#[derive(Debug, Clone)]
pub struct RenderAdjoints {
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub weight_sum: Vec<f64>,
    pub normal: Vec<f64>,
    pub distortion: Vec<f64>,
}

impl RenderAdjoints {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        RenderAdjoints {
            color: vec![0.0; n * 3],
            depth: vec![0.0; n],
            weight_sum: vec![0.0; n],
            normal: vec![0.0; n * 3],
            distortion: vec![0.0; n],
        }
    }
}

/// UV-to-world homography of a splat: columns s_u t_u, s_v t_v, 0 and the
/// homogeneous center.
pub fn compute_homography(g: &Gaussian2D) -> Matrix4<f64> {
    let (su, sv) = g.scale_uv();
    let r = g.rotation_matrix();
    let tu: Vector3<f64> = r.column(0).into();
    let tv: Vector3<f64> = r.column(1).into();
    let mut h = Matrix4::zeros();
    for i in 0..3 {
        h[(i, 0)] = su * tu[i];
        h[(i, 1)] = sv * tv[i];
        h[(i, 3)] = g.position[i];
    }
    h[(3, 3)] = 1.0;
    h
}

/// Closed-form ray-splat intersection from the composed transform M = W*H.
/// Returns UV coordinates and the intersection depth, or `None` for grazing
/// splats.
pub fn ray_splat_intersect(wh: &Matrix4<f64>, pixel: (f64, f64)) -> Option<(f64, f64, f64)> {
    let rows = [
        [wh[(0, 0)], wh[(0, 1)], wh[(0, 3)]],
        [wh[(1, 0)], wh[(1, 1)], wh[(1, 3)]],
        [wh[(2, 0)], wh[(2, 1)], wh[(2, 3)]],
    ];
    intersect_rows(&rows, pixel.0, pixel.1)
}

/// Shared intersection kernel on the three meaningful rows of M = W*H
/// (columns 1, 2, 4; column 3 is identically zero). The homogeneous screen
/// point is (x z, y z, z, 1), so the pixel planes are h_x = (-1, 0, x, 0)
/// and h_y = (0, -1, y, 0); h_u = M^T h_x and h_v = M^T h_y intersect in UV
/// space by the closed form, and z reads off row 3.
#[inline]
pub(crate) fn intersect_rows(m: &[[f64; 3]; 3], x: f64, y: f64) -> Option<(f64, f64, f64)> {
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
    if den.abs() < DEN_EPS {
        return None;
    }
    let u = (hu2 * hv4 - hu4 * hv2) / den;
    let v = (hu4 * hv1 - hu1 * hv4) / den;
    let z = c1 * u + c2 * v + c4;
    Some((u, v, z))
}

/// Filtered 2D Gaussian value: the object-space kernel low-pass filtered by
/// a fixed screen-space kernel; (dx, dy) is pixel minus projected center.
#[inline]
pub fn splat_weight(u: f64, v: f64, dx: f64, dy: f64) -> (f64, bool) {
    let g_uv = (-(u * u + v * v) / 2.0).exp();
    let g_scr = (-(dx * dx + dy * dy) / FILTER_TWO_SIGMA_SQ).exp();
    if g_scr > g_uv {
        (g_scr, true)
    } else {
        (g_uv, false)
    }
}
