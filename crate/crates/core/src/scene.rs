//! Domain types shared by the whole system: poses, intrinsics, RGB-D frames
//! and the Gaussian surfel map, plus the geometry that ties them together
//! (back-projection, depth-derived normals, map seeding).

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("no valid depth to initialize")]
    NoValidDepth,
    #[error("invalid intrinsics: {0}")]
    BadIntrinsics(String),
}

/// Rigid camera-to-world transform. `transform_point` maps camera-frame
/// coordinates into the world; the world-to-camera direction is `inverse()`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// (a ∘ b) applied to a point equals a(b(point)).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Left-multiplicative update in the rotation tangent plus an additive
    /// translation step. This is the parametrization every gradient in the
    /// system is expressed in. A zero tangent leaves the rotation bits
    /// untouched (renormalization would perturb them).
    pub fn apply_tangent(&self, rot_tangent: &Vector3<f64>, trans_delta: &Vector3<f64>) -> Pose {
        let rotation = if *rot_tangent == Vector3::zeros() {
            self.rotation
        } else {
            let dq = UnitQuaternion::from_scaled_axis(*rot_tangent);
            let mut q = dq * self.rotation;
            q.renormalize();
            q
        };
        Pose {
            rotation,
            translation: self.translation + trans_delta,
        }
    }

    /// Geodesic angle of the relative rotation, in [0, pi].
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        (self.rotation.inverse() * other.rotation).angle()
    }

    pub fn as_tum(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.i,
            q.j,
            q.k,
            q.w,
        ]
    }

    pub fn from_tum(v: &[f64; 7]) -> Self {
        let q = nalgebra::Quaternion::new(v[6], v[3], v[4], v[5]);
        // Already-unit quaternions pass through untouched so trajectory
        // files round-trip bit-exactly.
        let rotation = if (q.norm() - 1.0).abs() < 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Pose {
            rotation,
            translation: Vector3::new(v[0], v[1], v[2]),
        }
    }
}

/// Constant-velocity extrapolation: advance `prev` by the relative motion
/// from `prev2` to `prev`. Translation is extrapolated additively, rotation
/// by composing the relative quaternion on the right. With a single prior
/// pose the pose is returned unchanged.
pub fn constant_velocity_init(prev: &Pose, prev2: Option<&Pose>) -> Pose {
    let Some(prev2) = prev2 else {
        return *prev;
    };
    let dq = prev2.rotation.inverse() * prev.rotation;
    let mut q = prev.rotation * dq;
    q.renormalize();
    Pose {
        rotation: q,
        translation: prev.translation + (prev.translation - prev2.translation),
    }
}

/// Pinhole camera model. Pixel coordinates are the integer column/row
/// indices themselves: the ray of pixel (x, y) passes through
/// ((x-cx)/fx, (y-cy)/fy, 1) in camera space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Integer depth units per meter in 16-bit depth images.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(SceneError::BadIntrinsics("focal length must be > 0".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 {
            return Err(SceneError::BadIntrinsics("cx out of image".into()));
        }
        if self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(SceneError::BadIntrinsics("cy out of image".into()));
        }
        Ok(())
    }

    /// Project a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Unnormalized ray direction of a pixel in camera space.
    pub fn pixel_ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Intrinsics of the image downscaled by an integer divisor; projections
    /// scale exactly by 1/divisor.
    pub fn scaled(&self, divisor: usize) -> CameraIntrinsics {
        let d = divisor as f64;
        CameraIntrinsics {
            fx: self.fx / d,
            fy: self.fy / d,
            cx: self.cx / d,
            cy: self.cy / d,
            width: self.width / divisor,
            height: self.height / divisor,
            depth_scale: self.depth_scale,
        }
    }

    pub fn npixels(&self) -> usize {
        self.width * self.height
    }
}

/// One RGB-D observation. Depth 0 marks invalid pixels. The derived point
/// and normal maps are stored in the camera frame so they are independent of
/// the (still unknown) pose; world-frame views are produced on demand.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub width: usize,
    pub height: usize,
    /// H*W*3 interleaved RGB in [0,1].
    pub color: Vec<f64>,
    /// H*W metric depth, 0 = invalid.
    pub depth: Vec<f64>,
    /// H*W camera-frame points (garbage where depth invalid).
    pub points_cam: Vec<Vector3<f64>>,
    /// H*W unit normals in the camera frame, oriented away from the camera.
    pub normals_cam: Vec<Vector3<f64>>,
    pub normal_valid: Vec<bool>,
}

impl Frame {
    pub fn new(
        index: usize,
        intr: &CameraIntrinsics,
        color: Vec<f64>,
        depth: Vec<f64>,
    ) -> Frame {
        let (w, h) = (intr.width, intr.height);
        assert_eq!(color.len(), w * h * 3);
        assert_eq!(depth.len(), w * h);
        let points_cam = backproject(&depth, intr, &Pose::identity());
        let valid: Vec<bool> = depth.iter().map(|&d| d > 0.0).collect();
        let (normals_cam, normal_valid) =
            gt_normal_from_depth(&points_cam, &valid, w, h, &Vector3::zeros());
        Frame {
            index,
            width: w,
            height: h,
            color,
            depth,
            points_cam,
            normals_cam,
            normal_valid,
        }
    }

    pub fn valid_depth(&self, idx: usize) -> bool {
        self.depth[idx] > 0.0
    }

    pub fn pixel_color(&self, idx: usize) -> Vector3<f64> {
        Vector3::new(
            self.color[idx * 3],
            self.color[idx * 3 + 1],
            self.color[idx * 3 + 2],
        )
    }

    /// World point of a pixel under the given camera-to-world pose.
    pub fn point_world(&self, idx: usize, pose: &Pose) -> Vector3<f64> {
        pose.transform_point(&self.points_cam[idx])
    }

    /// World normal of a pixel under the given pose.
    pub fn normal_world(&self, idx: usize, pose: &Pose) -> Vector3<f64> {
        pose.rotate_vector(&self.normals_cam[idx])
    }

    pub fn mean_valid_depth(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &d in &self.depth {
            if d > 0.0 {
                sum += d;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Back-project a depth map into world points under `pose`. Pixels with
/// invalid depth produce the zero vector; callers must consult the depth.
pub fn backproject(
    depth: &[f64],
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> Vec<Vector3<f64>> {
    let (w, h) = (intr.width, intr.height);
    let mut out = vec![Vector3::zeros(); w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let d = depth[idx];
            if d > 0.0 {
                let p_cam = intr.pixel_ray(x as f64, y as f64) * d;
                out[idx] = pose.transform_point(&p_cam);
            }
        }
    }
    out
}

/// Normals from finite differences of the point map: central differences in
/// the interior, one-sided at the image border. A pixel is only defined when
/// its whole 3x3 neighborhood (clamped at borders) has valid depth; holes
/// therefore knock out their 8-neighborhood. Normals are oriented away from
/// the camera center (n · (p - cam) > 0).
pub fn gt_normal_from_depth(
    points: &[Vector3<f64>],
    valid: &[bool],
    width: usize,
    height: usize,
    cam_center: &Vector3<f64>,
) -> (Vec<Vector3<f64>>, Vec<bool>) {
    let mut normals = vec![Vector3::zeros(); width * height];
    let mut defined = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let idx = y * width + x;
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(width - 1);
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(height - 1);
            let mut window_ok = true;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    if !valid[yy * width + xx] {
                        window_ok = false;
                    }
                }
            }
            if !window_ok {
                continue;
            }
            let gx = (points[y * width + x1] - points[y * width + x0]) / (x1 - x0) as f64;
            let gy = (points[y1 * width + x] - points[y0 * width + x]) / (y1 - y0) as f64;
            let mut n = gx.cross(&gy);
            let norm = n.norm();
            if norm < 1e-12 {
                continue;
            }
            n /= norm;
            if n.dot(&(points[idx] - cam_center)) < 0.0 {
                n = -n;
            }
            normals[idx] = n;
            defined[idx] = true;
        }
    }
    (normals, defined)
}

/// A single 2D Gaussian surfel. Scales are stored as logs and opacity as a
/// logit so unconstrained gradient steps keep the decoded values legal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub log_scale: Vector2<f64>,
    pub opacity_logit: f64,
    /// Unconstrained; clamped to [0,1] at render time.
    pub color: Vector3<f64>,
}

impl Gaussian2D {
    pub fn scale_uv(&self) -> (f64, f64) {
        (self.log_scale.x.exp(), self.log_scale.y.exp())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn tangent_u(&self) -> Vector3<f64> {
        self.rotation_matrix().column(0).into()
    }

    pub fn tangent_v(&self) -> Vector3<f64> {
        self.rotation_matrix().column(1).into()
    }

    /// Surfel normal t_w = t_u x t_v, the third rotation column.
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation_matrix().column(2).into()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// The scene: a growable array of surfels. Order is stable within a frame so
/// optimizer state lines up with splat indices.
#[derive(Debug, Clone, Default)]
pub struct GaussianMap {
    pub gaussians: Vec<Gaussian2D>,
    pub creation_frame: Vec<u32>,
}

impl GaussianMap {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, g: Gaussian2D, frame: u32) {
        self.gaussians.push(g);
        self.creation_frame.push(frame);
    }

    /// Re-check the representation invariants; used by tests after optimizer
    /// steps.
    pub fn check_invariants(&self) -> bool {
        self.gaussians.iter().all(|g| {
            let (su, sv) = g.scale_uv();
            let o = g.opacity();
            (g.rotation.norm() - 1.0).abs() < 1e-9
                && su > 0.0
                && sv > 0.0
                && o > 0.0
                && o < 1.0
                && g.position.iter().all(|v| v.is_finite())
        })
    }
}

/// Build a rotation whose third column equals `normal`. The tangent frame is
/// chosen deterministically from the axis least aligned with the normal.
pub fn rotation_from_normal(normal: &Vector3<f64>) -> UnitQuaternion<f64> {
    let n = normal.normalize();
    let pick = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let tu = pick.cross(&n).normalize();
    let tv = n.cross(&tu);
    let m = Matrix3::from_columns(&[tu, tv, n]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

/// Seed one surfel per stride-th valid pixel of the frame: position from the
/// back-projected depth, color from the image, opacity 0.5, a one-pixel
/// footprint (s_u = s_v = d/fx) and the normal aligned with the depth-derived
/// ground-truth normal (camera-ray fallback where it is undefined).
pub fn init_map_from_frame(
    frame: &Frame,
    pose: &Pose,
    intr: &CameraIntrinsics,
    stride: usize,
) -> Result<GaussianMap, SceneError> {
    let mut map = GaussianMap::default();
    seed_gaussians(&mut map, frame, pose, intr, stride, None);
    if map.is_empty() {
        return Err(SceneError::NoValidDepth);
    }
    Ok(map)
}

/// Shared seeding routine for initialization and expansion. `mask`, when
/// present, restricts seeding to selected pixels.
pub fn seed_gaussians(
    map: &mut GaussianMap,
    frame: &Frame,
    pose: &Pose,
    intr: &CameraIntrinsics,
    stride: usize,
    mask: Option<&[bool]>,
) -> usize {
    let stride = stride.max(1);
    let mut added = 0usize;
    for y in (0..frame.height).step_by(stride) {
        for x in (0..frame.width).step_by(stride) {
            let idx = y * frame.width + x;
            if !frame.valid_depth(idx) {
                continue;
            }
            if let Some(m) = mask {
                if !m[idx] {
                    continue;
                }
            }
            let d = frame.depth[idx];
            let position = frame.point_world(idx, pose);
            let rotation = if frame.normal_valid[idx] {
                rotation_from_normal(&frame.normal_world(idx, pose))
            } else {
                // Face the camera: normal along the reversed viewing ray.
                let dir_world = pose.rotate_vector(&intr.pixel_ray(x as f64, y as f64));
                rotation_from_normal(&(-dir_world.normalize()))
            };
            let s = d / intr.fx;
            map.push(
                Gaussian2D {
                    position,
                    rotation,
                    log_scale: Vector2::new(s.ln(), s.ln()),
                    opacity_logit: logit(0.5),
                    color: frame.pixel_color(idx),
                },
                frame.index as u32,
            );
            added += 1;
        }
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn rz(angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle)
    }

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 101,
            height: 101,
            depth_scale: 1000.0,
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose::new(rz(0.7), Vector3::new(1.0, -2.0, 0.5));
        let id = Pose::identity();
        assert_relative_eq!(
            id.compose(&p).transform_point(&Vector3::x()),
            p.transform_point(&Vector3::x()),
            epsilon = 1e-12
        );
        let round = p.compose(&p.inverse());
        assert!(round.translation.norm() < 1e-12);
        assert!(round.rotation.angle() < 1e-12);
    }

    #[test]
    fn compose_quarter_turns() {
        let q = Pose::new(rz(FRAC_PI_2), Vector3::zeros());
        let r = q.compose(&q);
        assert_relative_eq!(
            r.transform_point(&Vector3::new(1.0, 0.0, 0.0)),
            Vector3::new(-1.0, 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn constant_velocity_cases() {
        let p = Pose::new(rz(0.3), Vector3::new(0.1, 0.0, 0.0));
        // Zero velocity.
        let init = constant_velocity_init(&p, Some(&p));
        assert_relative_eq!(init.translation, p.translation, epsilon = 1e-12);
        assert!(init.rotation_angle_to(&p) < 1e-12);
        // Single prior pose: unchanged.
        let init = constant_velocity_init(&p, None);
        assert_relative_eq!(init.translation, p.translation, epsilon = 1e-12);
        // Linear translation extrapolation.
        let a = Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 2.0));
        let b = Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 1.0));
        let init = constant_velocity_init(&a, Some(&b));
        assert_relative_eq!(init.translation, Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-12);
        // Rotational velocity: 10 deg then 20 deg extrapolates to 30 deg.
        let d10 = 10f64.to_radians();
        let p1 = Pose::new(rz(d10), Vector3::zeros());
        let p2 = Pose::new(rz(2.0 * d10), Vector3::zeros());
        let init = constant_velocity_init(&p2, Some(&p1));
        let expect = rz(3.0 * d10);
        assert!((init.rotation.inverse() * expect).angle() < 1e-12);
    }

    #[test]
    fn backproject_examples() {
        let intr = test_intrinsics();
        let mut depth = vec![0.0; intr.npixels()];
        depth[50 * intr.width + 50] = 1.0; // principal point
        let pts = backproject(&depth, &intr, &Pose::identity());
        assert_relative_eq!(
            pts[50 * intr.width + 50],
            Vector3::new(0.0, 0.0, 1.0),
            epsilon = 1e-12
        );

        let mut depth = vec![0.0; intr.npixels()];
        depth[50 * intr.width + 100] = 2.0; // cx + fx/2... pixel x=100 = cx+50
        let pts = backproject(&depth, &intr, &Pose::identity());
        assert_relative_eq!(
            pts[50 * intr.width + 100],
            Vector3::new(1.0, 0.0, 2.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn backproject_project_round_trip() {
        let intr = test_intrinsics();
        let pose = Pose::new(rz(0.4), Vector3::new(0.2, -0.1, 0.3));
        let mut depth = vec![0.0; intr.npixels()];
        for (i, d) in depth.iter_mut().enumerate() {
            *d = 0.5 + 0.001 * (i % 97) as f64;
        }
        let pts = backproject(&depth, &intr, &pose);
        let w2c = pose.inverse();
        for y in (0..intr.height).step_by(7) {
            for x in (0..intr.width).step_by(7) {
                let idx = y * intr.width + x;
                let cam = w2c.transform_point(&pts[idx]);
                let (px, py) = intr.project(&cam).unwrap();
                assert_relative_eq!(px, x as f64, epsilon = 1e-6);
                assert_relative_eq!(py, y as f64, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn normals_flat_plane() {
        let intr = test_intrinsics();
        let depth = vec![2.0; intr.npixels()];
        let frame = Frame::new(0, &intr, vec![0.5; intr.npixels() * 3], depth);
        for idx in 0..intr.npixels() {
            assert!(frame.normal_valid[idx]);
            let n = frame.normals_cam[idx];
            assert!(n.z.abs() > 0.999999, "normal {n:?}");
            assert_relative_eq!(n.norm(), 1.0, epsilon = 1e-9);
        }
    }

    /// Analytic oracle: surface z = 1 + 0.5 x gives a normal proportional to
    /// (-0.5, 0, 1) once oriented away from the camera.
    #[test]
    fn normals_tilted_plane() {
        let intr = test_intrinsics();
        let mut depth = vec![0.0; intr.npixels()];
        for y in 0..intr.height {
            for x in 0..intr.width {
                // z = 1 + 0.5 X with X = (x-cx) z / fx  =>  z (1 - 0.5 (x-cx)/fx) = 1
                let t = 1.0 - 0.5 * (x as f64 - intr.cx) / intr.fx;
                depth[y * intr.width + x] = 1.0 / t;
            }
        }
        let frame = Frame::new(0, &intr, vec![0.5; intr.npixels() * 3], depth);
        let idx = 50 * intr.width + 50;
        assert!(frame.normal_valid[idx]);
        let expect = Vector3::new(-0.5, 0.0, 1.0).normalize();
        assert_relative_eq!(frame.normals_cam[idx].x, expect.x, epsilon = 1e-4);
        assert_relative_eq!(frame.normals_cam[idx].y, expect.y, epsilon = 1e-4);
        assert_relative_eq!(frame.normals_cam[idx].z, expect.z, epsilon = 1e-4);
    }

    #[test]
    fn normals_hole_invalidates_neighborhood() {
        let intr = test_intrinsics();
        let mut depth = vec![1.5; intr.npixels()];
        depth[40 * intr.width + 40] = 0.0;
        let frame = Frame::new(0, &intr, vec![0.5; intr.npixels() * 3], depth);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let idx = ((40 + dy) as usize) * intr.width + (40 + dx) as usize;
                assert!(!frame.normal_valid[idx], "({dx},{dy}) should be undefined");
            }
        }
        // Two pixels away is fine again.
        assert!(frame.normal_valid[40 * intr.width + 43]);
    }

    #[test]
    fn init_map_counts_and_footprint() {
        let intr = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 0.5,
            cy: 0.5,
            width: 2,
            height: 2,
            depth_scale: 1000.0,
        };
        let frame = Frame::new(0, &intr, vec![0.3; 12], vec![1.0; 4]);
        let map = init_map_from_frame(&frame, &Pose::identity(), &intr, 1).unwrap();
        assert_eq!(map.len(), 4);
        let (su, sv) = map.gaussians[0].scale_uv();
        assert_relative_eq!(su, 0.01, epsilon = 1e-12);
        assert_relative_eq!(sv, 0.01, epsilon = 1e-12);
        assert_relative_eq!(map.gaussians[0].opacity(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn init_map_empty_depth_errors() {
        let intr = test_intrinsics();
        let frame = Frame::new(0, &intr, vec![0.0; intr.npixels() * 3], vec![0.0; intr.npixels()]);
        assert!(init_map_from_frame(&frame, &Pose::identity(), &intr, 1).is_err());
    }

    #[test]
    fn init_map_normals_align_on_flat_plane() {
        let intr = test_intrinsics();
        let frame = Frame::new(0, &intr, vec![0.5; intr.npixels() * 3], vec![1.0; intr.npixels()]);
        let map = init_map_from_frame(&frame, &Pose::identity(), &intr, 4).unwrap();
        for g in &map.gaussians {
            let tw = g.normal();
            assert!(tw.z.abs() > 1.0 - 1e-6, "t_w {tw:?}");
        }
    }

    #[test]
    fn rotation_from_normal_orthonormal() {
        for n in [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-0.3, 0.8, 0.52),
        ] {
            let q = rotation_from_normal(&n);
            let m = q.to_rotation_matrix();
            let col2: Vector3<f64> = m.matrix().column(2).into();
            assert_relative_eq!(col2, n.normalize(), epsilon = 1e-9);
            assert_relative_eq!(m.matrix().determinant(), 1.0, epsilon = 1e-9);
        }
    }
}
