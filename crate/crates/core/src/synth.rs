//! Synthetic RGB-D sequences from analytic scenes: exact depth from
//! ray-surface intersection and a smooth procedural texture, plus smooth
//! ground-truth trajectories. Used for tests, benchmarks and demos.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_dataset, DatasetError};
use crate::scene::{CameraIntrinsics, Frame, Pose};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum SceneKind {
    /// Camera inside a textured sphere of the given radius (a "bore").
    SphereBore { radius: f64 },
    /// Height-field plane z = z0 + amplitude sin(fx x) cos(fy y).
    WavyPlane { z0: f64, amplitude: f64, freq: f64 },
    /// Two fronto-parallel half-planes split at world x = 0.
    TwoPlanes { z_left: f64, z_right: f64 },
}

impl SceneKind {
    /// Depth along the camera ray of pixel (x, y) under `pose`, or 0 when
    /// the ray misses the surface. Depth is the camera-frame z of the hit.
    pub fn depth_at(&self, intr: &CameraIntrinsics, pose: &Pose, x: f64, y: f64) -> f64 {
        let dir_cam = intr.pixel_ray(x, y);
        let dir_w = pose.rotate_vector(&dir_cam);
        let orig = pose.translation;
        match *self {
            SceneKind::SphereBore { radius } => {
                // |orig + t dir|^2 = r^2, camera strictly inside.
                let a = dir_w.norm_squared();
                let b = 2.0 * dir_w.dot(&orig);
                let c = orig.norm_squared() - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc <= 0.0 {
                    return 0.0;
                }
                let t = (-b + disc.sqrt()) / (2.0 * a);
                if t > 0.0 {
                    t
                } else {
                    0.0
                }
            }
            SceneKind::WavyPlane { z0, amplitude, freq } => {
                // Root of p_z(t) - f(p_x(t), p_y(t)) by bisection; the
                // surface height stays within z0 +- amplitude.
                let f = |t: f64| {
                    let p = orig + t * dir_w;
                    p.z - (z0 + amplitude * (freq * p.x).sin() * (freq * p.y).cos())
                };
                let (mut lo, mut hi) = (1e-4, 50.0);
                if f(lo) >= 0.0 || f(hi) <= 0.0 {
                    return 0.0;
                }
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
            SceneKind::TwoPlanes { z_left, z_right } => {
                if dir_w.z <= 1e-9 {
                    return 0.0;
                }
                // Try both planes; accept the one whose hit lies on its side.
                for (z_plane, left) in [(z_left, true), (z_right, false)] {
                    let t = (z_plane - orig.z) / dir_w.z;
                    if t <= 0.0 {
                        continue;
                    }
                    let hit_x = orig.x + t * dir_w.x;
                    if (left && hit_x < 0.0) || (!left && hit_x >= 0.0) {
                        return t;
                    }
                }
                // Step edge shadow region: take the far plane.
                let z_far = z_left.max(z_right);
                let t = (z_far - orig.z) / dir_w.z;
                t.max(0.0)
            }
        }
    }

    /// Smooth procedural texture of the world point, in [0.02, 0.98]^3.
    pub fn color_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let v = match *self {
            SceneKind::SphereBore { radius } => {
                let d = p / radius;
                Vector3::new(
                    (3.1 * d.x + 5.3 * d.y + 1.7).sin() * (2.3 * d.z + 0.4).cos(),
                    (4.7 * d.y + 2.9 * d.z + 3.1).sin(),
                    (3.9 * d.z + 4.1 * d.x + 0.9).cos() * (1.9 * d.y).sin(),
                )
            }
            SceneKind::WavyPlane { freq, .. } => {
                let k = freq * 2.2;
                Vector3::new(
                    (k * p.x + 1.3).sin() * (0.7 * k * p.y).cos(),
                    (0.8 * k * p.x + 2.1 * k * p.y + 0.5).sin(),
                    (1.4 * k * p.x - 0.9 * k * p.y + 2.6).cos(),
                )
            }
            SceneKind::TwoPlanes { .. } => Vector3::new(
                (7.0 * p.x + 1.0).sin() * (5.0 * p.y).cos(),
                (6.0 * p.y + 2.0).sin(),
                if p.x < 0.0 { 0.6 } else { -0.6 },
            ),
        };
        Vector3::new(
            0.5 + 0.48 * v.x,
            0.5 + 0.48 * v.y,
            0.5 + 0.48 * v.z,
        )
    }

    /// Render one analytic frame: exact depth, procedural color.
    pub fn frame(&self, index: usize, intr: &CameraIntrinsics, pose: &Pose) -> Frame {
        let (w, h) = (intr.width, intr.height);
        let mut color = vec![0.0; w * h * 3];
        let mut depth = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let d = self.depth_at(intr, pose, x as f64, y as f64);
                depth[i] = d;
                if d > 0.0 {
                    let p_cam = intr.pixel_ray(x as f64, y as f64) * d;
                    let p_w = pose.transform_point(&p_cam);
                    let c = self.color_at(&p_w);
                    color[i * 3] = c.x;
                    color[i * 3 + 1] = c.y;
                    color[i * 3 + 2] = c.z;
                }
            }
        }
        Frame::new(index, intr, color, depth)
    }
}

/// Smooth orbit trajectory: a small circular sweep with gentle yaw/pitch
/// wobble, suitable for constant-velocity tracking.
pub fn orbit_trajectory(n_frames: usize, radius: f64, rot_amplitude_deg: f64) -> Vec<Pose> {
    let amp = rot_amplitude_deg.to_radians();
    (0..n_frames)
        .map(|k| {
            let t = k as f64 / n_frames.max(1) as f64;
            let th = std::f64::consts::TAU * t;
            let pos = Vector3::new(
                radius * th.sin(),
                radius * 0.6 * (1.0 - th.cos()),
                radius * 0.3 * (2.0 * th).sin(),
            );
            let yaw = amp * th.sin();
            let pitch = 0.7 * amp * (th + 0.8).cos();
            let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw)
                * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch);
            Pose::new(q, pos)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scene: SceneKind,
    pub n_frames: usize,
    pub intrinsics: CameraIntrinsics,
    pub orbit_radius: f64,
    pub rot_amplitude_deg: f64,
}

impl SynthSpec {
    /// Default desk-scale sequence: 160x120 inside a 1 m textured sphere.
    pub fn default_orbit(n_frames: usize) -> SynthSpec {
        SynthSpec {
            scene: SceneKind::SphereBore { radius: 1.0 },
            n_frames,
            intrinsics: CameraIntrinsics {
                fx: 130.0,
                fy: 130.0,
                cx: 79.5,
                cy: 59.5,
                width: 160,
                height: 120,
                // 0.1 mm depth units keep quantization far below the
                // tracking tolerances.
                depth_scale: 10000.0,
            },
            orbit_radius: 0.06,
            rot_amplitude_deg: 4.0,
        }
    }

    pub fn trajectory(&self) -> Vec<Pose> {
        orbit_trajectory(self.n_frames, self.orbit_radius, self.rot_amplitude_deg)
    }

    /// In-memory frames at exact f64 precision.
    pub fn frames(&self) -> Vec<Frame> {
        let traj = self.trajectory();
        traj.iter()
            .enumerate()
            .map(|(i, p)| self.scene.frame(i, &self.intrinsics, p))
            .collect()
    }

    /// Write the quantized dataset (8-bit color, 16-bit depth) plus the
    /// exact ground-truth trajectory.
    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        let traj = self.trajectory();
        let frames: Vec<(Vec<f64>, Vec<f64>)> = traj
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let f = self.scene.frame(i, &self.intrinsics, p);
                (f.color, f.depth)
            })
            .collect();
        write_dataset(dir, &self.intrinsics, &frames, Some(&traj))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 130.0,
            fy: 130.0,
            cx: 79.5,
            cy: 59.5,
            width: 160,
            height: 120,
            depth_scale: 10000.0,
        }
    }

    /// Analytic oracle: with the camera at the origin looking along +z the
    /// principal-axis depth solves t = z0 + A sin(fx t_x)... = z0 at x=y=0.
    #[test]
    fn wavy_plane_center_depth_exact() {
        let scene = SceneKind::WavyPlane {
            z0: 0.8,
            amplitude: 0.05,
            freq: 8.0,
        };
        let intr = intr();
        let d = scene.depth_at(&intr, &Pose::identity(), intr.cx, intr.cy);
        assert_relative_eq!(d, 0.8, epsilon = 1e-10);
    }

    #[test]
    fn sphere_bore_depth_bounds() {
        let scene = SceneKind::SphereBore { radius: 1.0 };
        let spec = SynthSpec::default_orbit(3);
        let frames: Vec<Frame> = spec
            .trajectory()
            .iter()
            .enumerate()
            .map(|(i, p)| scene.frame(i, &spec.intrinsics, p))
            .collect();
        for f in &frames {
            for &d in &f.depth {
                assert!(d > 0.0 && d < 2.0, "depth {d} outside (0, 2r)");
            }
        }
    }

    #[test]
    fn two_planes_step() {
        let scene = SceneKind::TwoPlanes {
            z_left: 0.8,
            z_right: 1.0,
        };
        let intr = intr();
        let d_left = scene.depth_at(&intr, &Pose::identity(), 10.0, 60.0);
        let d_right = scene.depth_at(&intr, &Pose::identity(), 150.0, 60.0);
        assert!(d_left < d_right);
    }

    #[test]
    fn written_trajectory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::default_orbit(4);
        spec.intrinsics.width = 32;
        spec.intrinsics.height = 24;
        spec.intrinsics.cx = 15.5;
        spec.intrinsics.cy = 11.5;
        spec.write(dir.path()).unwrap();
        let ds = crate::dataset::Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.len, 4);
        let gt = ds.groundtruth.unwrap();
        let traj = spec.trajectory();
        for (a, b) in gt.iter().zip(&traj) {
            assert_eq!(a.translation, b.translation);
            assert_eq!(a.rotation.quaternion().coords, b.rotation.quaternion().coords);
        }
    }
}
