//! Trajectory and image-quality metrics.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::objectives::ssim;
use crate::scene::Pose;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("trajectory length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no valid pixels")]
    EmptyMask,
    #[error("image smaller than the SSIM window")]
    ImageTooSmall,
}

/// PSNR is reported as this sentinel for exactly identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Closed-form rigid alignment (orthogonal Procrustes on positions, no
/// scale) mapping `src` onto `dst`.
pub fn rigid_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).scale_mut(-1.0);
        r = u_fix * v_t;
    }
    let t = mu_d - r * mu_s;
    (r, t)
}

/// Absolute trajectory error in millimeters: RMSE of position residuals,
/// optionally after closed-form rigid alignment.
pub fn metric_ate(est: &[Pose], gt: &[Pose], align: bool) -> Result<f64, MetricError> {
    if est.len() != gt.len() {
        return Err(MetricError::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    let src: Vec<Vector3<f64>> = est.iter().map(|p| p.translation).collect();
    let dst: Vec<Vector3<f64>> = gt.iter().map(|p| p.translation).collect();
    let (r, t) = if align {
        rigid_align(&src, &dst)
    } else {
        (Matrix3::identity(), Vector3::zeros())
    };
    let mse: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| ((r * s + t) - d).norm_squared())
        .sum::<f64>()
        / src.len() as f64;
    Ok(mse.sqrt() * 1000.0)
}

/// RMSE of masked depth errors across all given frames, in millimeters.
pub fn metric_depth_rmse(
    renders: &[&[f64]],
    gts: &[&[f64]],
    masks: &[&[bool]],
) -> Result<f64, MetricError> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for ((r, g), m) in renders.iter().zip(gts).zip(masks) {
        for i in 0..r.len() {
            if m[i] {
                let e = r[i] - g[i];
                acc += e * e;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricError::EmptyMask);
    }
    Ok((acc / n as f64).sqrt() * 1000.0)
}

/// PSNR in dB over [0,1] images; identical images return the 99 dB cap.
pub fn metric_psnr(render: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(render.len(), gt.len());
    let mse: f64 = render
        .iter()
        .zip(gt)
        .map(|(a, b)| {
            let d = a.clamp(0.0, 1.0) - b;
            d * d
        })
        .sum::<f64>()
        / render.len() as f64;
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Mean SSIM (the similarity itself, not a loss) with the same kernel the
/// DSSIM loss uses.
pub fn metric_ssim(
    render: &[f64],
    gt: &[f64],
    width: usize,
    height: usize,
) -> Result<f64, MetricError> {
    let clamped: Vec<f64> = render.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ssim::ssim_mean(&clamped, gt, width, height, 3).ok_or(MetricError::ImageTooSmall)
}
