//! Map export and debug rendering: ASCII PLY point clouds and PNG triples
//! (color, colormapped depth, colormapped normal) per pose.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use thiserror::Error;

use crate::rasterizer::{render, RasterError, RenderOptions, RenderOutput};
use crate::scene::{CameraIntrinsics, GaussianMap, Pose};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Write the map as an ASCII PLY point cloud: position, normal (t_w),
/// color, opacity and the two tangential scales per splat.
pub fn export_map_ply(map: &GaussianMap, path: &Path) -> Result<(), VizError> {
    let f = fs::File::create(path).map_err(|source| VizError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(f);
    let io = |source| VizError::Io {
        path: path.to_path_buf(),
        source,
    };
    writeln!(w, "ply").map_err(io)?;
    writeln!(w, "format ascii 1.0").map_err(io)?;
    writeln!(w, "element vertex {}", map.len()).map_err(io)?;
    for p in [
        "x", "y", "z", "nx", "ny", "nz", "red", "green", "blue", "opacity", "s_u", "s_v",
    ] {
        writeln!(w, "property float {p}").map_err(io)?;
    }
    writeln!(w, "end_header").map_err(io)?;
    for g in &map.gaussians {
        let n = g.normal();
        let (su, sv) = g.scale_uv();
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            g.position.x as f32,
            g.position.y as f32,
            g.position.z as f32,
            n.x as f32,
            n.y as f32,
            n.z as f32,
            g.color.x.clamp(0.0, 1.0) as f32,
            g.color.y.clamp(0.0, 1.0) as f32,
            g.color.z.clamp(0.0, 1.0) as f32,
            g.opacity() as f32,
            su as f32,
            sv as f32,
        )
        .map_err(io)?;
    }
    Ok(())
}

/// 16-entry viridis-style lookup table, linearly interpolated. Fixed so
/// depth renders are comparable across runs.
const COLORMAP: [[f64; 3]; 16] = [
    [0.267, 0.005, 0.329],
    [0.283, 0.100, 0.422],
    [0.277, 0.185, 0.490],
    [0.254, 0.265, 0.530],
    [0.222, 0.339, 0.549],
    [0.191, 0.407, 0.556],
    [0.164, 0.471, 0.558],
    [0.140, 0.534, 0.555],
    [0.122, 0.595, 0.543],
    [0.135, 0.659, 0.518],
    [0.208, 0.719, 0.473],
    [0.328, 0.773, 0.407],
    [0.478, 0.821, 0.318],
    [0.647, 0.858, 0.210],
    [0.825, 0.885, 0.106],
    [0.993, 0.906, 0.144],
];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 15.0;
    let i = (t as usize).min(14);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = COLORMAP[i][c] * (1.0 - f) + COLORMAP[i + 1][c] * f;
        out[c] = (v * 255.0).round() as u8;
    }
    out
}

fn save_rgb(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<(), VizError> {
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, rgb.to_vec()).expect("buffer size");
    img.save(path).map_err(|source| VizError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Convert one render into the three debug images. Depth is normalized over
/// the covered region (silhouette > 0.5) and normals map [-1,1] to [0,1].
pub fn render_images(out: &RenderOutput) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let n = out.width * out.height;
    let mut color = vec![0u8; n * 3];
    for i in 0..n * 3 {
        color[i] = (out.color[i].clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    let covered: Vec<usize> = (0..n).filter(|&i| out.silhouette[i] > 0.5).collect();
    let (dmin, dmax) = covered.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &i| {
        (lo.min(out.depth[i]), hi.max(out.depth[i]))
    });
    let range = if covered.is_empty() || dmax <= dmin {
        1.0
    } else {
        dmax - dmin
    };
    let mut depth = vec![0u8; n * 3];
    for i in 0..n {
        if out.silhouette[i] > 0.5 {
            let t = (out.depth[i] - dmin) / range;
            let c = colormap(t);
            depth[i * 3] = c[0];
            depth[i * 3 + 1] = c[1];
            depth[i * 3 + 2] = c[2];
        }
    }
    let mut normal = vec![0u8; n * 3];
    for i in 0..n {
        let w = out.weight_sum[i];
        if w > 1e-6 {
            for c in 0..3 {
                let v = (out.normal[i * 3 + c] / w).clamp(-1.0, 1.0);
                normal[i * 3 + c] = ((v * 0.5 + 0.5) * 255.0).round() as u8;
            }
        }
    }
    (color, depth, normal)
}

/// Render one image triple per pose into `out_dir` as
/// `color_%04d.png`, `depth_%04d.png`, `normal_%04d.png`.
pub fn render_views(
    map: &GaussianMap,
    poses: &[Pose],
    intr: &CameraIntrinsics,
    out_dir: &Path,
    opts: &RenderOptions,
) -> Result<(), VizError> {
    fs::create_dir_all(out_dir).map_err(|source| VizError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    for (i, pose) in poses.iter().enumerate() {
        let out = render(map, intr, pose, opts)?;
        let (c, d, n) = render_images(&out);
        save_rgb(&out_dir.join(format!("color_{i:04}.png")), out.width, out.height, &c)?;
        save_rgb(&out_dir.join(format!("depth_{i:04}.png")), out.width, out.height, &d)?;
        save_rgb(&out_dir.join(format!("normal_{i:04}.png")), out.width, out.height, &n)?;
    }
    Ok(())
}
