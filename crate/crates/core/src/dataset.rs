//! On-disk dataset layout:
//!
//! ```text
//! <dir>/intrinsics.json       fx fy cx cy width height depth_scale
//! <dir>/color/%06d.png        8-bit RGB
//! <dir>/depth/%06d.png        16-bit single channel, meters = value / depth_scale
//! <dir>/groundtruth.txt       optional: "frame_index tx ty tz qx qy qz qw"
//! ```

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use thiserror::Error;

use crate::scene::{CameraIntrinsics, Frame, Pose};

#[derive(Debug, Error)]
pub enum DatasetError {
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
    #[error("bad intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("bad ground truth line {line}: {msg}")]
    BadGroundTruth { line: usize, msg: String },
    #[error("frame {0} missing")]
    MissingFrame(usize),
    #[error("unreadable frame: {0}")]
    Unreadable(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct Dataset {
    pub dir: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub len: usize,
    pub groundtruth: Option<Vec<Pose>>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset, DatasetError> {
        let intr_path = dir.join("intrinsics.json");
        let text = fs::read_to_string(&intr_path).map_err(io_err(&intr_path))?;
        let intrinsics: CameraIntrinsics = serde_json::from_str(&text)
            .map_err(|e| DatasetError::BadIntrinsics(e.to_string()))?;
        intrinsics
            .validate()
            .map_err(|e| DatasetError::BadIntrinsics(e.to_string()))?;
        let color_dir = dir.join("color");
        let mut len = 0usize;
        while color_dir.join(frame_name(len)).exists() {
            len += 1;
        }
        let gt_path = dir.join("groundtruth.txt");
        let groundtruth = if gt_path.exists() {
            Some(read_trajectory(&gt_path)?)
        } else {
            None
        };
        Ok(Dataset {
            dir: dir.to_path_buf(),
            intrinsics,
            len,
            groundtruth,
        })
    }

    /// Intrinsics after the resolution divisor.
    pub fn scaled_intrinsics(&self, divisor: usize) -> CameraIntrinsics {
        self.intrinsics.scaled(divisor.max(1))
    }

    /// Load one frame, downsampled by the divisor (color box-averaged,
    /// depth by nearest sample to stay metrically exact).
    pub fn load_frame(&self, index: usize, divisor: usize) -> Result<Frame, DatasetError> {
        if index >= self.len {
            return Err(DatasetError::MissingFrame(index));
        }
        let divisor = divisor.max(1);
        let cpath = self.dir.join("color").join(frame_name(index));
        let dpath = self.dir.join("depth").join(frame_name(index));
        let cimg = image::open(&cpath)
            .map_err(|e| DatasetError::Image {
                path: cpath.clone(),
                source: e,
            })?
            .to_rgb8();
        let dimg = image::open(&dpath)
            .map_err(|e| DatasetError::Image {
                path: dpath.clone(),
                source: e,
            })?
            .to_luma16();
        let intr0 = &self.intrinsics;
        if cimg.width() as usize != intr0.width || cimg.height() as usize != intr0.height {
            return Err(DatasetError::Unreadable(cpath));
        }
        if dimg.width() as usize != intr0.width || dimg.height() as usize != intr0.height {
            return Err(DatasetError::Unreadable(dpath));
        }
        let intr = self.scaled_intrinsics(divisor);
        let (w, h) = (intr.width, intr.height);
        let mut color = vec![0.0f64; w * h * 3];
        let mut depth = vec![0.0f64; w * h];
        let inv = 1.0 / (divisor * divisor) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f64; 3];
                for dy in 0..divisor {
                    for dx in 0..divisor {
                        let p = cimg.get_pixel((x * divisor + dx) as u32, (y * divisor + dy) as u32);
                        acc[0] += p[0] as f64;
                        acc[1] += p[1] as f64;
                        acc[2] += p[2] as f64;
                    }
                }
                for c in 0..3 {
                    color[(y * w + x) * 3 + c] = acc[c] * inv / 255.0;
                }
                let d = dimg.get_pixel((x * divisor) as u32, (y * divisor) as u32)[0];
                depth[y * w + x] = d as f64 / intr.depth_scale;
            }
        }
        Ok(Frame::new(index, &intr, color, depth))
    }
}

pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Write a dataset directory from float images. Color is quantized to 8 bits
/// and depth to 16-bit units of 1/depth_scale meters.
pub fn write_dataset(
    dir: &Path,
    intr: &CameraIntrinsics,
    frames: &[(Vec<f64>, Vec<f64>)],
    groundtruth: Option<&[Pose]>,
) -> Result<(), DatasetError> {
    fs::create_dir_all(dir.join("color")).map_err(io_err(dir))?;
    fs::create_dir_all(dir.join("depth")).map_err(io_err(dir))?;
    let intr_path = dir.join("intrinsics.json");
    fs::write(
        &intr_path,
        serde_json::to_string_pretty(intr).expect("intrinsics serialize"),
    )
    .map_err(io_err(&intr_path))?;
    let (w, h) = (intr.width as u32, intr.height as u32);
    for (i, (color, depth)) in frames.iter().enumerate() {
        let mut cimg: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(w, h);
        for (p, px) in cimg.pixels_mut().enumerate() {
            for c in 0..3 {
                px[c] = (color[p * 3 + c].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        let cpath = dir.join("color").join(frame_name(i));
        cimg.save(&cpath).map_err(|e| DatasetError::Image {
            path: cpath.clone(),
            source: e,
        })?;
        let mut dimg: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w, h);
        for (p, px) in dimg.pixels_mut().enumerate() {
            let units = (depth[p] * intr.depth_scale).round();
            px[0] = units.clamp(0.0, 65535.0) as u16;
        }
        let dpath = dir.join("depth").join(frame_name(i));
        dimg.save(&dpath).map_err(|e| DatasetError::Image {
            path: dpath.clone(),
            source: e,
        })?;
    }
    if let Some(gt) = groundtruth {
        write_trajectory(&dir.join("groundtruth.txt"), gt)?;
    }
    Ok(())
}

/// Trajectory file: one "frame_index tx ty tz qx qy qz qw" line per frame.
pub fn write_trajectory(path: &Path, poses: &[Pose]) -> Result<(), DatasetError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for (i, p) in poses.iter().enumerate() {
        let v = p.as_tum();
        writeln!(
            w,
            "{i} {} {} {} {} {} {} {}",
            v[0], v[1], v[2], v[3], v[4], v[5], v[6]
        )
        .map_err(io_err(path))?;
    }
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<Pose>, DatasetError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let reader = std::io::BufReader::new(f);
    let mut poses = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<f64> = line
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DatasetError::BadGroundTruth {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if parts.len() != 7 {
            return Err(DatasetError::BadGroundTruth {
                line: lineno + 1,
                msg: format!("expected 7 fields, got {}", parts.len()),
            });
        }
        let arr: [f64; 7] = parts.try_into().unwrap();
        poses.push(Pose::from_tum(&arr));
    }
    Ok(poses)
}
