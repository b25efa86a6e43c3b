//! Tiled forward rasterization.

use rayon::prelude::*;

use crate::scene::{CameraIntrinsics, GaussianMap, Pose};

use super::screen::{build_splat_screens, SplatScreen};
use super::{
    intersect_rows, splat_weight, BlendState, Intersection, RasterError, RenderOptions,
    RenderOutput, DEPTH_EPS, G_MIN, TILE_SIZE, T_STOP,
};

/// Render all buffers from a map and pose. Deterministic for fixed inputs
/// regardless of worker count: work is split over fixed 16-row bands and
/// every pixel blends sequentially.
pub fn render(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> Result<RenderOutput, RasterError> {
    if map.is_empty() {
        return Err(RasterError::EmptyScene);
    }
    let screens = build_splat_screens(map, intr, pose, opts);
    let tiles = bin_tiles(&screens, intr.width, intr.height);
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

    let (w, h) = (intr.width, intr.height);
    let n_bands = h.div_ceil(TILE_SIZE);
    let bands: Vec<BandOutput> = (0..n_bands)
        .into_par_iter()
        .map(|band| render_band(band, w, h, &screens, &tiles, &opacities, &colors, opts))
        .collect();

    let n = w * h;
    let mut out = RenderOutput {
        width: w,
        height: h,
        color: Vec::with_capacity(n * 3),
        depth: Vec::with_capacity(n),
        weight_sum: Vec::with_capacity(n),
        silhouette: Vec::with_capacity(n),
        normal: Vec::with_capacity(n * 3),
        distortion: Vec::with_capacity(n),
        blend: BlendState {
            offsets: Vec::with_capacity(n + 1),
            items: Vec::new(),
            map_len: map.len(),
        },
    };
    out.blend.offsets.push(0);
    for b in bands {
        out.color.extend_from_slice(&b.color);
        out.depth.extend_from_slice(&b.depth);
        out.weight_sum.extend_from_slice(&b.weight_sum);
        out.silhouette.extend_from_slice(&b.silhouette);
        out.normal.extend_from_slice(&b.normal);
        out.distortion.extend_from_slice(&b.distortion);
        let base = out.blend.items.len() as u32;
        for &o in &b.offsets[1..] {
            out.blend.offsets.push(base + o);
        }
        out.blend.items.extend_from_slice(&b.items);
    }
    Ok(out)
}

/// Tile lists of splat indices whose conservative AABB touches the tile.
/// Splats are visited in index order, so each list is index-sorted before
/// the depth sort.
pub(crate) fn bin_tiles(screens: &[SplatScreen], width: usize, height: usize) -> Vec<Vec<u32>> {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in screens.iter().enumerate() {
        if s.culled {
            continue;
        }
        match s.aabb {
            None => {
                for t in tiles.iter_mut() {
                    t.push(i as u32);
                }
            }
            Some([xmin, xmax, ymin, ymax]) => {
                if xmax < 0.0
                    || ymax < 0.0
                    || xmin > (width - 1) as f64
                    || ymin > (height - 1) as f64
                {
                    continue;
                }
                let tx0 = (xmin.max(0.0) as usize) / TILE_SIZE;
                let tx1 = ((xmax.min((width - 1) as f64)) as usize) / TILE_SIZE;
                let ty0 = (ymin.max(0.0) as usize) / TILE_SIZE;
                let ty1 = ((ymax.min((height - 1) as f64)) as usize) / TILE_SIZE;
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        tiles[ty * tiles_x + tx].push(i as u32);
                    }
                }
            }
        }
    }
    // Front-to-back with a splat-index tiebreak.
    tiles.par_iter_mut().for_each(|list| {
        list.sort_by(|&a, &b| {
            screens[a as usize]
                .view_depth
                .partial_cmp(&screens[b as usize].view_depth)
                .unwrap()
                .then(a.cmp(&b))
        });
    });
    tiles
}

struct BandOutput {
    color: Vec<f64>,
    depth: Vec<f64>,
    weight_sum: Vec<f64>,
    silhouette: Vec<f64>,
    normal: Vec<f64>,
    distortion: Vec<f64>,
    offsets: Vec<u32>,
    items: Vec<Intersection>,
}

#[allow(clippy::too_many_arguments)]
fn render_band(
    band: usize,
    width: usize,
    height: usize,
    screens: &[SplatScreen],
    tiles: &[Vec<u32>],
    opacities: &[f64],
    colors: &[[f64; 3]],
    opts: &RenderOptions,
) -> BandOutput {
    let y0 = band * TILE_SIZE;
    let y1 = ((band + 1) * TILE_SIZE).min(height);
    let rows = y1 - y0;
    let tiles_x = width.div_ceil(TILE_SIZE);
    let n = rows * width;
    let mut out = BandOutput {
        color: vec![0.0; n * 3],
        depth: vec![0.0; n],
        weight_sum: vec![0.0; n],
        silhouette: vec![0.0; n],
        normal: vec![0.0; n * 3],
        distortion: vec![0.0; n],
        offsets: Vec::with_capacity(n + 1),
        items: Vec::new(),
    };
    out.offsets.push(0);
    let mut scratch: Vec<u32> = Vec::new();
    for y in y0..y1 {
        for x in 0..width {
            let tile = &tiles[band * tiles_x + x / TILE_SIZE];
            let local = (y - y0) * width + x;
            let start = out.items.len();
            blend_pixel(x as f64, y as f64, tile, screens, opacities, opts, &mut out.items);
            let items = &out.items[start..];
            let mut col = [0.0f64; 3];
            let mut dnum = 0.0;
            let mut wsum = 0.0;
            let mut nrm = [0.0f64; 3];
            for it in items {
                let c = &colors[it.splat as usize];
                col[0] += it.weight * c[0];
                col[1] += it.weight * c[1];
                col[2] += it.weight * c[2];
                dnum += it.weight * it.z;
                wsum += it.weight;
                let sn = &screens[it.splat as usize].cam_normal;
                nrm[0] += it.weight * sn.x;
                nrm[1] += it.weight * sn.y;
                nrm[2] += it.weight * sn.z;
            }
            out.color[local * 3] = col[0];
            out.color[local * 3 + 1] = col[1];
            out.color[local * 3 + 2] = col[2];
            out.depth[local] = dnum / (wsum + DEPTH_EPS);
            out.weight_sum[local] = wsum;
            out.silhouette[local] = if opts.silhouette_literal {
                wsum / (wsum + DEPTH_EPS)
            } else {
                wsum.clamp(0.0, 1.0)
            };
            out.normal[local * 3] = nrm[0];
            out.normal[local * 3 + 1] = nrm[1];
            out.normal[local * 3 + 2] = nrm[2];
            out.distortion[local] = distortion_from_items(items, &mut scratch);
            out.offsets.push(out.items.len() as u32);
        }
    }
    out
}

/// Front-to-back blending of one pixel following the shared contract;
/// intersections are appended to `items`.
pub(crate) fn blend_pixel(
    x: f64,
    y: f64,
    candidates: &[u32],
    screens: &[SplatScreen],
    opacities: &[f64],
    opts: &RenderOptions,
    items: &mut Vec<Intersection>,
) {
    let mut t = 1.0f64;
    for &si in candidates {
        let s = &screens[si as usize];
        let Some((u, v, z)) = intersect_rows(&s.m, x, y) else {
            continue;
        };
        if z < opts.z_near {
            continue;
        }
        let (ghat, screen_branch) = splat_weight(u, v, x - s.center_px.0, y - s.center_px.1);
        if ghat < G_MIN {
            continue;
        }
        let a = opacities[si as usize] * ghat;
        items.push(Intersection {
            splat: si,
            u,
            v,
            z,
            ghat,
            t_before: t,
            weight: t * a,
            screen_branch,
        });
        t *= 1.0 - a;
        if t < T_STOP {
            break;
        }
    }
}

/// Exact pairwise distortion sum_{i<j} w_i w_j |z_i - z_j| via the linear
/// running-sum recurrence over intersections sorted by depth.
pub(crate) fn distortion_from_items(items: &[Intersection], scratch: &mut Vec<u32>) -> f64 {
    if items.len() < 2 {
        return 0.0;
    }
    scratch.clear();
    scratch.extend(0..items.len() as u32);
    scratch.sort_by(|&a, &b| {
        items[a as usize]
            .z
            .partial_cmp(&items[b as usize].z)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut acc = 0.0;
    let mut wsum = 0.0;
    let mut wzsum = 0.0;
    for &i in scratch.iter() {
        let it = &items[i as usize];
        acc += it.weight * (it.z * wsum - wzsum);
        wsum += it.weight;
        wzsum += it.weight * it.z;
    }
    acc
}
