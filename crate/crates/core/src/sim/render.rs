//! Orthographic renders: top-down heightmap, in-hand crop, side-view
//! depth image of the platform, and an ascii dump for debugging.

use crate::config::EnvConfig;
use crate::nn::tensor::Tensor;

use super::{Block, BlockKind, Observation, WorldState};

/// Top-down heightmap of the given blocks, shape [1, height, width].
pub fn heightmap(blocks: &[Block], cfg: &EnvConfig) -> Tensor<f32> {
    let (w, h) = (cfg.width, cfg.height);
    let mut img = Tensor::zeros(&[1, h, w]);
    let data = img.data_mut();
    for b in blocks {
        let (x0, y0, x1, y1) = b.bbox(cfg.cube);
        let u0 = x0.floor().max(0.0) as usize;
        let v0 = y0.floor().max(0.0) as usize;
        let u1 = (x1.ceil() as usize).min(w);
        let v1 = (y1.ceil() as usize).min(h);
        for v in v0..v1 {
            for u in u0..u1 {
                if b.covers(u, v, cfg.cube) {
                    let t = b.top_height(u, v, cfg);
                    let cell = &mut data[v * w + u];
                    if t > *cell {
                        *cell = t;
                    }
                }
            }
        }
    }
    img
}

/// Square crop of `img` centered on (u, v); out-of-frame pixels are zero.
pub fn inhand_crop(img: &Tensor<f32>, u: usize, v: usize, size: usize) -> Tensor<f32> {
    let (_, h, w) = img.dims3();
    let mut out = Tensor::zeros(&[1, size, size]);
    let half = size as isize / 2;
    let (src, dst) = (img.data(), out.data_mut());
    for r in 0..size {
        let sv = v as isize + r as isize - half;
        if sv < 0 || sv >= h as isize {
            continue;
        }
        for c in 0..size {
            let su = u as isize + c as isize - half;
            if su < 0 || su >= w as isize {
                continue;
            }
            dst[r * size + c] = src[sv as usize * w + su as usize];
        }
    }
    out
}

/// Renders what the agent observes. The held block is not part of the
/// world, so only the stored pick-time crop shows it.
pub fn render_observation(world: &WorldState, cfg: &EnvConfig) -> Observation {
    let img = heightmap(&world.blocks, cfg);
    let hand = match (&world.held, &world.held_crop) {
        (Some(_), Some(crop)) => crop.clone(),
        _ => Tensor::zeros(&[1, cfg.inhand, cfg.inhand]),
    };
    Observation { img, hand, holding: world.held.is_some() }
}

/// Side-view depth image of the platform region, looking along +y.
///
/// Row 0 is the top of the build volume; larger values mean the surface
/// extends further toward the viewer. Empty columns stay zero, so a clear
/// platform renders as all zeros.
pub fn render_side_view(world: &WorldState, cfg: &EnvConfig) -> Tensor<f32> {
    let (rows, cols) = cfg.side_view_dims();
    let (px0, _, _, py1) = cfg.platform_rect();
    let x_off = px0 - cfg.side_margin as f32;
    let y_back = py1 + cfg.side_margin as f32;
    let mut out = Tensor::zeros(&[1, rows, cols]);
    let data = out.data_mut();
    for b in world.blocks.iter().filter(|b| WorldState::on_platform(b, cfg)) {
        let (bx0, by0, bx1, _) = b.bbox(cfg.cube);
        let (w, d) = b.kind.footprint(cfg.cube);
        let z0 = b.z as f32 * cfg.block_height;
        for c in 0..cols {
            let x = x_off + c as f32 + 0.5;
            if x < bx0 || x >= bx1 {
                continue;
            }
            for r in 0..rows {
                let band = (rows - 1 - r) as f32 + 0.5;
                let rel = band - z0;
                if rel < 0.0 {
                    continue;
                }
                // Front-most y of the block at this column and height.
                let y_front = match b.kind {
                    BlockKind::Roof | BlockKind::SmallRoof => {
                        if rel >= cfg.block_height {
                            continue;
                        }
                        // ridge cross-section: occupied depth shrinks with height
                        let half = (d / 2.0) * (1.0 - rel / cfg.block_height);
                        b.y - half
                    }
                    BlockKind::Cylinder => {
                        if rel >= cfg.block_height {
                            continue;
                        }
                        let radius = w / 2.0;
                        let dx = x - b.x;
                        if dx.abs() >= radius {
                            continue;
                        }
                        b.y - (radius * radius - dx * dx).sqrt()
                    }
                    _ => {
                        if rel >= cfg.block_height {
                            continue;
                        }
                        by0
                    }
                };
                let depth = y_back - y_front;
                let cell = &mut data[r * cols + c];
                if depth > *cell {
                    *cell = depth;
                }
            }
        }
    }
    out
}

/// Coarse character rendering of a heightmap, handy in test failures.
pub fn heightmap_ascii(img: &Tensor<f32>, cfg: &EnvConfig) -> String {
    const RAMP: &[u8] = b" .:-=+*#%@";
    let (_, h, w) = img.dims3();
    let max = cfg.obs_norm();
    let mut s = String::with_capacity((w + 1) * h);
    for v in 0..h {
        for u in 0..w {
            let x = img.data()[v * w + u];
            let idx = ((x / max) * (RAMP.len() - 1) as f32).round() as usize;
            s.push(RAMP[idx.min(RAMP.len() - 1)] as char);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn empty_world_renders_zero() {
        let img = heightmap(&[], &cfg());
        assert_eq!(img.shape(), &[1, 48, 48]);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cube_renders_footprint_square() {
        let cfg = cfg();
        let img = heightmap(&[Block::new(BlockKind::Cube, 24.0, 24.0, 0)], &cfg);
        let mut nonzero = 0;
        for v in 0..48 {
            for u in 0..48 {
                let x = img.data()[v * 48 + u];
                if x != 0.0 {
                    nonzero += 1;
                    assert_eq!(x, cfg.block_height);
                    assert!((21..27).contains(&u) && (21..27).contains(&v), "({u},{v})");
                }
            }
        }
        assert_eq!(nonzero, 36);
    }

    #[test]
    fn full_scale_shapes() {
        let cfg = EnvConfig::full_scale();
        let world = WorldState::new(vec![Block::new(BlockKind::Brick, 30.0, 30.0, 0)]);
        let obs = render_observation(&world, &cfg);
        assert_eq!(obs.img.shape(), &[1, 90, 90]);
        assert_eq!(obs.hand.shape(), &[1, 24, 24]);
    }

    #[test]
    fn crop_is_clamped_and_centered() {
        let cfg = cfg();
        let img = heightmap(&[Block::new(BlockKind::Cube, 3.0, 3.0, 0)], &cfg);
        let crop = inhand_crop(&img, 3, 3, 16);
        assert_eq!(crop.shape(), &[1, 16, 16]);
        // center pixel of the crop equals the source pixel
        assert_eq!(crop.data()[8 * 16 + 8], img.data()[3 * 48 + 3]);
        assert!(crop.data().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn side_view_of_empty_platform_is_zero() {
        let cfg = cfg();
        let world = WorldState::new(vec![Block::new(BlockKind::Cube, 5.0, 5.0, 0)]);
        let p = render_side_view(&world, &cfg);
        assert!(p.data().iter().all(|&v| v == 0.0), "scattered blocks must not show");
    }

    #[test]
    fn side_view_brick_is_one_layer_silhouette() {
        let cfg = cfg();
        let world = WorldState::new(vec![Block::new(BlockKind::Brick, 24.0, 24.0, 0)]);
        let p = render_side_view(&world, &cfg);
        let (rows, cols) = cfg.side_view_dims();
        let occupied_rows: Vec<usize> = (0..rows)
            .filter(|r| (0..cols).any(|c| p.data()[r * cols + c] > 0.0))
            .collect();
        // exactly the bottom block_height rows
        assert_eq!(occupied_rows.len(), cfg.block_height as usize);
        assert_eq!(*occupied_rows.last().unwrap(), rows - 1);
        // all occupied columns share the same depth (flat front face)
        let bottom = rows - 1;
        let depths: Vec<f32> =
            (0..cols).map(|c| p.data()[bottom * cols + c]).filter(|&d| d > 0.0).collect();
        assert_eq!(depths.len(), 12);
        assert!(depths.iter().all(|&d| (d - depths[0]).abs() < 1e-6));
    }

    /// Independent render oracle for the two-layer cube-pair + roof
    /// structure: occupancy per (row, col) computed directly from the
    /// geometry definition.
    #[test]
    fn side_view_cc_roof_matches_oracle() {
        let cfg = cfg();
        let [left, right] = cfg.slots();
        let blocks = vec![
            Block::new(BlockKind::Cube, left.0, left.1, 0),
            Block::new(BlockKind::Cube, right.0, right.1, 0),
            Block::new(BlockKind::Roof, 24.0, 24.0, 1),
        ];
        let world = WorldState::new(blocks);
        let p = render_side_view(&world, &cfg);
        let (rows, cols) = cfg.side_view_dims();
        let bh = cfg.block_height;
        for r in 0..rows {
            let band = (rows - 1 - r) as f32 + 0.5;
            for c in 0..cols {
                let x = (16.0 - cfg.side_margin as f32) + c as f32 + 0.5;
                let in_span = (18.0..30.0).contains(&x);
                let occupied = p.data()[r * cols + c] > 0.0;
                let expect = if band < bh {
                    in_span // cube layer
                } else if band < 2.0 * bh {
                    // roof cross-section narrows with height but spans all x
                    in_span && (band - bh) < bh
                } else {
                    false
                };
                assert_eq!(occupied, expect, "row {r} col {c} band {band}");
            }
        }
        // triangular profile: depth shrinks as the band rises through the roof
        let col = cols / 2;
        let depth_at = |band: f32| {
            let r = rows - 1 - (band - 0.5) as usize;
            p.data()[r * cols + col]
        };
        assert!(depth_at(bh + 0.5) > depth_at(bh + 3.5));
        assert!(depth_at(bh + 3.5) > depth_at(bh + 5.5));
    }
}
