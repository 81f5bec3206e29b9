//! Deterministic top-down block world with pixel-indexed PICK/PLACE
//! actions, heightmap observations and simplified stability rules.

mod augment;
mod env;
mod render;
pub mod script;

pub use augment::augment_observation;
pub use env::{Env, StepOutcome};
pub use render::{heightmap, heightmap_ascii, inhand_crop, render_observation, render_side_view};

use crate::config::EnvConfig;
use crate::nn::tensor::Tensor;

/// Block shapes known to the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Cube,
    Brick,
    Roof,
    SmallRoof,
    Cylinder,
}

impl BlockKind {
    /// Footprint (width, depth) in pixels. Bricks and roofs span two cube
    /// widths; cylinders and small roofs share the cube footprint.
    pub fn footprint(self, cube: usize) -> (f32, f32) {
        let c = cube as f32;
        match self {
            BlockKind::Cube | BlockKind::Cylinder | BlockKind::SmallRoof => (c, c),
            BlockKind::Brick | BlockKind::Roof => (2.0 * c, c),
        }
    }

    /// Roof-family blocks are never load-bearing.
    pub fn stackable(self) -> bool {
        !matches!(self, BlockKind::Roof | BlockKind::SmallRoof)
    }

    pub fn code(self) -> &'static str {
        match self {
            BlockKind::Cube => "cube",
            BlockKind::Brick => "brick",
            BlockKind::Roof => "roof",
            BlockKind::SmallRoof => "small_roof",
            BlockKind::Cylinder => "cylinder",
        }
    }
}

/// One rigid block in the scene. `x`/`y` are the continuous footprint
/// center in pixel coordinates; `z` is the integer layer (0 = on table).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub kind: BlockKind,
    pub x: f32,
    pub y: f32,
    pub z: u32,
}

impl Block {
    pub fn new(kind: BlockKind, x: f32, y: f32, z: u32) -> Self {
        Block { kind, x, y, z }
    }

    /// Axis-aligned footprint [x0, y0, x1, y1).
    pub fn bbox(&self, cube: usize) -> (f32, f32, f32, f32) {
        let (w, d) = self.kind.footprint(cube);
        (self.x - w / 2.0, self.y - d / 2.0, self.x + w / 2.0, self.y + d / 2.0)
    }

    /// Whether pixel (u, v) falls inside the footprint. Cylinders use a
    /// circular mask; everything else the full bbox.
    pub fn covers(&self, u: usize, v: usize, cube: usize) -> bool {
        let (px, py) = (u as f32 + 0.5, v as f32 + 0.5);
        let (x0, y0, x1, y1) = self.bbox(cube);
        if px < x0 || px >= x1 || py < y0 || py >= y1 {
            return false;
        }
        if self.kind == BlockKind::Cylinder {
            let r = cube as f32 / 2.0;
            let (dx, dy) = (px - self.x, py - self.y);
            return dx * dx + dy * dy <= r * r;
        }
        true
    }

    /// Top surface height at pixel (u, v), assuming coverage. Roof-family
    /// blocks slope from a ridge along x down to their depth edges.
    pub fn top_height(&self, _u: usize, v: usize, cfg: &EnvConfig) -> f32 {
        let base = self.z as f32 * cfg.block_height;
        match self.kind {
            BlockKind::Roof | BlockKind::SmallRoof => {
                let (_, d) = self.kind.footprint(cfg.cube);
                let rel = (v as f32 + 0.5 - self.y).abs() / (d / 2.0);
                base + (cfg.block_height * (1.0 - rel)).max(0.5)
            }
            _ => base + cfg.block_height,
        }
    }

    pub fn overlap_area(&self, other: &Block, cube: usize) -> f32 {
        let (ax0, ay0, ax1, ay1) = self.bbox(cube);
        let (bx0, by0, bx1, by1) = other.bbox(cube);
        let w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let d = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        w * d
    }

    pub fn area(&self, cube: usize) -> f32 {
        let (w, d) = self.kind.footprint(cube);
        w * d
    }
}

/// Exact simulated scene. Everything observations are rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub blocks: Vec<Block>,
    pub held: Option<BlockKind>,
    /// In-hand image captured just before the last successful pick;
    /// `None` exactly when the hand is empty.
    pub held_crop: Option<Tensor<f32>>,
}

impl WorldState {
    pub fn new(blocks: Vec<Block>) -> Self {
        WorldState { blocks, held: None, held_crop: None }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len() + usize::from(self.held.is_some())
    }

    pub fn on_platform(block: &Block, cfg: &EnvConfig) -> bool {
        let (x0, y0, x1, y1) = cfg.platform_rect();
        block.x >= x0 && block.x < x1 && block.y >= y0 && block.y < y1
    }

    pub fn platform_blocks<'a>(&'a self, cfg: &'a EnvConfig) -> impl Iterator<Item = &'a Block> {
        self.blocks.iter().filter(move |b| Self::on_platform(b, cfg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Pick,
    Place,
}

/// A spatial action: a pixel plus the pick/place tag. The tag always
/// follows the holding flag, so policies only choose the pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub kind: ActionKind,
    pub u: usize,
    pub v: usize,
}

impl Action {
    pub fn pick(u: usize, v: usize) -> Self {
        Action { kind: ActionKind::Pick, u, v }
    }

    pub fn place(u: usize, v: usize) -> Self {
        Action { kind: ActionKind::Place, u, v }
    }
}

/// What the agent sees: the workspace heightmap, the in-hand crop and the
/// holding flag. The hand image is all zeros exactly when `holding` is
/// false.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub img: Tensor<f32>,
    pub hand: Tensor<f32>,
    pub holding: bool,
}
