//! The environment: reset scattering, PICK/PLACE semantics, stability
//! rules and sparse goal rewards.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{EnvConfig, ObjectSet};
use crate::error::{Error, Result};
use crate::graph::{f_abstract, Abstract, AbstractState, GoalGraph, Layer, StateId};
use crate::nn::tensor::Tensor;

use super::render::{heightmap, inhand_crop, render_observation, render_side_view};
use super::{augment_observation, Action, ActionKind, Block, BlockKind, Observation, WorldState};

const OVERLAP_EPS: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Collapse,
}

/// Verdict for a newly placed block resting on the blocks below it.
///
/// Stable requires: every support is load-bearing (no roof-family
/// blocks), the supported footprint fraction reaches `support_frac`, and
/// the placed center lies within `tau_frac` of the supports' composite
/// width from their composite center. Ground placements are always
/// stable.
pub fn stability_check(blocks: &[Block], placed: &Block, cfg: &EnvConfig) -> Stability {
    if placed.z == 0 {
        return Stability::Stable;
    }
    let supports: Vec<&Block> = blocks
        .iter()
        .filter(|b| b.z + 1 == placed.z && b.overlap_area(placed, cfg.cube) > OVERLAP_EPS)
        .collect();
    if supports.is_empty() {
        return Stability::Collapse;
    }
    if supports.iter().any(|b| !b.kind.stackable()) {
        return Stability::Collapse;
    }
    let covered: f32 = supports.iter().map(|b| b.overlap_area(placed, cfg.cube)).sum();
    if covered / placed.area(cfg.cube) < cfg.support_frac {
        return Stability::Collapse;
    }
    // composite support: union bbox of everything it rests on
    let mut x0 = f32::INFINITY;
    let mut y0 = f32::INFINITY;
    let mut x1 = f32::NEG_INFINITY;
    let mut y1 = f32::NEG_INFINITY;
    for b in &supports {
        let (bx0, by0, bx1, by1) = b.bbox(cfg.cube);
        x0 = x0.min(bx0);
        y0 = y0.min(by0);
        x1 = x1.max(bx1);
        y1 = y1.max(by1);
    }
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let tau = cfg.tau_frac * (x1 - x0);
    let dist = ((placed.x - cx).powi(2) + (placed.y - cy).powi(2)).sqrt();
    if dist > tau {
        return Stability::Collapse;
    }
    Stability::Stable
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: i32,
    pub reached_goal: bool,
    pub collapsed: bool,
}

/// A block-construction environment instance. Instances are independent;
/// run as many in parallel as needed, one per executor.
pub struct Env {
    cfg: EnvConfig,
    graph: Arc<GoalGraph>,
    world: WorldState,
    /// Conditioning goal the reward is computed against (a subgoal during
    /// plan execution).
    goal: StateId,
    end_goal: StateId,
    rng: ChaCha8Rng,
    steps: u64,
}

impl Env {
    pub fn new(cfg: EnvConfig, graph: Arc<GoalGraph>) -> Result<Env> {
        cfg.validate()?;
        let empty = graph.empty_id();
        Ok(Env {
            cfg,
            graph,
            world: WorldState::new(Vec::new()),
            goal: empty,
            end_goal: empty,
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
        })
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Arc<GoalGraph> {
        &self.graph
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn goal(&self) -> StateId {
        self.goal
    }

    pub fn end_goal(&self) -> StateId {
        self.end_goal
    }

    /// Conditions the reward on a new (sub)goal.
    pub fn set_goal(&mut self, goal: StateId) {
        self.goal = goal;
    }

    /// Clears the platform and scatters exactly the blocks the goal
    /// structure requires at random non-overlapping poses outside the
    /// platform. Deterministic for a given seed.
    pub fn reset(&mut self, end_goal: StateId, seed: u64) -> Result<()> {
        let kinds = blocks_for(self.graph.state(end_goal));
        for k in &kinds {
            let novel = matches!(k, BlockKind::SmallRoof | BlockKind::Cylinder);
            if novel && self.cfg.object_set != ObjectSet::Extended {
                return Err(Error::Config(format!(
                    "goal requires {} but the object set does not include it",
                    k.code()
                )));
            }
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.world = WorldState::new(Vec::new());
        for kind in kinds {
            let b = self.scatter_one(kind)?;
            self.world.blocks.push(b);
        }
        self.goal = end_goal;
        self.end_goal = end_goal;
        self.steps = 0;
        Ok(())
    }

    /// Applies a pick or place. Invalid actions (picking air, picking
    /// with a full hand, placing with an empty one) are no-ops that still
    /// cost a step. Reward is 0 exactly when the resulting abstract state
    /// equals the conditioning goal, else -1.
    pub fn step(&mut self, a: Action) -> StepOutcome {
        assert!(a.u < self.cfg.width && a.v < self.cfg.height, "action out of bounds");
        let mut collapsed = false;
        match a.kind {
            ActionKind::Pick => {
                if self.world.held.is_none() {
                    if let Some(i) = self.topmost_at(a.u, a.v) {
                        let img = heightmap(&self.world.blocks, &self.cfg);
                        let crop = inhand_crop(&img, a.u, a.v, self.cfg.inhand);
                        let b = self.world.blocks.remove(i);
                        self.world.held = Some(b.kind);
                        self.world.held_crop = Some(crop);
                        collapsed = self.settle();
                    }
                }
            }
            ActionKind::Place => {
                if let Some(kind) = self.world.held.take() {
                    self.world.held_crop = None;
                    let (x, y) = (a.u as f32, a.v as f32);
                    let z = self.rest_level(kind, x, y);
                    let candidate = Block::new(kind, x, y, z);
                    match stability_check(&self.world.blocks, &candidate, &self.cfg) {
                        Stability::Stable => self.world.blocks.push(candidate),
                        Stability::Collapse => {
                            self.collapse_platform(Some(candidate));
                            collapsed = true;
                        }
                    }
                }
            }
        }
        self.steps += 1;
        let reached = self.abstract_state() == Abstract::State(self.goal);
        StepOutcome { reward: if reached { 0 } else { -1 }, reached_goal: reached, collapsed }
    }

    /// Current observation. Draws from the environment RNG only when
    /// augmentation is enabled.
    pub fn observe(&mut self) -> Observation {
        let obs = render_observation(&self.world, &self.cfg);
        if self.cfg.augment {
            augment_observation(&obs, &mut self.rng)
        } else {
            obs
        }
    }

    pub fn abstract_state(&self) -> Abstract {
        f_abstract(&self.world, &self.graph, &self.cfg)
    }

    pub fn side_view(&self) -> Tensor<f32> {
        render_side_view(&self.world, &self.cfg)
    }

    /// Index of the highest block whose footprint covers the pixel.
    fn topmost_at(&self, u: usize, v: usize) -> Option<usize> {
        self.world
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.covers(u, v, self.cfg.cube))
            .max_by_key(|(_, b)| b.z)
            .map(|(i, _)| i)
    }

    /// Layer a dropped block comes to rest at: one above the tallest
    /// block its footprint overlaps.
    fn rest_level(&self, kind: BlockKind, x: f32, y: f32) -> u32 {
        let probe = Block::new(kind, x, y, 0);
        self.world
            .blocks
            .iter()
            .filter(|b| b.overlap_area(&probe, self.cfg.cube) > OVERLAP_EPS)
            .map(|b| b.z + 1)
            .max()
            .unwrap_or(0)
    }

    /// Re-checks support after a removal. A violated platform block
    /// brings the whole platform structure down; a violated scattered
    /// stack just drops the loose block. Returns whether anything moved.
    fn settle(&mut self) -> bool {
        let mut any = false;
        loop {
            let violator = self.world.blocks.iter().position(|b| {
                if b.z == 0 {
                    return false;
                }
                let supports: Vec<&Block> = self
                    .world
                    .blocks
                    .iter()
                    .filter(|s| s.z + 1 == b.z && s.overlap_area(b, self.cfg.cube) > OVERLAP_EPS)
                    .collect();
                if supports.iter().any(|s| !s.kind.stackable()) {
                    return true;
                }
                let covered: f32 =
                    supports.iter().map(|s| s.overlap_area(b, self.cfg.cube)).sum();
                covered / b.area(self.cfg.cube) < self.cfg.support_frac
            });
            let Some(i) = violator else { return any };
            any = true;
            let b = self.world.blocks[i];
            if WorldState::on_platform(&b, &self.cfg) {
                self.collapse_platform(None);
            } else {
                let b = self.world.blocks.remove(i);
                let scattered =
                    self.scatter_one(b.kind).expect("workspace fit was validated at reset");
                self.world.blocks.push(scattered);
            }
        }
    }

    /// Scatters every platform block (plus the optional extra one, used
    /// for the just-placed block of a failed placement) back to free
    /// poses. Block count is conserved.
    fn collapse_platform(&mut self, extra: Option<Block>) {
        let mut fallen: Vec<Block> = Vec::new();
        let mut i = 0;
        while i < self.world.blocks.len() {
            if WorldState::on_platform(&self.world.blocks[i], &self.cfg) {
                fallen.push(self.world.blocks.remove(i));
            } else {
                i += 1;
            }
        }
        fallen.extend(extra);
        for b in fallen {
            let scattered =
                self.scatter_one(b.kind).expect("workspace fit was validated at reset");
            self.world.blocks.push(scattered);
        }
    }

    /// Random free pose outside the platform for one block.
    fn scatter_one(&mut self, kind: BlockKind) -> Result<Block> {
        let (w, d) = kind.footprint(self.cfg.cube);
        let (px0, py0, px1, py1) = self.cfg.platform_rect();
        for _ in 0..self.cfg.scatter_tries {
            let x = self.rng.random_range(w / 2.0..self.cfg.width as f32 - w / 2.0);
            let y = self.rng.random_range(d / 2.0..self.cfg.height as f32 - d / 2.0);
            let b = Block::new(kind, x, y, 0);
            let (bx0, by0, bx1, by1) = b.bbox(self.cfg.cube);
            let hits_platform = bx0 < px1 && bx1 > px0 && by0 < py1 && by1 > py0;
            if hits_platform {
                continue;
            }
            let overlaps = self
                .world
                .blocks
                .iter()
                .any(|o| o.z == 0 && o.overlap_area(&b, self.cfg.cube) > OVERLAP_EPS);
            if !overlaps {
                return Ok(b);
            }
        }
        Err(Error::Config(
            "workspace too small to scatter the required blocks without overlap".into(),
        ))
    }
}

/// Multiset of blocks a structure is built from.
pub fn blocks_for(state: &AbstractState) -> Vec<BlockKind> {
    let mut out = Vec::new();
    for l in state.layers() {
        match l {
            Layer::Brick => out.push(BlockKind::Brick),
            Layer::CubePair => out.extend([BlockKind::Cube, BlockKind::Cube]),
            Layer::CubeHalf => out.push(BlockKind::Cube),
            Layer::Roof => out.push(BlockKind::Roof),
            Layer::SmallRoof => out.push(BlockKind::SmallRoof),
            Layer::CylinderPair => out.extend([BlockKind::Cylinder, BlockKind::Cylinder]),
            Layer::CylinderHalf => out.push(BlockKind::Cylinder),
        }
    }
    out
}
