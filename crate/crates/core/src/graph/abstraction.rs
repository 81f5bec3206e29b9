//! Ground-truth abstraction: maps simulator poses on the platform to the
//! matching abstract state, and generates jittered structure instances
//! for classifier training.

use rand::Rng;

use crate::config::EnvConfig;
use crate::sim::{Block, BlockKind, WorldState};

use super::{AbstractState, GoalGraph, Layer, StateId};

/// Total abstraction output: a graph state or the off-grammar sentinel
/// for collapsed piles and anything else the grammar does not describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Abstract {
    State(StateId),
    NotAStructure,
}

impl Abstract {
    pub fn id(self) -> Option<StateId> {
        match self {
            Abstract::State(id) => Some(id),
            Abstract::NotAStructure => None,
        }
    }
}

/// Per-block matching tolerance: the alignment fraction of the block's
/// own width.
fn match_tol(kind: BlockKind, cfg: &EnvConfig) -> f32 {
    let (w, _) = kind.footprint(cfg.cube);
    cfg.tau_frac * w
}

fn near(b: &Block, target: (f32, f32), cfg: &EnvConfig) -> bool {
    let tol = match_tol(b.kind, cfg);
    let d2 = (b.x - target.0).powi(2) + (b.y - target.1).powi(2);
    d2 <= tol * tol
}

/// Matches one z-level worth of platform blocks against the canonical
/// layer geometries.
fn match_layer(level: &[&Block], cfg: &EnvConfig) -> Option<Layer> {
    let anchor = cfg.anchor();
    let [left, right] = cfg.slots();
    match level {
        [b] => match b.kind {
            BlockKind::Brick if near(b, anchor, cfg) => Some(Layer::Brick),
            BlockKind::Roof if near(b, anchor, cfg) => Some(Layer::Roof),
            BlockKind::SmallRoof if near(b, anchor, cfg) => Some(Layer::SmallRoof),
            BlockKind::Cube if near(b, left, cfg) || near(b, right, cfg) => Some(Layer::CubeHalf),
            BlockKind::Cylinder if near(b, left, cfg) || near(b, right, cfg) => {
                Some(Layer::CylinderHalf)
            }
            _ => None,
        },
        [a, b] => {
            let pair = |kind: BlockKind, layer: Layer| -> Option<Layer> {
                if a.kind != kind || b.kind != kind {
                    return None;
                }
                let (l, r) = if a.x <= b.x { (a, b) } else { (b, a) };
                (near(l, left, cfg) && near(r, right, cfg)).then_some(layer)
            };
            pair(BlockKind::Cube, Layer::CubePair)
                .or_else(|| pair(BlockKind::Cylinder, Layer::CylinderPair))
        }
        _ => None,
    }
}

/// The abstraction function: reads platform block poses (scattered blocks
/// and the hand are invisible to it) and returns the unique matching
/// abstract state, or [`Abstract::NotAStructure`].
pub fn f_abstract(world: &WorldState, graph: &GoalGraph, cfg: &EnvConfig) -> Abstract {
    let platform: Vec<&Block> = world.platform_blocks(cfg).collect();
    if platform.is_empty() {
        return Abstract::State(graph.empty_id());
    }
    let max_z = platform.iter().map(|b| b.z).max().unwrap() as usize;
    let mut levels: Vec<Vec<&Block>> = vec![Vec::new(); max_z + 1];
    for b in &platform {
        levels[b.z as usize].push(*b);
    }
    let mut layers = Vec::with_capacity(levels.len());
    for level in &levels {
        if level.is_empty() {
            return Abstract::NotAStructure; // gap in the stack
        }
        match match_layer(level, cfg) {
            Some(l) => layers.push(l),
            None => return Abstract::NotAStructure,
        }
    }
    let Ok(state) = AbstractState::new(layers) else {
        return Abstract::NotAStructure; // half/roof layer below the top
    };
    match graph.id_of(&state) {
        Some(id) => Abstract::State(id),
        None => Abstract::NotAStructure, // beyond graph height or vocabulary
    }
}

/// Builds a world realizing the abstract state on the platform, with
/// per-block pose jitter up to `jitter` times the matching tolerance.
/// Labels stay exact by construction for any jitter below 1.
pub fn generate_instance<R: Rng>(
    state: &AbstractState,
    cfg: &EnvConfig,
    jitter: f32,
    rng: &mut R,
) -> WorldState {
    assert!((0.0..1.0).contains(&jitter), "jitter must stay sub-tolerance");
    let anchor = cfg.anchor();
    let [left, right] = cfg.slots();
    let mut blocks = Vec::new();
    for (z, layer) in state.layers().iter().enumerate() {
        let z = z as u32;
        let mut place = |kind: BlockKind, target: (f32, f32), rng: &mut R| {
            let tol = match_tol(kind, cfg) * jitter;
            let (dx, dy) = jitter_offset(tol, rng);
            Block::new(kind, target.0 + dx, target.1 + dy, z)
        };
        match layer {
            Layer::Brick => blocks.push(place(BlockKind::Brick, anchor, rng)),
            Layer::Roof => blocks.push(place(BlockKind::Roof, anchor, rng)),
            Layer::SmallRoof => blocks.push(place(BlockKind::SmallRoof, anchor, rng)),
            Layer::CubeHalf | Layer::CylinderHalf => {
                let kind = if *layer == Layer::CubeHalf {
                    BlockKind::Cube
                } else {
                    BlockKind::Cylinder
                };
                let slot = if rng.random_bool(0.5) { left } else { right };
                blocks.push(place(kind, slot, rng));
            }
            Layer::CubePair | Layer::CylinderPair => {
                let kind = if *layer == Layer::CubePair {
                    BlockKind::Cube
                } else {
                    BlockKind::Cylinder
                };
                // resample until the pair does not interpenetrate
                loop {
                    let a = place(kind, left, rng);
                    let b = place(kind, right, rng);
                    if a.overlap_area(&b, cfg.cube) <= 0.0 {
                        blocks.push(a);
                        blocks.push(b);
                        break;
                    }
                }
            }
        }
    }
    WorldState::new(blocks)
}

fn jitter_offset<R: Rng>(radius: f32, rng: &mut R) -> (f32, f32) {
    if radius <= 0.0 {
        return (0.0, 0.0);
    }
    loop {
        let dx = rng.random_range(-radius..=radius);
        let dy = rng.random_range(-radius..=radius);
        if dx * dx + dy * dy <= radius * radius {
            return (dx, dy);
        }
    }
}

/// Fraction of the goal's blocks present in the deepest correctly built
/// prefix of `achieved`. A half layer matching the goal's pair layer
/// counts its single block.
pub fn progress(goal: &AbstractState, achieved: &AbstractState) -> f64 {
    let total = goal.blocks();
    if total == 0 {
        return 1.0;
    }
    let mut blocks = 0usize;
    let mut i = 0;
    while i < goal.layers().len()
        && i < achieved.layers().len()
        && goal.layers()[i] == achieved.layers()[i]
    {
        blocks += goal.layers()[i].blocks();
        i += 1;
    }
    if i < goal.layers().len() && i < achieved.layers().len() {
        if let Some(full) = achieved.layers()[i].completion() {
            if full == goal.layers()[i] {
                blocks += 1;
            }
        }
    }
    blocks as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ObjectSet;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (GoalGraph, EnvConfig) {
        (GoalGraph::build(5, ObjectSet::Base), EnvConfig::default())
    }

    fn id_of(graph: &GoalGraph, code: &str) -> StateId {
        graph.id_of(&AbstractState::parse(code).unwrap()).unwrap()
    }

    #[test]
    fn empty_platform_is_clear_state() {
        let (graph, cfg) = setup();
        let world = WorldState::new(vec![Block::new(BlockKind::Cube, 5.0, 5.0, 0)]);
        assert_eq!(f_abstract(&world, &graph, &cfg), Abstract::State(graph.empty_id()));
        assert!(graph.state(graph.empty_id()).is_clear());
    }

    #[test]
    fn brick_roof_tower_matches() {
        let (graph, cfg) = setup();
        let world = WorldState::new(vec![
            Block::new(BlockKind::Brick, 24.0, 24.0, 0),
            Block::new(BlockKind::Roof, 24.0, 24.0, 1),
        ]);
        assert_eq!(f_abstract(&world, &graph, &cfg), Abstract::State(id_of(&graph, "B-R")));
    }

    #[test]
    fn half_layer_accepts_either_slot() {
        let (graph, cfg) = setup();
        for slot in EnvConfig::default().slots() {
            let world = WorldState::new(vec![Block::new(BlockKind::Cube, slot.0, slot.1, 0)]);
            assert_eq!(f_abstract(&world, &graph, &cfg), Abstract::State(id_of(&graph, "C1")));
        }
    }

    #[test]
    fn misaligned_stack_is_not_a_structure() {
        let (graph, cfg) = setup();
        // cube beyond its matching tolerance of either slot
        let world = WorldState::new(vec![Block::new(BlockKind::Cube, 24.0, 24.0, 0)]);
        assert_eq!(f_abstract(&world, &graph, &cfg), Abstract::NotAStructure);
        // second-level offset beyond tolerance
        let tol = cfg.tau_frac * cfg.cube as f32;
        let world = WorldState::new(vec![
            Block::new(BlockKind::Cube, 21.0, 24.0, 0),
            Block::new(BlockKind::Cube, 21.0 + tol + 1.0, 24.0, 1),
        ]);
        assert_eq!(f_abstract(&world, &graph, &cfg), Abstract::NotAStructure);
    }

    #[test]
    fn scattered_blocks_and_hand_do_not_matter() {
        let (graph, cfg) = setup();
        let mut world = WorldState::new(vec![
            Block::new(BlockKind::Brick, 24.0, 24.0, 0),
            Block::new(BlockKind::Cube, 6.0, 6.0, 0),
            Block::new(BlockKind::Roof, 40.0, 40.0, 0),
        ]);
        let before = f_abstract(&world, &graph, &cfg);
        world.held = Some(BlockKind::Cube);
        world.held_crop = Some(crate::nn::tensor::Tensor::zeros(&[1, 4, 4]));
        assert_eq!(f_abstract(&world, &graph, &cfg), before);
        assert_eq!(before, Abstract::State(id_of(&graph, "B")));
    }

    #[test]
    fn instances_round_trip_through_f() {
        let (graph, cfg) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (id, state) in graph.iter() {
            for _ in 0..10 {
                let world = generate_instance(state, &cfg, 0.9, &mut rng);
                assert_eq!(
                    f_abstract(&world, &graph, &cfg),
                    Abstract::State(id),
                    "state {state}"
                );
            }
        }
    }

    #[test]
    fn progress_examples() {
        let goal = AbstractState::parse("B-B-R").unwrap();
        assert_eq!(progress(&goal, &AbstractState::parse("B").unwrap()), 1.0 / 3.0);
        assert_eq!(progress(&goal, &goal), 1.0);
        assert_eq!(progress(&goal, &AbstractState::empty()), 0.0);
        let cc_goal = AbstractState::parse("CC-R").unwrap();
        assert_eq!(progress(&cc_goal, &AbstractState::parse("C1").unwrap()), 1.0 / 3.0);
        // wrong first layer earns nothing
        assert_eq!(progress(&goal, &AbstractState::parse("CC").unwrap()), 0.0);
    }
}
