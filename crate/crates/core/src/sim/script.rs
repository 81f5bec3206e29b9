//! Hand-scripted optimal controller. Given a subgoal one graph edge
//! away it emits the exact PICK then PLACE that traverses the edge in
//! two primitive steps. Used as the learning-free oracle in tests and as
//! a reference executor.

use crate::graph::{Abstract, Layer, StateId};
use crate::sim::{Action, BlockKind, WorldState};

use super::env::Env;

/// Next optimal action toward a subgoal that is exactly one block away
/// from the current abstract state, or `None` when no scripted move
/// applies (already there, off-grammar, or not a single-block edge).
pub fn next_action(env: &Env, subgoal: StateId) -> Option<Action> {
    let graph = env.graph();
    let cur_id = match env.abstract_state() {
        Abstract::State(id) => id,
        Abstract::NotAStructure => return None,
    };
    if cur_id == subgoal {
        return None;
    }
    let cur = graph.state(cur_id).clone();
    let goal = graph.state(subgoal);
    let cfg = env.cfg().clone();

    let (kind, target) = if goal.height() == cur.height() && cur.top().is_some_and(|l| l.is_half())
    {
        // complete the half layer at the free slot
        let kind = match cur.top().unwrap() {
            Layer::CubeHalf => BlockKind::Cube,
            Layer::CylinderHalf => BlockKind::Cylinder,
            _ => return None,
        };
        let top_z = (cur.height() - 1) as u32;
        let [left, right] = cfg.slots();
        let occupied = env
            .world()
            .platform_blocks(&cfg)
            .find(|b| b.z == top_z)
            .map(|b| if (b.x - left.0).abs() <= (b.x - right.0).abs() { 0 } else { 1 })?;
        (kind, if occupied == 0 { right } else { left })
    } else if goal.height() == cur.height() + 1 && goal.layers()[..cur.height()] == *cur.layers() {
        let anchor = cfg.anchor();
        let [left, _] = cfg.slots();
        match goal.top().unwrap() {
            Layer::Brick => (BlockKind::Brick, anchor),
            Layer::Roof => (BlockKind::Roof, anchor),
            Layer::SmallRoof => (BlockKind::SmallRoof, anchor),
            Layer::CubeHalf => (BlockKind::Cube, left),
            Layer::CylinderHalf => (BlockKind::Cylinder, left),
            // pair layers take two blocks; not a single edge
            _ => return None,
        }
    } else {
        return None;
    };

    match env.world().held {
        Some(held) if held == kind => {
            Some(Action::place(target.0.round() as usize, target.1.round() as usize))
        }
        Some(_) => None,
        None => {
            let b = find_spare(env.world(), &cfg, kind)?;
            Some(Action::pick(b.0.round() as usize, b.1.round() as usize))
        }
    }
}

/// Center of some scattered (off-platform, ground-level) block of the
/// requested kind.
fn find_spare(
    world: &WorldState,
    cfg: &crate::config::EnvConfig,
    kind: BlockKind,
) -> Option<(f32, f32)> {
    world
        .blocks
        .iter()
        .find(|b| b.kind == kind && b.z == 0 && !WorldState::on_platform(b, cfg))
        .map(|b| (b.x, b.y))
}
