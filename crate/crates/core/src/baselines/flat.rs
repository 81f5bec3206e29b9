//! Flat (non-planning) episode loop shared by UVFA, HER, neighbor
//! replay, shaped reward and the sequential curriculum. The policy is
//! conditioned on the sampled end-goal for the whole episode; methods
//! differ only in reward shaping, relabeling, or the goal schedule.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::config::{ExperimentConfig, Method};
use crate::error::Result;
use crate::graph::{Abstract, GoalGraph, StateId};
use crate::metrics::{RunSink, TraceEvent};
use crate::plan::Plan;
use crate::rl::{Experience, MethodState, TrainRun};

use super::relabel::{her_relabel, neighbor_relabel};

/// Reward of the shaped baseline: `+i` when the state equals the i-th
/// (1-based) element of the episode plan, 0 otherwise.
pub fn shaped_reward(plan: &Plan, achieved: Abstract) -> i32 {
    let Abstract::State(id) = achieved else {
        return 0;
    };
    match plan.path.iter().position(|s| *s == id) {
        Some(i) => (i + 1) as i32,
        None => 0,
    }
}

/// Sequential curriculum over end-goal block counts: starts at one-block
/// structures and widens once the rolling success clears the threshold.
pub struct CurriculumState {
    pub level_blocks: usize,
    pub max_blocks: usize,
    window: VecDeque<bool>,
    window_cap: usize,
    threshold: f64,
    height_cap: usize,
}

impl CurriculumState {
    pub fn new(cfg: &ExperimentConfig, graph: &GoalGraph) -> CurriculumState {
        let max_blocks = graph
            .end_goals_at_level(cfg.rl.level)
            .iter()
            .map(|g| graph.state(*g).blocks())
            .max()
            .unwrap_or(1);
        CurriculumState {
            level_blocks: 1,
            max_blocks,
            window: VecDeque::new(),
            window_cap: cfg.rl.curriculum_window,
            threshold: cfg.rl.curriculum_threshold,
            height_cap: cfg.rl.level,
        }
    }

    /// Structures buildable with at most `level_blocks` blocks: complete
    /// or roofed, non-empty, within the height class.
    pub fn goal_set(&self, graph: &GoalGraph) -> Vec<StateId> {
        graph
            .iter()
            .filter(|(_, s)| {
                !s.is_clear()
                    && s.height() <= self.height_cap
                    && s.top().is_some_and(|l| l.is_complete() || l.is_roof())
                    && s.blocks() <= self.level_blocks
            })
            .map(|(id, _)| id)
            .collect()
    }

    /// Records an episode outcome; levels only ever move up.
    pub fn record(&mut self, success: bool) {
        self.window.push_back(success);
        if self.window.len() > self.window_cap {
            self.window.pop_front();
        }
        if self.window.len() == self.window_cap && self.level_blocks < self.max_blocks {
            let rate =
                self.window.iter().filter(|&&b| b).count() as f64 / self.window.len() as f64;
            if rate > self.threshold {
                self.level_blocks += 1;
                self.window.clear();
            }
        }
    }
}

/// One episode of the flat loop. Equivalent to the planned method on
/// single-block goals, where the plan collapses to the end-goal itself.
pub fn episode_flat(run: &mut TrainRun, sink: &mut dyn RunSink) -> Result<()> {
    let method = run.cfg.rl.method;
    let end = match &run.method_state {
        MethodState::Curriculum(cur) => {
            let set = cur.goal_set(&run.graph);
            let pick = run.episode_rng.random_range(0..set.len());
            set[pick]
        }
        _ => run.lambda.sample(&mut run.episode_rng),
    };
    let seed: u64 = run.episode_rng.random();
    run.env.reset(end, seed)?;
    let step0 = run.trainer.env_step;
    let cap_steps = run.cfg.rl.m * run.graph.state(end).blocks().max(1);
    let plan = if method == Method::Shaped {
        Some(run.planner.shortest_path(run.graph.empty_id(), end)?)
    } else {
        None
    };

    run.env.set_goal(end);
    let mut episode: Vec<Experience> = Vec::with_capacity(cap_steps);
    let mut obs = Arc::new(run.env.observe());
    for _ in 0..cap_steps {
        let cur = run.env.abstract_state();
        let action = run.trainer.select_action(&obs, end, cur);
        let out = run.env.step(action);
        let next_obs = Arc::new(run.env.observe());
        let next_cur = run.env.abstract_state();
        let reward = match &plan {
            Some(p) => shaped_reward(p, next_cur),
            None => out.reward,
        };
        let terminal = next_cur == Abstract::State(end);
        let e = Experience {
            obs,
            current: cur,
            goal: end,
            action,
            reward,
            next_obs: next_obs.clone(),
            next_current: next_cur,
            terminal,
        };
        sink.trace(&TraceEvent {
            env_step: run.trainer.env_step,
            episode: run.trainer.episode,
            action,
            reward,
            abstract_id: next_cur.id(),
        });
        episode.push(e.clone());
        run.trainer.observe(e);
        obs = next_obs;
        if terminal {
            break;
        }
    }

    // relabeled copies go straight to replay; they are not env steps
    let ratio = run.cfg.rl.her_ratio;
    match method {
        Method::Her => {
            for e in her_relabel(&episode, ratio, &mut run.trainer.policy_rng) {
                run.trainer.replay.push(e);
            }
        }
        Method::Neighbor => {
            for e in neighbor_relabel(&episode, &run.graph, ratio, &mut run.trainer.policy_rng) {
                run.trainer.replay.push(e);
            }
        }
        _ => {}
    }

    let success = run.env.abstract_state() == Abstract::State(end);
    if let MethodState::Curriculum(cur) = &mut run.method_state {
        cur.record(success);
    }
    run.finish_episode(end, step0, sink);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ObjectSet;
    use crate::graph::AbstractState;
    use crate::plan::Planner;

    #[test]
    fn shaped_reward_indexes_the_plan() {
        let graph = GoalGraph::build(3, ObjectSet::Base);
        let planner = Planner::new(&graph);
        let goal = graph.id_of(&AbstractState::parse("B-B-R").unwrap()).unwrap();
        let plan = planner.shortest_path(graph.empty_id(), goal).unwrap();
        assert_eq!(plan.len(), 3);
        let b = graph.id_of(&AbstractState::parse("B").unwrap()).unwrap();
        let bb = graph.id_of(&AbstractState::parse("B-B").unwrap()).unwrap();
        assert_eq!(shaped_reward(&plan, Abstract::State(b)), 1);
        assert_eq!(shaped_reward(&plan, Abstract::State(bb)), 2);
        assert_eq!(shaped_reward(&plan, Abstract::State(goal)), 3);
        // off-path and off-grammar earn nothing
        let cc = graph.id_of(&AbstractState::parse("CC").unwrap()).unwrap();
        assert_eq!(shaped_reward(&plan, Abstract::State(cc)), 0);
        assert_eq!(shaped_reward(&plan, Abstract::NotAStructure), 0);
        // the empty start state is not part of the path
        assert_eq!(shaped_reward(&plan, Abstract::State(graph.empty_id())), 0);
    }

    #[test]
    fn curriculum_levels_start_at_one_block_and_never_regress() {
        let graph = GoalGraph::build(2, ObjectSet::Base);
        let mut cfg = ExperimentConfig::default();
        cfg.rl.level = 2;
        cfg.rl.curriculum_window = 10;
        let mut cur = CurriculumState::new(&cfg, &graph);
        let level1: Vec<String> =
            cur.goal_set(&graph).iter().map(|s| graph.state(*s).to_string()).collect();
        let mut sorted = level1.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["B", "R"]);
        // failures never promote
        for _ in 0..30 {
            cur.record(false);
        }
        assert_eq!(cur.level_blocks, 1);
        // successes promote once the window clears the threshold
        for _ in 0..10 {
            cur.record(true);
        }
        assert_eq!(cur.level_blocks, 2);
        let level2: Vec<String> =
            cur.goal_set(&graph).iter().map(|s| graph.state(*s).to_string()).collect();
        assert!(level2.contains(&"CC".to_string()));
        assert!(level2.contains(&"B-R".to_string()));
        assert_eq!(cur.max_blocks, 4); // CC-CC
    }
}
