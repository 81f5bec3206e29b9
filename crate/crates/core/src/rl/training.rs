//! The outer training loop: sample an end goal, plan over the goal
//! graph, execute learned subgoal policies along the path, and break the
//! episode as soon as a subgoal is missed. Also the shared evaluation
//! protocol all methods report through.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::graph::{progress, Abstract, AbstractState, GoalGraph, StateId};
use crate::metrics::{MetricsRow, Phase, RunMeta, RunSink, TraceEvent};
use crate::plan::Planner;
use crate::sim::Env;

use super::agent::{greedy_action, role_rng, Trainer, ROLE_EPISODE, ROLE_EVAL};
use super::qnet::QNet;
use super::replay::Experience;
use super::schedule::GoalDistribution;

pub enum RunStatus {
    BudgetDone,
    EarlyStopped,
}

/// Per-goal evaluation aggregate.
#[derive(Debug, Clone)]
pub struct GoalEval {
    pub goal: StateId,
    pub success: f64,
    pub progress: f64,
    pub episodes: usize,
}

pub fn mean_success(evals: &[GoalEval]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    evals.iter().map(|e| e.success).sum::<f64>() / evals.len() as f64
}

pub fn mean_progress(evals: &[GoalEval]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    evals.iter().map(|e| e.progress).sum::<f64>() / evals.len() as f64
}

/// Method-specific bookkeeping carried across episodes.
pub enum MethodState {
    Plain,
    Curriculum(crate::baselines::CurriculumState),
    Hdqn(crate::baselines::MetaController),
}

/// A full training run: config, world, graph machinery and the learner.
pub struct TrainRun {
    pub cfg: ExperimentConfig,
    pub graph: Arc<GoalGraph>,
    pub planner: Arc<Planner>,
    pub lambda: GoalDistribution,
    pub env: Env,
    pub trainer: Trainer,
    pub meta: RunMeta,
    pub episode_rng: ChaCha8Rng,
    pub method_state: MethodState,
    next_eval: u64,
    pub last_eval: Vec<GoalEval>,
}

impl TrainRun {
    /// Builds the graph, environment and learner a config describes.
    pub fn new(cfg: ExperimentConfig) -> Result<TrainRun> {
        let graph = Arc::new(GoalGraph::build(cfg.env.max_height, cfg.env.object_set));
        Self::with_graph(cfg, graph)
    }

    /// Same, but over a caller-supplied (possibly extended) graph.
    pub fn with_graph(cfg: ExperimentConfig, graph: Arc<GoalGraph>) -> Result<TrainRun> {
        cfg.env.validate()?;
        let lambda = if cfg.rl.goals.is_empty() {
            GoalDistribution::level(&graph, cfg.rl.level)?
        } else {
            let mut ids = Vec::new();
            for code in &cfg.rl.goals {
                let state = AbstractState::parse(code)?;
                let id = graph
                    .id_of(&state)
                    .ok_or_else(|| Error::Config(format!("goal `{code}` not in goal graph")))?;
                ids.push(id);
            }
            GoalDistribution::uniform(ids)?
        };
        let capacity = if cfg.net.abstract_capacity == 0 {
            graph.len()
        } else {
            cfg.net.abstract_capacity.max(graph.len())
        };
        let env = Env::new(cfg.env.clone(), graph.clone())?;
        let trainer = Trainer::new(&cfg, capacity);
        let run_id = if cfg.run.name.is_empty() {
            format!("{}-l{}-s{}", cfg.rl.method.as_str(), cfg.rl.level, cfg.run.seed)
        } else {
            cfg.run.name.clone()
        };
        let meta = RunMeta::new(run_id, cfg.shared_hash(), cfg.rl.method);
        let method_state = match cfg.rl.method {
            Method::Curriculum => {
                MethodState::Curriculum(crate::baselines::CurriculumState::new(&cfg, &graph))
            }
            Method::Hdqn => {
                MethodState::Hdqn(crate::baselines::MetaController::new(&cfg, graph.len()))
            }
            _ => MethodState::Plain,
        };
        let episode_rng = role_rng(cfg.run.seed, ROLE_EPISODE);
        let next_eval = cfg.rl.eval_every.max(1);
        let planner = Arc::new(Planner::new(&graph));
        Ok(TrainRun {
            cfg,
            graph,
            planner,
            lambda,
            env,
            trainer,
            meta,
            episode_rng,
            method_state,
            next_eval,
            last_eval: Vec::new(),
        })
    }

    /// Runs episodes until the env-step target, interleaving evaluation
    /// blocks and honoring the early-stop threshold.
    pub fn run_until(&mut self, target: u64, sink: &mut dyn RunSink) -> Result<RunStatus> {
        while self.trainer.env_step < target {
            self.run_episode(sink)?;
            while self.trainer.env_step >= self.next_eval {
                self.next_eval += self.cfg.rl.eval_every.max(1);
                let evals = self.evaluate(self.cfg.rl.eval_episodes)?;
                self.emit_eval_rows(&evals, sink);
                let stop = self.cfg.rl.stop_success;
                let reached = stop > 0.0 && mean_success(&evals) >= stop;
                self.last_eval = evals;
                if reached {
                    return Ok(RunStatus::EarlyStopped);
                }
            }
        }
        Ok(RunStatus::BudgetDone)
    }

    fn emit_eval_rows(&mut self, evals: &[GoalEval], sink: &mut dyn RunSink) {
        let eps = self.trainer.epsilon();
        for e in evals {
            sink.row(
                &self.meta,
                &MetricsRow {
                    phase: Phase::Eval,
                    env_step: self.trainer.env_step,
                    episode: self.trainer.episode,
                    end_goal: e.goal.0 as i64,
                    success: e.success,
                    progress: e.progress,
                    steps: e.episodes as u64,
                    epsilon: eps,
                    mean_loss: 0.0,
                    q_flags: 0,
                },
            );
        }
        sink.row(
            &self.meta,
            &MetricsRow {
                phase: Phase::Eval,
                env_step: self.trainer.env_step,
                episode: self.trainer.episode,
                end_goal: -1,
                success: mean_success(evals),
                progress: mean_progress(evals),
                steps: evals.iter().map(|e| e.episodes as u64).sum(),
                epsilon: eps,
                mean_loss: 0.0,
                q_flags: 0,
            },
        );
    }

    /// One training episode, dispatched by method.
    pub fn run_episode(&mut self, sink: &mut dyn RunSink) -> Result<()> {
        match self.cfg.rl.method {
            Method::Ours => self.episode_ours(sink),
            Method::Hdqn => crate::baselines::episode_hdqn(self, sink, false),
            _ => crate::baselines::episode_flat(self, sink),
        }
    }

    fn episode_ours(&mut self, sink: &mut dyn RunSink) -> Result<()> {
        let end = self.lambda.sample(&mut self.episode_rng);
        let seed: u64 = self.episode_rng.random();
        self.env.reset(end, seed)?;
        let step0 = self.trainer.env_step;
        loop {
            let cur = self.env.abstract_state();
            if cur == Abstract::State(end) {
                break;
            }
            let Ok(next) = self.planner.get_next_subgoal(cur, end) else {
                break; // off-grammar or dead end: plan break
            };
            let (reached, _) =
                execute_subgoal(&mut self.env, &mut self.trainer, next, self.cfg.rl.m, sink);
            if !reached {
                break;
            }
        }
        self.finish_episode(end, step0, sink);
        Ok(())
    }

    /// Emits the per-episode metrics row shared by every method.
    pub(crate) fn finish_episode(&mut self, end: StateId, step0: u64, sink: &mut dyn RunSink) {
        let achieved = self.env.abstract_state();
        let goal_state = self.graph.state(end);
        let success = achieved == Abstract::State(end);
        let prog = match achieved {
            Abstract::State(id) => progress(goal_state, self.graph.state(id)),
            Abstract::NotAStructure => 0.0,
        };
        let (mean_loss, q_flags) = self.trainer.take_stats();
        sink.row(
            &self.meta,
            &MetricsRow {
                phase: Phase::Train,
                env_step: self.trainer.env_step,
                episode: self.trainer.episode,
                end_goal: end.0 as i64,
                success: f64::from(success),
                progress: prog,
                steps: self.trainer.env_step - step0,
                epsilon: self.trainer.epsilon(),
                mean_loss,
                q_flags,
            },
        );
        self.trainer.episode += 1;
    }

    /// Greedy evaluation over the run's goal set: n episodes per goal,
    /// method-appropriate execution, shared success/progress definition.
    pub fn evaluate(&mut self, n: usize) -> Result<Vec<GoalEval>> {
        let goals: Vec<StateId> = self.lambda.goals().to_vec();
        let mut qnet = self.trainer.qnet.clone();
        let mut out = Vec::with_capacity(goals.len());
        let mut eval_rng = role_rng(self.cfg.run.seed, ROLE_EVAL);
        for goal in goals {
            let mut successes = 0.0;
            let mut prog_sum = 0.0;
            for _ in 0..n {
                let seed: u64 = eval_rng.random();
                let (ok, prog) = self.eval_episode(&mut qnet, goal, seed)?;
                successes += f64::from(ok);
                prog_sum += prog;
            }
            out.push(GoalEval {
                goal,
                success: successes / n as f64,
                progress: prog_sum / n as f64,
                episodes: n,
            });
        }
        Ok(out)
    }

    fn eval_episode(
        &mut self,
        qnet: &mut QNet<f32>,
        goal: StateId,
        seed: u64,
    ) -> Result<(bool, f64)> {
        self.env.reset(goal, seed)?;
        let cap_steps = self.cfg.rl.m * self.graph.state(goal).blocks().max(1);
        let capacity = self.trainer.capacity();
        match self.cfg.rl.method {
            Method::Ours => loop {
                let cur = self.env.abstract_state();
                if cur == Abstract::State(goal) {
                    break;
                }
                let Ok(next) = self.planner.get_next_subgoal(cur, goal) else {
                    break;
                };
                let mut reached = false;
                for _ in 0..self.cfg.rl.m {
                    let obs = self.env.observe();
                    let cur = self.env.abstract_state();
                    let a = greedy_action(qnet, capacity, &obs, next, cur);
                    self.env.step(a);
                    if self.env.abstract_state() == Abstract::State(next) {
                        reached = true;
                        break;
                    }
                }
                if !reached {
                    break;
                }
            },
            Method::Hdqn => {
                crate::baselines::eval_episode_hdqn(self, qnet, goal, cap_steps)?;
            }
            _ => {
                self.env.set_goal(goal);
                for _ in 0..cap_steps {
                    let obs = self.env.observe();
                    let cur = self.env.abstract_state();
                    let a = greedy_action(qnet, capacity, &obs, goal, cur);
                    let out = self.env.step(a);
                    if out.reached_goal {
                        break;
                    }
                }
            }
        }
        let achieved = self.env.abstract_state();
        let ok = achieved == Abstract::State(goal);
        let prog = match achieved {
            Abstract::State(id) => progress(self.graph.state(goal), self.graph.state(id)),
            Abstract::NotAStructure => 0.0,
        };
        Ok((ok, prog))
    }
}

/// Runs the subgoal policy for at most `m` steps, recording transitions
/// (and training through the learner). Returns (reached, steps used).
pub fn execute_subgoal(
    env: &mut Env,
    trainer: &mut Trainer,
    subgoal: StateId,
    m: usize,
    sink: &mut dyn RunSink,
) -> (bool, usize) {
    env.set_goal(subgoal);
    if env.abstract_state() == Abstract::State(subgoal) {
        return (true, 0);
    }
    let mut obs = Arc::new(env.observe());
    for t in 0..m {
        let cur = env.abstract_state();
        let action = trainer.select_action(&obs, subgoal, cur);
        let out = env.step(action);
        let next_obs = Arc::new(env.observe());
        let next_cur = env.abstract_state();
        sink.trace(&TraceEvent {
            env_step: trainer.env_step,
            episode: trainer.episode,
            action,
            reward: out.reward,
            abstract_id: next_cur.id(),
        });
        trainer.observe(Experience {
            obs,
            current: cur,
            goal: subgoal,
            action,
            reward: out.reward,
            next_obs: next_obs.clone(),
            next_current: next_cur,
            terminal: out.reached_goal,
        });
        obs = next_obs;
        if out.reached_goal {
            return (true, t + 1);
        }
    }
    (false, m)
}
