//! h-DQN baseline: a learned meta-controller picks subgoals from the
//! full abstract set; the low level is the same subgoal-policy machinery
//! as the planned method, just conditioned on the meta's choice.

use rand::Rng;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::graph::{Abstract, StateId};
use crate::metrics::RunSink;
use crate::nn::ops::{huber_at_actions, Linear, Relu};
use crate::nn::optim::{Adam, Net};
use crate::nn::tensor::Tensor;
use crate::rl::{
    encode_onehots, execute_subgoal, greedy_action, role_rng, MethodState, QNet, TrainRun,
    ROLE_META,
};

/// Two-layer MLP over (current, end-goal) one-hots scoring every
/// abstract state as a candidate subgoal.
pub struct MetaNet {
    l1: Linear<f32>,
    r: Relu<f32>,
    l2: Linear<f32>,
}

impl MetaNet {
    fn new<R: Rng>(capacity: usize, hidden: usize, n_actions: usize, rng: &mut R) -> MetaNet {
        MetaNet {
            l1: Linear::new(2 * capacity + 1, hidden, rng),
            r: Relu::new(),
            l2: Linear::new(hidden, n_actions, rng),
        }
    }

    fn forward(&mut self, x: &Tensor<f32>) -> Tensor<f32> {
        let h = self.r.forward(self.l1.forward(x));
        self.l2.forward(&h)
    }

    fn backward(&mut self, dy: &Tensor<f32>) {
        let dh = self.l2.backward(dy);
        self.l1.backward(&self.r.backward(dh));
    }
}

impl Clone for MetaNet {
    fn clone(&self) -> Self {
        MetaNet { l1: self.l1.clone(), r: Relu::new(), l2: self.l2.clone() }
    }
}

impl Net<f32> for MetaNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f32>, &mut Tensor<f32>)) {
        f("l1.w", &mut self.l1.w, &mut self.l1.gw);
        f("l1.b", &mut self.l1.b, &mut self.l1.gb);
        f("l2.w", &mut self.l2.w, &mut self.l2.gw);
        f("l2.b", &mut self.l2.b, &mut self.l2.gb);
    }
}

#[derive(Clone)]
struct MetaExp {
    cur: Abstract,
    end: StateId,
    action: u32,
    reward: i32,
    next: Abstract,
    terminal: bool,
}

/// Meta-level Q-learner: one transition per subgoal attempt, gamma 1,
/// its own replay and target copy.
pub struct MetaController {
    net: MetaNet,
    target: MetaNet,
    opt: Adam<f32>,
    replay: Vec<MetaExp>,
    write: usize,
    rng: ChaChaRng,
    opt_step: u64,
    capacity: usize,
    n_actions: usize,
    batch: usize,
    target_update: u64,
    gamma: f64,
    replay_cap: usize,
}

type ChaChaRng = rand_chacha::ChaCha8Rng;

impl MetaController {
    pub fn new(cfg: &ExperimentConfig, n_states: usize) -> MetaController {
        let mut rng = role_rng(cfg.run.seed, ROLE_META);
        let capacity = n_states;
        let net = MetaNet::new(capacity, cfg.rl.hdqn_hidden, n_states, &mut rng);
        MetaController {
            target: net.clone(),
            net,
            opt: Adam::new(cfg.rl.lr * 10.0, cfg.rl.grad_clip),
            replay: Vec::new(),
            write: 0,
            rng,
            opt_step: 0,
            capacity,
            n_actions: n_states,
            batch: cfg.rl.batch,
            target_update: cfg.rl.target_update,
            gamma: cfg.rl.gamma,
            replay_cap: cfg.rl.hdqn_replay,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn encode(&self, pairs: &[(StateId, Abstract)]) -> Tensor<f32> {
        let (goal, cur) = encode_onehots(self.capacity, pairs);
        let n = pairs.len();
        let gw = self.capacity;
        let cw = self.capacity + 1;
        let mut x = Tensor::zeros(&[n, gw + cw]);
        for i in 0..n {
            x.data_mut()[i * (gw + cw)..i * (gw + cw) + gw]
                .copy_from_slice(&goal.data()[i * gw..(i + 1) * gw]);
            x.data_mut()[i * (gw + cw) + gw..(i + 1) * (gw + cw)]
                .copy_from_slice(&cur.data()[i * cw..(i + 1) * cw]);
        }
        x
    }

    /// Epsilon-greedy subgoal id.
    pub fn select(&mut self, cur: Abstract, end: StateId, eps: f64) -> u32 {
        let explore: f64 = self.rng.random();
        if explore < eps {
            return self.rng.random_range(0..self.n_actions as u32);
        }
        self.select_greedy(cur, end)
    }

    pub fn select_greedy(&mut self, cur: Abstract, end: StateId) -> u32 {
        let x = self.encode(&[(end, cur)]);
        let q = self.net.forward(&x);
        q.argmax_flat() as u32
    }

    /// Stores a meta transition and trains once enough are buffered.
    pub fn observe(&mut self, cur: Abstract, end: StateId, action: u32, reward: i32, next: Abstract, terminal: bool) {
        let e = MetaExp { cur, end, action, reward, next, terminal };
        if self.replay.len() < self.replay_cap {
            self.replay.push(e);
        } else {
            self.replay[self.write] = e;
            self.write = (self.write + 1) % self.replay_cap;
        }
        if self.replay.len() >= self.batch {
            self.train_step();
        }
    }

    fn train_step(&mut self) {
        let n = self.batch;
        let idx: Vec<usize> =
            (0..n).map(|_| self.rng.random_range(0..self.replay.len())).collect();
        let next_pairs: Vec<(StateId, Abstract)> =
            idx.iter().map(|&k| (self.replay[k].end, self.replay[k].next)).collect();
        let xn = self.encode(&next_pairs);
        let qn = self.target.forward(&xn);
        let mut ys = Vec::with_capacity(n);
        for (row, &k) in idx.iter().enumerate() {
            let e = &self.replay[k];
            let r = e.reward as f64;
            if e.terminal {
                ys.push(r as f32);
            } else {
                let slice = &qn.data()[row * self.n_actions..(row + 1) * self.n_actions];
                let best = slice.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                ys.push((r + self.gamma * best as f64) as f32);
            }
        }
        let cur_pairs: Vec<(StateId, Abstract)> =
            idx.iter().map(|&k| (self.replay[k].end, self.replay[k].cur)).collect();
        let xc = self.encode(&cur_pairs);
        let q = self.net.forward(&xc);
        let q4 = q.reshaped(&[n, self.n_actions, 1, 1]);
        let picks: Vec<(usize, usize, usize)> =
            idx.iter().map(|&k| (self.replay[k].action as usize, 0, 0)).collect();
        let (_loss, dq) = huber_at_actions(&q4, &picks, &ys);
        self.net.zero_grads();
        self.net.backward(&dq.reshaped(&[n, self.n_actions]));
        self.opt.step(&mut self.net);
        self.opt_step += 1;
        if self.opt_step % self.target_update == 0 {
            self.target = self.net.clone();
        }
    }
}

/// One h-DQN episode: meta picks a subgoal, the low level runs for at
/// most m steps, the meta transition records attainment. With
/// `forced_planner` the meta is bypassed and the planner supplies
/// subgoals with the plan-break rule, which reduces the loop to the
/// planned method.
pub fn episode_hdqn(run: &mut TrainRun, sink: &mut dyn RunSink, forced_planner: bool) -> Result<()> {
    let end = run.lambda.sample(&mut run.episode_rng);
    let seed: u64 = run.episode_rng.random();
    run.env.reset(end, seed)?;
    let step0 = run.trainer.env_step;
    let cap_steps = (run.cfg.rl.m * run.graph.state(end).blocks().max(1)) as u64;

    let mut state = std::mem::replace(&mut run.method_state, MethodState::Plain);
    loop {
        let cur = run.env.abstract_state();
        if cur == Abstract::State(end) {
            break;
        }
        let used = run.trainer.env_step - step0;
        if used >= cap_steps {
            break;
        }
        let m = run.cfg.rl.m.min((cap_steps - used) as usize);
        let subgoal = if forced_planner {
            match run.planner.get_next_subgoal(cur, end) {
                Ok(s) => s,
                Err(_) => break,
            }
        } else {
            let MethodState::Hdqn(meta) = &mut state else {
                unreachable!("hdqn episode without meta state")
            };
            StateId(meta.select(cur, end, run.trainer.epsilon()))
        };
        let (reached, _) = execute_subgoal(&mut run.env, &mut run.trainer, subgoal, m, sink);
        if !forced_planner {
            let MethodState::Hdqn(meta) = &mut state else { unreachable!() };
            let next = run.env.abstract_state();
            let terminal = next == Abstract::State(end);
            meta.observe(cur, end, subgoal.0, if reached { 0 } else { -1 }, next, terminal);
        } else if !reached {
            break;
        }
    }
    run.method_state = state;
    run.finish_episode(end, step0, sink);
    Ok(())
}

/// Greedy h-DQN evaluation rollout for one goal.
pub fn eval_episode_hdqn(
    run: &mut TrainRun,
    qnet: &mut QNet<f32>,
    goal: StateId,
    cap_steps: usize,
) -> Result<()> {
    let mut state = std::mem::replace(&mut run.method_state, MethodState::Plain);
    let capacity = run.trainer.capacity();
    let mut used = 0usize;
    loop {
        let cur = run.env.abstract_state();
        if cur == Abstract::State(goal) || used >= cap_steps {
            break;
        }
        let MethodState::Hdqn(meta) = &mut state else {
            unreachable!("hdqn eval without meta state")
        };
        let subgoal = StateId(meta.select_greedy(cur, goal));
        let m = run.cfg.rl.m.min(cap_steps - used);
        let mut reached = false;
        for _ in 0..m {
            let obs = run.env.observe();
            let cur = run.env.abstract_state();
            let a = greedy_action(qnet, capacity, &obs, subgoal, cur);
            run.env.step(a);
            used += 1;
            if run.env.abstract_state() == Abstract::State(subgoal) {
                reached = true;
                break;
            }
        }
        let _ = reached;
    }
    run.method_state = state;
    Ok(())
}
