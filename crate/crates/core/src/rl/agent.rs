//! Double-DQN over spatial Q-maps: action selection with annealed
//! exploration, target computation, and the optimization step.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ExperimentConfig, RlConfig};
use crate::error::Result;
use crate::graph::{Abstract, StateId};
use crate::nn::checkpoint::{load_net_blobs, net_blobs, read_blobs, write_blobs};
use crate::nn::optim::{Adam, Net};
use crate::nn::tensor::Tensor;
use crate::sim::{Action, ActionKind, Observation};

use super::qnet::{QInput, QNet};
use super::replay::{Experience, ReplayBuffer};
use super::schedule::EpsilonSchedule;

/// Independent deterministic stream for a named role under one seed.
pub fn role_rng(seed: u64, role: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ role.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub const ROLE_INIT: u64 = 1;
pub const ROLE_POLICY: u64 = 2;
pub const ROLE_TRAIN: u64 = 3;
pub const ROLE_EPISODE: u64 = 4;
pub const ROLE_EVAL: u64 = 5;
pub const ROLE_META: u64 = 6;

/// One-hot encodings for a batch of (goal, current) conditioning pairs.
/// The current encoding reserves slot 0 for the off-grammar sentinel.
pub fn encode_onehots(
    capacity: usize,
    pairs: &[(StateId, Abstract)],
) -> (Tensor<f32>, Tensor<f32>) {
    let n = pairs.len();
    let mut goal = Tensor::zeros(&[n, capacity]);
    let mut cur = Tensor::zeros(&[n, capacity + 1]);
    for (i, (g, c)) in pairs.iter().enumerate() {
        assert!(g.index() < capacity, "goal id beyond one-hot capacity");
        goal.data_mut()[i * capacity + g.index()] = 1.0;
        let slot = match c {
            Abstract::NotAStructure => 0,
            Abstract::State(id) => {
                assert!(id.index() < capacity, "state id beyond one-hot capacity");
                1 + id.index()
            }
        };
        cur.data_mut()[i * (capacity + 1) + slot] = 1.0;
    }
    (goal, cur)
}

fn single_input(
    capacity: usize,
    obs: &Observation,
    goal: StateId,
    current: Abstract,
) -> QInput<f32> {
    let (c, h, w) = obs.img.dims3();
    let (hc, hh, hw) = obs.hand.dims3();
    let img = Tensor::from_vec(&[1, c, h, w], obs.img.data().to_vec());
    let hand = Tensor::from_vec(&[1, hc, hh, hw], obs.hand.data().to_vec());
    let (goal_t, cur_t) = encode_onehots(capacity, &[(goal, current)]);
    QInput { img, hand, goal: goal_t, cur: cur_t }
}

/// Pure argmax of the Q-map channel selected by the holding flag; ties
/// break toward the lowest flat index.
pub fn greedy_action(
    qnet: &mut QNet<f32>,
    capacity: usize,
    obs: &Observation,
    goal: StateId,
    current: Abstract,
) -> Action {
    let (_, h, w) = obs.img.dims3();
    let q = qnet.forward(&single_input(capacity, obs, goal, current));
    let ch = usize::from(obs.holding);
    let map = &q.data()[ch * h * w..(ch + 1) * h * w];
    let mut best = 0;
    for (i, v) in map.iter().enumerate().skip(1) {
        if *v > map[best] {
            best = i;
        }
    }
    let (v, u) = (best / w, best % w);
    if obs.holding {
        Action::place(u, v)
    } else {
        Action::pick(u, v)
    }
}

/// Double-DQN targets from precomputed next-state Q-maps: the online
/// network chooses the argmax pixel, the target network values it.
pub fn double_dqn_targets(
    online_next: &Tensor<f32>,
    target_next: &Tensor<f32>,
    next_holding: &[bool],
    rewards: &[i32],
    terminals: &[bool],
    gamma: f64,
) -> Vec<f32> {
    let (n, _, h, w) = online_next.dims4();
    let hw = h * w;
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let r = rewards[i] as f64;
        if terminals[i] {
            ys.push(r as f32);
            continue;
        }
        let ch = usize::from(next_holding[i]);
        let base = (i * 2 + ch) * hw;
        let online = &online_next.data()[base..base + hw];
        let mut best = 0;
        for (j, v) in online.iter().enumerate().skip(1) {
            if *v > online[best] {
                best = j;
            }
        }
        let bootstrap = target_next.data()[base + best] as f64;
        ys.push((r + gamma * bootstrap) as f32);
    }
    ys
}

/// Everything the learning side owns: online/target networks, optimizer,
/// replay, schedules and counters. Environments stay outside.
pub struct Trainer {
    pub qnet: QNet<f32>,
    pub target: QNet<f32>,
    pub opt: Adam<f32>,
    pub replay: ReplayBuffer,
    pub rl: RlConfig,
    pub eps: EpsilonSchedule,
    pub policy_rng: ChaCha8Rng,
    pub train_rng: ChaCha8Rng,
    pub env_step: u64,
    pub opt_step: u64,
    pub episode: u64,
    capacity: usize,
    /// Shaped rewards fall outside the sparse range; skip flagging then.
    flag_q_range: bool,
    loss_sum: f64,
    loss_n: u64,
    q_flags: u64,
    train_accum: f64,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, capacity: usize) -> Trainer {
        let seed = cfg.run.seed;
        let mut init_rng = role_rng(seed, ROLE_INIT);
        let qnet = QNet::new(
            cfg.net.base_channels,
            cfg.net.embed,
            capacity,
            cfg.env.inhand,
            cfg.env.obs_norm() as f64,
            &mut init_rng,
        );
        let target = qnet.clone();
        let flag_q_range = cfg.rl.method != crate::config::Method::Shaped;
        Trainer {
            target,
            qnet,
            opt: Adam::new(cfg.rl.lr, cfg.rl.grad_clip),
            replay: ReplayBuffer::new(cfg.rl.replay),
            rl: cfg.rl.clone(),
            eps: EpsilonSchedule {
                start: cfg.rl.eps_start,
                end: cfg.rl.eps_end,
                steps: cfg.rl.eps_anneal,
            },
            policy_rng: role_rng(seed, ROLE_POLICY),
            train_rng: role_rng(seed, ROLE_TRAIN),
            env_step: 0,
            opt_step: 0,
            episode: 0,
            capacity,
            flag_q_range,
            loss_sum: 0.0,
            loss_n: 0,
            q_flags: 0,
            train_accum: 0.0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn epsilon(&self) -> f64 {
        self.eps.value(self.env_step)
    }

    /// Grows the conditioning one-hots to a larger abstract space. The
    /// fresh projection columns initialize from the given rng.
    pub fn grow_capacity<R: Rng>(&mut self, new_capacity: usize, rng: &mut R) {
        assert!(new_capacity >= self.capacity);
        let extra = new_capacity - self.capacity;
        if extra > 0 {
            self.qnet.grow_capacity(extra, rng);
            self.target.grow_capacity(extra, rng);
            self.capacity = new_capacity;
        }
    }

    /// Epsilon-greedy with Q-map noise: with probability eps a uniform
    /// pixel; otherwise the argmax after adding zero-mean Gaussian noise
    /// scaled by eps, the configured factor and the map's own std. The
    /// pick/place tag always follows the holding flag.
    pub fn select_action(
        &mut self,
        obs: &Observation,
        goal: StateId,
        current: Abstract,
    ) -> Action {
        let eps = self.epsilon();
        let (_, h, w) = obs.img.dims3();
        let explore: f64 = self.policy_rng.random();
        if explore < eps {
            let u = self.policy_rng.random_range(0..w);
            let v = self.policy_rng.random_range(0..h);
            return if obs.holding { Action::place(u, v) } else { Action::pick(u, v) };
        }
        let q = self.qnet.forward(&single_input(self.capacity, obs, goal, current));
        let ch = usize::from(obs.holding);
        let mut map: Vec<f32> = q.data()[ch * h * w..(ch + 1) * h * w].to_vec();
        if eps > 0.0 && self.rl.noise_scale > 0.0 {
            let mean = map.iter().map(|v| *v as f64).sum::<f64>() / map.len() as f64;
            let var = map.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>()
                / map.len() as f64;
            let std = eps * self.rl.noise_scale * var.sqrt();
            if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("valid std");
                for v in map.iter_mut() {
                    *v += normal.sample(&mut self.policy_rng) as f32;
                }
            }
        }
        let mut best = 0;
        for (i, v) in map.iter().enumerate().skip(1) {
            if *v > map[best] {
                best = i;
            }
        }
        let (v, u) = (best / w, best % w);
        if obs.holding {
            Action::place(u, v)
        } else {
            Action::pick(u, v)
        }
    }

    /// Records a transition and runs the configured number of
    /// optimization steps once warmup is over.
    pub fn observe(&mut self, e: Experience) {
        self.replay.push(e);
        self.env_step += 1;
        if self.replay.len() >= self.rl.warmup.max(self.rl.batch) {
            self.train_accum += self.rl.train_ratio;
            while self.train_accum >= 1.0 {
                self.train_step();
                self.train_accum -= 1.0;
            }
        }
    }

    fn batch_inputs(&self, idx: &[usize], next: bool) -> (QInput<f32>, Vec<bool>) {
        let n = idx.len();
        let first = self.replay.get(idx[0]);
        let (_, h, w) = first.obs.img.dims3();
        let (_, ih, iw) = first.obs.hand.dims3();
        let mut img = Tensor::zeros(&[n, 1, h, w]);
        let mut hand = Tensor::zeros(&[n, 1, ih, iw]);
        let mut pairs = Vec::with_capacity(n);
        let mut holding = Vec::with_capacity(n);
        for (i, &k) in idx.iter().enumerate() {
            let e = self.replay.get(k);
            let (obs, cur) =
                if next { (&e.next_obs, e.next_current) } else { (&e.obs, e.current) };
            img.data_mut()[i * h * w..(i + 1) * h * w].copy_from_slice(obs.img.data());
            hand.data_mut()[i * ih * iw..(i + 1) * ih * iw].copy_from_slice(obs.hand.data());
            pairs.push((e.goal, cur));
            holding.push(obs.holding);
        }
        let (goal, cur) = encode_onehots(self.capacity, &pairs);
        (QInput { img, hand, goal, cur }, holding)
    }

    /// One Huber/Adam step on a uniform batch; hard-copies the target
    /// network every `target_update` optimization steps. Gradients flow
    /// only through the chosen action pixels.
    pub fn train_step(&mut self) -> f64 {
        let idx = self.replay.sample_indices(self.rl.batch, &mut self.train_rng);
        let (next_in, next_holding) = self.batch_inputs(&idx, true);
        let online_next = self.qnet.forward(&next_in);
        let target_next = self.target.forward(&next_in);
        let rewards: Vec<i32> = idx.iter().map(|&k| self.replay.get(k).reward).collect();
        let terminals: Vec<bool> = idx.iter().map(|&k| self.replay.get(k).terminal).collect();
        let ys = double_dqn_targets(
            &online_next,
            &target_next,
            &next_holding,
            &rewards,
            &terminals,
            self.rl.gamma,
        );

        let (cur_in, _) = self.batch_inputs(&idx, false);
        let q = self.qnet.forward(&cur_in);
        let picks: Vec<(usize, usize, usize)> = idx
            .iter()
            .map(|&k| {
                let a = self.replay.get(k).action;
                (usize::from(a.kind == ActionKind::Place), a.v, a.u)
            })
            .collect();
        if self.flag_q_range {
            let (_, _, h, w) = q.dims4();
            let lo = -(self.rl.m as f64) - self.rl.q_flag_slack;
            let hi = self.rl.q_flag_slack;
            for (i, &(ch, v, u)) in picks.iter().enumerate() {
                let val = q.data()[((i * 2 + ch) * h + v) * w + u] as f64;
                if val < lo || val > hi {
                    self.q_flags += 1;
                }
            }
        }
        let (loss, dq) = crate::nn::ops::huber_at_actions(&q, &picks, &ys);
        self.qnet.zero_grads();
        self.qnet.backward(&dq);
        self.opt.step(&mut self.qnet);
        self.opt_step += 1;
        if self.opt_step % self.rl.target_update == 0 {
            self.target = self.qnet.clone();
        }
        self.loss_sum += loss;
        self.loss_n += 1;
        loss
    }

    /// Mean loss and range-flag count since the last call.
    pub fn take_stats(&mut self) -> (f64, u64) {
        let loss = if self.loss_n > 0 { self.loss_sum / self.loss_n as f64 } else { 0.0 };
        let flags = self.q_flags;
        self.loss_sum = 0.0;
        self.loss_n = 0;
        self.q_flags = 0;
        (loss, flags)
    }

    /// Serializes online/target parameters and optimizer state.
    pub fn save_checkpoint<W: Write>(&mut self, out: &mut W) -> Result<()> {
        let mut blobs: Vec<(String, Tensor<f32>)> = Vec::new();
        for (name, t) in net_blobs(&mut self.qnet) {
            blobs.push((format!("q.{name}"), t));
        }
        for (name, t) in net_blobs(&mut self.target) {
            blobs.push((format!("target.{name}"), t));
        }
        let mut names = Vec::new();
        self.qnet.visit_params(&mut |name, _, _| names.push(name.to_string()));
        let (ms, vs) = self.opt.moments();
        for (i, name) in names.iter().enumerate() {
            if i < ms.len() {
                blobs.push((format!("opt.{name}.m"), ms[i].clone()));
                blobs.push((format!("opt.{name}.v"), vs[i].clone()));
            }
        }
        let refs: Vec<(String, &Tensor<f32>)> =
            blobs.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_blobs(out, &refs)
    }

    /// Restores parameters and optimizer state written by
    /// [`Trainer::save_checkpoint`]. `opt_step` comes from the sidecar.
    pub fn load_checkpoint<R: Read>(&mut self, input: &mut R, opt_step: u64) -> Result<()> {
        let blobs = read_blobs::<_, f32>(input)?;
        let q: Vec<(String, Tensor<f32>)> = blobs
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("q.").map(|s| (s.to_string(), t.clone())))
            .collect();
        load_net_blobs(&mut self.qnet, &q)?;
        let tg: Vec<(String, Tensor<f32>)> = blobs
            .iter()
            .filter_map(|(n, t)| n.strip_prefix("target.").map(|s| (s.to_string(), t.clone())))
            .collect();
        load_net_blobs(&mut self.target, &tg)?;
        let mut names = Vec::new();
        self.qnet.visit_params(&mut |name, _, _| names.push(name.to_string()));
        let mut ms = Vec::new();
        let mut vs = Vec::new();
        for name in &names {
            let m = blobs.iter().find(|(n, _)| n == &format!("opt.{name}.m"));
            let v = blobs.iter().find(|(n, _)| n == &format!("opt.{name}.v"));
            match (m, v) {
                (Some((_, m)), Some((_, v))) => {
                    ms.push(m.clone());
                    vs.push(v.clone());
                }
                _ => break,
            }
        }
        if ms.len() == names.len() {
            self.opt.restore(opt_step, ms, vs);
        } else {
            self.opt.restore(opt_step, Vec::new(), Vec::new());
        }
        self.opt_step = opt_step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ddqn_terminal_and_bootstrap_arithmetic() {
        // two samples, 2x2 maps
        let mut online = Tensor::<f32>::zeros(&[2, 2, 2, 2]);
        let mut target = Tensor::<f32>::zeros(&[2, 2, 2, 2]);
        // sample 0: terminal with r=0 -> y = 0
        // sample 1: non-terminal, r=-1, online argmax at pick-map idx 3,
        // target value there = -2 -> y = -3
        online.data_mut()[8 + 3] = 7.0; // sample 1, channel 0, pixel 3
        target.data_mut()[8 + 3] = -2.0;
        target.data_mut()[8] = 5.0; // tempting but not the online argmax
        let ys = double_dqn_targets(
            &online,
            &target,
            &[false, false],
            &[0, -1],
            &[true, false],
            1.0,
        );
        assert_eq!(ys, vec![0.0, -3.0]);
    }

    #[test]
    fn ddqn_decouples_argmax_from_value() {
        // online argmax differs from target argmax; the target's own max
        // must not be used
        let mut online = Tensor::<f32>::zeros(&[1, 2, 1, 2]);
        let mut target = Tensor::<f32>::zeros(&[1, 2, 1, 2]);
        online.data_mut()[0] = 1.0; // online prefers pixel 0
        target.data_mut()[0] = -1.0;
        target.data_mut()[1] = 10.0; // target prefers pixel 1
        let ys = double_dqn_targets(&online, &target, &[false], &[0], &[false], 1.0);
        assert_eq!(ys, vec![-1.0]);
    }

    #[test]
    fn role_rngs_are_independent_and_reproducible() {
        let mut a1 = role_rng(42, ROLE_POLICY);
        let mut a2 = role_rng(42, ROLE_POLICY);
        let mut b = role_rng(42, ROLE_TRAIN);
        let x1: u64 = a1.random();
        let x2: u64 = a2.random();
        let y: u64 = b.random();
        assert_eq!(x1, x2);
        assert_ne!(x1, y);
    }

    #[test]
    fn onehots_encode_goal_current_and_sentinel() {
        let (g, c) = encode_onehots(
            4,
            &[(StateId(2), Abstract::State(StateId(0))), (StateId(1), Abstract::NotAStructure)],
        );
        assert_eq!(g.shape(), &[2, 4]);
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(g.data()[2], 1.0);
        assert_eq!(c.data()[1], 1.0); // slot 1 = state id 0
        assert_eq!(g.data()[4 + 1], 1.0);
        assert_eq!(c.data()[5], 1.0); // sentinel slot of sample 1
    }
}
