//! Run configuration: environment geometry, network size and training
//! hyperparameters. A config plus a seed fully determines a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which block kinds the environment knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectSet {
    /// Cubes, bricks and roofs.
    Base,
    /// Base set plus small roofs and cylinders.
    Extended,
}

/// Training method selector. All methods share the same environment,
/// network core, exploration schedule and evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Uvfa,
    Her,
    Hdqn,
    Shaped,
    Neighbor,
    Curriculum,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Uvfa => "uvfa",
            Method::Her => "her",
            Method::Hdqn => "hdqn",
            Method::Shaped => "shaped",
            Method::Neighbor => "neighbor",
            Method::Curriculum => "curriculum",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "ours" => Method::Ours,
            "uvfa" => Method::Uvfa,
            "her" => Method::Her,
            "hdqn" => Method::Hdqn,
            "shaped" => Method::Shaped,
            "neighbor" => Method::Neighbor,
            "curriculum" => Method::Curriculum,
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        })
    }

    /// Reward range tag recorded in metrics. Shaped reward is the only
    /// method emitting rewards outside {-1, 0}.
    pub fn reward_range(self) -> &'static str {
        match self {
            Method::Shaped => "0..n",
            _ => "-1..0",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Workspace image width/height in pixels.
    pub width: usize,
    pub height: usize,
    /// In-hand crop side length.
    pub inhand: usize,
    /// Cube footprint side; bricks and roofs are twice as wide.
    pub cube: usize,
    /// Height added by one block layer, in heightmap units.
    pub block_height: f32,
    /// Build platform extent.
    pub platform_w: usize,
    pub platform_d: usize,
    /// Extra side-view columns on each side of the platform.
    pub side_margin: usize,
    /// Alignment tolerance as a fraction of the supporting width.
    pub tau_frac: f32,
    /// Minimum supported footprint fraction for a placement to hold.
    pub support_frac: f32,
    /// Maximum structure height in layers.
    pub max_height: usize,
    pub object_set: ObjectSet,
    /// Perlin + blur observation augmentation.
    pub augment: bool,
    /// Attempts when scattering blocks before giving up.
    pub scatter_tries: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            width: 48,
            height: 48,
            inhand: 16,
            cube: 6,
            block_height: 6.0,
            platform_w: 16,
            platform_d: 10,
            side_margin: 2,
            tau_frac: 0.25,
            support_frac: 0.5,
            max_height: 5,
            object_set: ObjectSet::Base,
            augment: false,
            scatter_tries: 4000,
        }
    }
}

impl EnvConfig {
    /// Paper-scale geometry: 90x90 workspace, 24x24 in-hand image.
    pub fn full_scale() -> Self {
        EnvConfig {
            width: 90,
            height: 90,
            inhand: 24,
            cube: 12,
            block_height: 12.0,
            platform_w: 32,
            platform_d: 20,
            side_margin: 4,
            ..EnvConfig::default()
        }
    }

    /// Platform rectangle as [x0, y0, x1, y1) in pixels.
    pub fn platform_rect(&self) -> (f32, f32, f32, f32) {
        let x0 = (self.width - self.platform_w) as f32 / 2.0;
        let y0 = (self.height - self.platform_d) as f32 / 2.0;
        (x0, y0, x0 + self.platform_w as f32, y0 + self.platform_d as f32)
    }

    /// Canonical structure anchor: the platform center.
    pub fn anchor(&self) -> (f32, f32) {
        (self.width as f32 / 2.0, self.height as f32 / 2.0)
    }

    /// Canonical cube slot centers of a pair layer (left, right).
    pub fn slots(&self) -> [(f32, f32); 2] {
        let (ax, ay) = self.anchor();
        let half = self.cube as f32 / 2.0;
        [(ax - half, ay), (ax + half, ay)]
    }

    /// Side-view image size (rows, cols).
    pub fn side_view_dims(&self) -> (usize, usize) {
        let rows = (self.block_height * (self.max_height as f32 + 1.0)).ceil() as usize;
        (rows, self.platform_w + 2 * self.side_margin)
    }

    /// Scale dividing raw heightmap values into roughly [0, 1] for the
    /// networks.
    pub fn obs_norm(&self) -> f32 {
        self.block_height * (self.max_height as f32 + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cube < 2 || self.cube % 2 != 0 {
            return Err(Error::Config("cube footprint must be even and >= 2".into()));
        }
        if self.platform_w < 2 * self.cube || self.platform_d < self.cube {
            return Err(Error::Config("platform smaller than one layer footprint".into()));
        }
        if self.width < self.platform_w + 2 * self.cube || self.height < self.platform_d + 2 * self.cube {
            return Err(Error::Config("workspace leaves no room outside the platform".into()));
        }
        if self.inhand >= self.width || self.inhand >= self.height {
            return Err(Error::Config("in-hand crop must be smaller than the workspace".into()));
        }
        if !(0.0..1.0).contains(&self.tau_frac) {
            return Err(Error::Config("tau_frac must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Channel width of the first encoder stage; deeper stages double it.
    pub base_channels: usize,
    /// Width of the conditioning / in-hand embeddings.
    pub embed: usize,
    /// One-hot size reserved for abstract states; 0 sizes it to the graph.
    pub abstract_capacity: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { base_channels: 8, embed: 32, abstract_capacity: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub method: Method,
    /// Goal distribution: uniform over end-goals up to this height.
    /// Ignored when `goals` is non-empty.
    pub level: usize,
    /// Explicit goal list as layer strings, e.g. ["B-CC-R", "CC-R"].
    pub goals: Vec<String>,
    /// Environment step budget.
    pub budget: u64,
    /// Per-subgoal step cap.
    pub m: usize,
    pub batch: usize,
    pub lr: f64,
    pub replay: usize,
    /// Transitions collected before optimization starts.
    pub warmup: usize,
    /// Optimization steps per environment step.
    pub train_ratio: f64,
    pub gamma: f64,
    /// Hard target-network copy cadence in optimization steps.
    pub target_update: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Env steps over which epsilon anneals linearly.
    pub eps_anneal: u64,
    /// Q-map exploration noise: std = eps * noise_scale * std(map).
    pub noise_scale: f64,
    /// Global gradient norm clip; 0 disables.
    pub grad_clip: f64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Stop once greedy eval success reaches this; 0 never stops early.
    pub stop_success: f64,
    /// Checkpoint cadence in env steps; 0 checkpoints only at exit.
    pub ckpt_every: u64,
    /// Relabels per real transition for HER / neighbor replay.
    pub her_ratio: usize,
    /// Curriculum promotion: success over this many recent episodes...
    pub curriculum_window: usize,
    /// ...must exceed this threshold.
    pub curriculum_threshold: f64,
    pub hdqn_hidden: usize,
    pub hdqn_replay: usize,
    /// Slack around the consistent Q-value range [-m, 0] before a value
    /// counts as out of range in metrics.
    pub q_flag_slack: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            method: Method::Ours,
            level: 1,
            goals: Vec::new(),
            budget: 25_000,
            m: 4,
            batch: 16,
            lr: 1e-4,
            replay: 50_000,
            warmup: 500,
            train_ratio: 1.0,
            gamma: 1.0,
            target_update: 1000,
            eps_start: 1.0,
            eps_end: 0.0,
            eps_anneal: 8000,
            noise_scale: 0.5,
            grad_clip: 10.0,
            eval_every: 1000,
            eval_episodes: 20,
            stop_success: 0.0,
            ckpt_every: 0,
            her_ratio: 4,
            curriculum_window: 100,
            curriculum_threshold: 0.9,
            hdqn_hidden: 64,
            hdqn_replay: 5000,
            q_flag_slack: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Run directory name; empty derives one from method/level/seed.
    pub name: String,
    /// Dump per-step episode traces as newline-delimited JSON.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 1, name: String::new(), trace: false }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub env: EnvConfig,
    pub net: NetConfig,
    pub rl: RlConfig,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml_from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.env.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml_to_string(self)
    }

    /// Hash over the sections that must match for runs to be comparable:
    /// env, net and rl minus the method tag. Seed and run naming are
    /// excluded on purpose.
    pub fn shared_hash(&self) -> u64 {
        let mut probe = self.clone();
        probe.run = RunConfig::default();
        probe.rl.method = Method::Ours;
        fnv1a64(probe.to_toml().as_bytes())
    }
}

/// FNV-1a, fixed forever so hashes are stable across builds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn toml_from_str<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    toml::from_str(s).map_err(|e| e.to_string())
}

fn toml_to_string<T: serde::Serialize>(v: &T) -> String {
    toml::to_string(v).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrip() {
        let cfg = ExperimentConfig::default();
        let s = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&s).unwrap();
        assert_eq!(back.env.width, cfg.env.width);
        assert_eq!(back.rl.batch, cfg.rl.batch);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("[env]\nwidth = 64\nheight = 64\n").unwrap();
        assert_eq!(cfg.env.width, 64);
        assert_eq!(cfg.env.inhand, 16);
        assert_eq!(cfg.rl.m, 4);
    }

    #[test]
    fn shared_hash_ignores_method_and_seed() {
        let mut a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        a.rl.method = Method::Uvfa;
        a.run.seed = 7;
        b.rl.method = Method::Neighbor;
        b.run.seed = 8;
        assert_eq!(a.shared_hash(), b.shared_hash());
        b.rl.lr = 3e-4;
        assert_ne!(a.shared_hash(), b.shared_hash());
    }

    #[test]
    fn geometry_helpers() {
        let env = EnvConfig::default();
        assert_eq!(env.anchor(), (24.0, 24.0));
        assert_eq!(env.slots(), [(21.0, 24.0), (27.0, 24.0)]);
        let (rows, cols) = env.side_view_dims();
        assert_eq!((rows, cols), (36, 20));
        env.validate().unwrap();
        EnvConfig::full_scale().validate().unwrap();
    }
}
