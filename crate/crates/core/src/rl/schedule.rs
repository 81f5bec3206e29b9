//! Exploration schedule and the end-goal distribution.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{GoalGraph, StateId};

/// Linear epsilon anneal over environment steps.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, env_step: u64) -> f64 {
        if self.steps == 0 {
            return self.end;
        }
        let t = (env_step as f64 / self.steps as f64).min(1.0);
        self.start + (self.end - self.start) * t
    }
}

/// Weighted distribution over end-goal abstract states.
#[derive(Debug, Clone)]
pub struct GoalDistribution {
    goals: Vec<StateId>,
    cumulative: Vec<f64>,
}

impl GoalDistribution {
    pub fn uniform(goals: Vec<StateId>) -> Result<GoalDistribution> {
        let n = goals.len();
        Self::weighted(goals, vec![1.0; n])
    }

    pub fn weighted(goals: Vec<StateId>, weights: Vec<f64>) -> Result<GoalDistribution> {
        if goals.is_empty() || goals.len() != weights.len() {
            return Err(Error::Config("goal distribution needs matching goals/weights".into()));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("goal weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("goal weights sum to zero".into()));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(GoalDistribution { goals, cumulative })
    }

    /// Uniform over the end-goals of the height-`level` problem class.
    pub fn level(graph: &GoalGraph, level: usize) -> Result<GoalDistribution> {
        let goals = graph.end_goals_at_level(level);
        if goals.is_empty() {
            return Err(Error::Config(format!("no end-goals at level {level}")));
        }
        Self::uniform(goals)
    }

    pub fn goals(&self) -> &[StateId] {
        &self.goals
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> StateId {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c < u);
        self.goals[idx.min(self.goals.len() - 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ObjectSet;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_is_linear_and_monotone() {
        let s = EpsilonSchedule { start: 1.0, end: 0.0, steps: 100 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.5).abs() < 1e-12);
        assert_eq!(s.value(100), 0.0);
        assert_eq!(s.value(1000), 0.0);
        let mut prev = f64::INFINITY;
        for t in 0..200 {
            let v = s.value(t);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn lambda_levels_have_expected_support() {
        let g = GoalGraph::build(5, ObjectSet::Base);
        assert_eq!(GoalDistribution::level(&g, 1).unwrap().goals().len(), 3);
        assert_eq!(GoalDistribution::level(&g, 2).unwrap().goals().len(), 7);
        assert_eq!(GoalDistribution::level(&g, 5).unwrap().goals().len(), 63);
    }

    #[test]
    fn sampling_respects_weights() {
        let g = GoalGraph::build(1, ObjectSet::Base);
        let goals = g.end_goals().to_vec();
        let dist = GoalDistribution::weighted(goals.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(dist.sample(&mut rng), goals[1]);
        }
        assert!(GoalDistribution::weighted(goals, vec![1.0, -1.0, 0.0]).is_err());
    }
}
