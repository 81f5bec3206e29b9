//! Goal relabeling for the HER and neighbor-replay baselines. Relabeled
//! copies keep observations untouched (shared via Arc) and always
//! recompute the reward against the new goal.

use rand::Rng;

use crate::graph::{Abstract, GoalGraph};
use crate::rl::Experience;

/// "Future" strategy: for each transition, sample achieved abstract
/// states from later in the episode and relabel them as goals. Off-
/// grammar outcomes are never used as goals. Produces `ratio` relabels
/// per transition.
pub fn her_relabel<R: Rng>(
    episode: &[Experience],
    ratio: usize,
    rng: &mut R,
) -> Vec<Experience> {
    let mut out = Vec::with_capacity(episode.len() * ratio);
    for t in 0..episode.len() {
        let mut made = 0;
        let mut tries = 0;
        while made < ratio && tries < ratio * 8 {
            tries += 1;
            let j = rng.random_range(t..episode.len());
            let Abstract::State(new_goal) = episode[j].next_current else {
                continue;
            };
            let mut e = episode[t].clone();
            e.goal = new_goal;
            let reached = e.next_current == Abstract::State(new_goal);
            e.reward = if reached { 0 } else { -1 };
            e.terminal = reached;
            out.push(e);
            made += 1;
        }
    }
    out
}

/// Like HER, but the relabel goal is a goal-graph successor of an
/// achieved state rather than the achieved state itself.
pub fn neighbor_relabel<R: Rng>(
    episode: &[Experience],
    graph: &GoalGraph,
    ratio: usize,
    rng: &mut R,
) -> Vec<Experience> {
    let mut out = Vec::with_capacity(episode.len() * ratio);
    for t in 0..episode.len() {
        let mut made = 0;
        let mut tries = 0;
        while made < ratio && tries < ratio * 8 {
            tries += 1;
            let j = rng.random_range(t..episode.len());
            let Abstract::State(achieved) = episode[j].next_current else {
                continue;
            };
            let neighbors = graph.successors(achieved);
            if neighbors.is_empty() {
                continue;
            }
            let new_goal = neighbors[rng.random_range(0..neighbors.len())];
            let mut e = episode[t].clone();
            e.goal = new_goal;
            let reached = e.next_current == Abstract::State(new_goal);
            e.reward = if reached { 0 } else { -1 };
            e.terminal = reached;
            out.push(e);
            made += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ObjectSet;
    use crate::graph::{AbstractState, StateId};
    use crate::nn::tensor::Tensor;
    use crate::sim::{Action, Observation};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn obs(tag: f32) -> Arc<Observation> {
        Arc::new(Observation {
            img: Tensor::filled(&[1, 2, 2], tag),
            hand: Tensor::zeros(&[1, 1, 1]),
            holding: false,
        })
    }

    fn episode(graph: &GoalGraph) -> Vec<Experience> {
        // empty -> C1 -> CC, conditioned on CC
        let c1 = graph.id_of(&AbstractState::parse("C1").unwrap()).unwrap();
        let cc = graph.id_of(&AbstractState::parse("CC").unwrap()).unwrap();
        let empty = graph.empty_id();
        let mk = |cur: StateId, next: StateId, t: f32| Experience {
            obs: obs(t),
            current: Abstract::State(cur),
            goal: cc,
            action: Action::pick(0, 0),
            reward: -1,
            next_obs: obs(t + 0.5),
            next_current: Abstract::State(next),
            terminal: false,
        };
        vec![mk(empty, empty, 0.0), mk(empty, c1, 1.0), mk(c1, cc, 2.0)]
    }

    #[test]
    fn her_relabels_achieved_states_with_recomputed_rewards() {
        let graph = GoalGraph::build(2, ObjectSet::Base);
        let ep = episode(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let relabeled = her_relabel(&ep, 4, &mut rng);
        assert_eq!(relabeled.len(), 3 * 4, "ratio x episode length");
        for e in &relabeled {
            let reached = e.next_current == Abstract::State(e.goal);
            assert_eq!(e.reward == 0, reached, "reward recomputed");
            assert_eq!(e.terminal, reached);
        }
        // observations are shared, not copied
        assert!(Arc::ptr_eq(&relabeled[0].obs, &ep[0].obs));
        // relabeling the transition that reached its own next state gives 0
        let last_relabels: Vec<&Experience> =
            relabeled.iter().filter(|e| e.obs.img.data()[0] == 2.0).collect();
        assert!(last_relabels.iter().all(|e| e.reward == 0), "future of the last step is itself");
    }

    #[test]
    fn neighbor_relabels_use_successors_not_achieved() {
        let graph = GoalGraph::build(2, ObjectSet::Base);
        let ep = episode(&graph);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let relabeled = neighbor_relabel(&ep, &graph, 4, &mut rng);
        assert!(!relabeled.is_empty());
        for e in &relabeled {
            // goal must be a successor of some achieved state
            let achieved: Vec<StateId> =
                ep.iter().filter_map(|x| x.next_current.id()).collect();
            assert!(
                achieved.iter().any(|a| graph.successors(*a).contains(&e.goal)),
                "goal {} not a neighbor of any achieved state",
                graph.state(e.goal)
            );
            // never the achieved state itself at the sampled step
            let reached = e.next_current == Abstract::State(e.goal);
            assert_eq!(e.reward == 0, reached);
        }
    }

    #[test]
    fn neighbor_goals_for_single_brick() {
        let graph = GoalGraph::build(5, ObjectSet::Base);
        let b = graph.id_of(&AbstractState::parse("B").unwrap()).unwrap();
        let succ: Vec<String> =
            graph.successors(b).iter().map(|s| graph.state(*s).to_string()).collect();
        assert_eq!(succ.len(), 3);
        for code in ["B-B", "B-R", "B-C1"] {
            assert!(succ.contains(&code.to_string()), "{code} missing from {succ:?}");
        }
    }
}
