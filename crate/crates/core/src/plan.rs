//! Shortest-path queries over the goal graph, backed by an all-pairs
//! next-hop table built by reverse BFS from every state.

use crate::error::{Error, Result};
use crate::graph::{Abstract, GoalGraph, StateId};

/// Path of abstract states from start (exclusive) to goal (inclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub path: Vec<StateId>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }
}

/// Precomputed distances and next hops; queries are O(1) per step. The
/// table is immutable and freely shareable across threads.
pub struct Planner {
    /// dist[target][state] in edges; u32::MAX = unreachable.
    dist: Vec<Vec<u32>>,
    /// next[target][state]: successor to move to.
    next: Vec<Vec<Option<StateId>>>,
}

const INF: u32 = u32::MAX;

impl Planner {
    pub fn new(graph: &GoalGraph) -> Planner {
        let n = graph.len();
        let mut dist = vec![vec![INF; n]; n];
        let mut next = vec![vec![None; n]; n];
        for t in 0..n {
            let d = &mut dist[t];
            d[t] = 0;
            let mut queue = std::collections::VecDeque::from([StateId(t as u32)]);
            while let Some(s) = queue.pop_front() {
                for p in graph.predecessors(s) {
                    if d[p.index()] == INF {
                        d[p.index()] = d[s.index()] + 1;
                        queue.push_back(*p);
                    }
                }
            }
            for s in 0..n {
                if d[s] == INF || d[s] == 0 {
                    continue;
                }
                // successors are id-sorted, so the first qualifying hop is
                // the lowest-id tie-break
                next[t][s] = graph
                    .successors(StateId(s as u32))
                    .iter()
                    .copied()
                    .find(|c| d[c.index()] + 1 == d[s]);
            }
        }
        Planner { dist, next }
    }

    /// Edge distance, if a path exists.
    pub fn distance(&self, start: StateId, goal: StateId) -> Option<u32> {
        let d = self.dist[goal.index()][start.index()];
        (d != INF).then_some(d)
    }

    /// Minimum-edge-count path; deterministic (lowest-id tie-break).
    pub fn shortest_path(&self, start: StateId, goal: StateId) -> Result<Plan> {
        if start == goal {
            return Ok(Plan { path: Vec::new() });
        }
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            let Some(hop) = self.next[goal.index()][cur.index()] else {
                return Err(Error::Unreachable);
            };
            path.push(hop);
            if hop == goal {
                return Ok(Plan { path });
            }
            cur = hop;
        }
    }

    /// First subgoal on the shortest path from the current abstract state
    /// to the end goal. Off-grammar states and dead ends are unreachable,
    /// which callers treat as a plan break.
    pub fn get_next_subgoal(&self, current: Abstract, end_goal: StateId) -> Result<StateId> {
        let cur = match current {
            Abstract::State(id) => id,
            Abstract::NotAStructure => return Err(Error::Unreachable),
        };
        if cur == end_goal {
            return Ok(end_goal);
        }
        self.next[end_goal.index()][cur.index()].ok_or(Error::Unreachable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ObjectSet;
    use crate::graph::AbstractState;

    fn setup() -> (GoalGraph, Planner) {
        let g = GoalGraph::build(5, ObjectSet::Base);
        let p = Planner::new(&g);
        (g, p)
    }

    fn id(g: &GoalGraph, code: &str) -> StateId {
        g.id_of(&AbstractState::parse(code).unwrap()).unwrap()
    }

    #[test]
    fn start_equals_goal_gives_empty_plan() {
        let (g, p) = setup();
        let s = id(&g, "B-R");
        assert!(p.shortest_path(s, s).unwrap().is_empty());
    }

    #[test]
    fn path_to_cc_b_r_is_the_block_count() {
        let (g, p) = setup();
        let goal = id(&g, "CC-B-R");
        let plan = p.shortest_path(g.empty_id(), goal).unwrap();
        let codes: Vec<String> = plan.path.iter().map(|s| g.state(*s).to_string()).collect();
        assert_eq!(codes, vec!["C1", "CC", "CC-B", "CC-B-R"]);
        assert_eq!(plan.len(), g.state(goal).blocks());
    }

    #[test]
    fn roofed_states_are_dead_ends() {
        let (g, p) = setup();
        assert!(matches!(
            p.shortest_path(id(&g, "B-R"), id(&g, "CC")),
            Err(Error::Unreachable)
        ));
    }

    #[test]
    fn next_subgoal_walks_the_path() {
        let (g, p) = setup();
        let end = id(&g, "B-B");
        let first = p.get_next_subgoal(Abstract::State(g.empty_id()), end).unwrap();
        assert_eq!(g.state(first).to_string(), "B");
        // one edge away returns the goal itself
        assert_eq!(p.get_next_subgoal(Abstract::State(first), end).unwrap(), end);
        // off-grammar breaks the plan
        assert!(matches!(
            p.get_next_subgoal(Abstract::NotAStructure, end),
            Err(Error::Unreachable)
        ));
    }

    #[test]
    fn all_end_goal_paths_have_block_count_length() {
        let (g, p) = setup();
        for &goal in g.end_goals() {
            let plan = p.shortest_path(g.empty_id(), goal).unwrap();
            assert_eq!(plan.len(), g.state(goal).blocks(), "goal {}", g.state(goal));
            // iterating next_subgoal reaches the goal in exactly len calls
            let mut cur = g.empty_id();
            let mut hops = 0;
            while cur != goal {
                cur = p.get_next_subgoal(Abstract::State(cur), goal).unwrap();
                hops += 1;
                assert!(hops <= plan.len(), "next_subgoal diverged");
            }
            assert_eq!(hops, plan.len());
        }
    }

    #[test]
    fn queries_are_fast_after_precompute() {
        let (g, p) = setup();
        let goals: Vec<StateId> = g.end_goals().to_vec();
        let t0 = std::time::Instant::now();
        let mut acc = 0u64;
        for rep in 0..1000u64 {
            let goal = goals[(rep as usize) % goals.len()];
            let hop = p.get_next_subgoal(Abstract::State(g.empty_id()), goal).unwrap();
            acc += hop.0 as u64;
        }
        assert!(acc > 0);
        assert!(t0.elapsed().as_millis() < 1000, "1000 queries should take well under 1s");
    }
}
