//! Abstract goal space: the layer grammar, its enumeration, and the
//! directed graph whose edges each add a single block.

mod abstraction;
pub mod classifier;

pub use abstraction::{f_abstract, generate_instance, progress, Abstract};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::ObjectSet;
use crate::error::{Error, Result};

/// One horizontal layer of a structure.
///
/// A pair layer (two adjacent cubes or cylinders) occupies the same
/// footprint as a brick. Half layers are the intermediate state after
/// placing the first block of a pair and are only legal on top. Roof
/// layers cannot carry anything and are only legal on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Brick,
    CubePair,
    CubeHalf,
    Roof,
    SmallRoof,
    CylinderPair,
    CylinderHalf,
}

impl Layer {
    pub const fn code(self) -> &'static str {
        match self {
            Layer::Brick => "B",
            Layer::CubePair => "CC",
            Layer::CubeHalf => "C1",
            Layer::Roof => "R",
            Layer::SmallRoof => "SR",
            Layer::CylinderPair => "CY",
            Layer::CylinderHalf => "CY1",
        }
    }

    pub fn parse(code: &str) -> Result<Layer> {
        Ok(match code {
            "B" => Layer::Brick,
            "CC" => Layer::CubePair,
            "C1" => Layer::CubeHalf,
            "R" => Layer::Roof,
            "SR" => Layer::SmallRoof,
            "CY" => Layer::CylinderPair,
            "CY1" => Layer::CylinderHalf,
            other => return Err(Error::Config(format!("unknown layer code `{other}`"))),
        })
    }

    /// Complete layers can carry further layers.
    pub fn is_complete(self) -> bool {
        matches!(self, Layer::Brick | Layer::CubePair | Layer::CylinderPair)
    }

    /// Half layers await their second block.
    pub fn is_half(self) -> bool {
        matches!(self, Layer::CubeHalf | Layer::CylinderHalf)
    }

    pub fn is_roof(self) -> bool {
        matches!(self, Layer::Roof | Layer::SmallRoof)
    }

    /// Number of blocks in the layer.
    pub fn blocks(self) -> usize {
        match self {
            Layer::CubePair | Layer::CylinderPair => 2,
            _ => 1,
        }
    }

    pub fn completion(self) -> Option<Layer> {
        match self {
            Layer::CubeHalf => Some(Layer::CubePair),
            Layer::CylinderHalf => Some(Layer::CylinderPair),
            _ => None,
        }
    }

    /// True when the layer only exists in the extended object set.
    pub fn is_novel(self) -> bool {
        matches!(self, Layer::SmallRoof | Layer::CylinderPair | Layer::CylinderHalf)
    }
}

/// Dense index of an abstract state within a [`GoalGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub u32);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A structure described bottom-up as a sequence of layers. The empty
/// sequence is the clear platform.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct AbstractState {
    layers: Vec<Layer>,
}

impl AbstractState {
    pub fn empty() -> Self {
        AbstractState { layers: Vec::new() }
    }

    /// Builds from layers, enforcing the grammar: half and roof layers
    /// only on top, nothing above a roof.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            let top = i + 1 == layers.len();
            if (l.is_half() || l.is_roof()) && !top {
                return Err(Error::Config(format!(
                    "layer {} ({}) must be the top layer",
                    i,
                    l.code()
                )));
            }
        }
        Ok(AbstractState { layers })
    }

    /// Parses a dash-separated layer string, e.g. "CC-B-R". "empty"
    /// denotes the clear platform.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "empty" {
            return Ok(AbstractState::empty());
        }
        let layers = s.split('-').map(Layer::parse).collect::<Result<Vec<_>>>()?;
        AbstractState::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn height(&self) -> usize {
        self.layers.len()
    }

    /// True when the platform is clear.
    pub fn is_clear(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn blocks(&self) -> usize {
        self.layers.iter().map(|l| l.blocks()).sum()
    }

    pub fn top(&self) -> Option<Layer> {
        self.layers.last().copied()
    }

    pub fn is_roofed(&self) -> bool {
        self.top().is_some_and(|l| l.is_roof())
    }

    pub fn uses_novel_objects(&self) -> bool {
        self.layers.iter().any(|l| l.is_novel())
    }

    fn child(&self, layer: Layer) -> AbstractState {
        let mut layers = self.layers.clone();
        layers.push(layer);
        AbstractState { layers }
    }

    fn completed(&self) -> Option<AbstractState> {
        let top = self.top()?;
        let full = top.completion()?;
        let mut layers = self.layers.clone();
        *layers.last_mut().unwrap() = full;
        Some(AbstractState { layers })
    }

    /// Dead-end test: roofed, or complete at the height limit.
    pub fn is_end_goal(&self, max_height: usize) -> bool {
        if self.is_roofed() {
            return true;
        }
        self.height() == max_height && self.top().is_some_and(|l| l.is_complete())
    }

    /// Canonical ordering key: block count, then height, then layer codes.
    fn sort_key(&self) -> (usize, usize, Vec<Layer>) {
        (self.blocks(), self.height(), self.layers.clone())
    }
}

impl fmt::Display for AbstractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.layers.is_empty() {
            return f.write_str("empty");
        }
        let codes: Vec<&str> = self.layers.iter().map(|l| l.code()).collect();
        f.write_str(&codes.join("-"))
    }
}

/// Layer vocabulary for a given object set.
fn vocab(objects: ObjectSet) -> &'static [Layer] {
    match objects {
        ObjectSet::Base => &[Layer::Brick, Layer::CubeHalf, Layer::Roof],
        ObjectSet::Extended => &[
            Layer::Brick,
            Layer::CubeHalf,
            Layer::Roof,
            Layer::CylinderHalf,
            Layer::SmallRoof,
        ],
    }
}

/// Single-block successor states of `s` under the grammar.
fn expand(s: &AbstractState, max_height: usize, objects: ObjectSet) -> Vec<AbstractState> {
    let mut out = Vec::new();
    match s.top() {
        Some(l) if l.is_roof() => {}
        Some(l) if l.is_half() => out.push(s.completed().unwrap()),
        _ => {
            if s.height() < max_height {
                for &l in vocab(objects) {
                    out.push(s.child(l));
                }
            }
        }
    }
    out
}

/// Enumerated abstract states with single-block-addition edges.
///
/// States carry dense ids assigned in a canonical order (block count,
/// height, layer codes), so two graphs built from the same parameters are
/// identical. [`GoalGraph::extend`] appends states without renumbering
/// existing ones, which keeps trained conditioning vectors valid.
#[derive(Debug, Clone)]
pub struct GoalGraph {
    states: Vec<AbstractState>,
    index: HashMap<AbstractState, StateId>,
    succ: Vec<Vec<StateId>>,
    pred: Vec<Vec<StateId>>,
    end_goals: Vec<StateId>,
    max_height: usize,
    objects: ObjectSet,
}

impl GoalGraph {
    /// Enumerates all legal states up to `max_height` layers.
    pub fn build(max_height: usize, objects: ObjectSet) -> GoalGraph {
        let mut states = enumerate_states(max_height, objects);
        states.sort_by_key(|s| s.sort_key());
        Self::assemble(states, max_height, objects)
    }

    /// Grows a graph to a new object set and/or height. Existing ids are
    /// preserved; new states are appended in canonical order.
    pub fn extend(&self, max_height: usize, objects: ObjectSet) -> GoalGraph {
        let mut states = self.states.clone();
        let mut extra: Vec<AbstractState> = enumerate_states(max_height, objects)
            .into_iter()
            .filter(|s| !self.index.contains_key(s))
            .collect();
        extra.sort_by_key(|s| s.sort_key());
        states.extend(extra);
        Self::assemble(states, max_height, objects)
    }

    fn assemble(states: Vec<AbstractState>, max_height: usize, objects: ObjectSet) -> GoalGraph {
        let index: HashMap<AbstractState, StateId> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), StateId(i as u32)))
            .collect();
        let mut succ = vec![Vec::new(); states.len()];
        let mut pred = vec![Vec::new(); states.len()];
        for (i, s) in states.iter().enumerate() {
            let mut next: Vec<StateId> = expand(s, max_height, objects)
                .into_iter()
                .filter_map(|t| index.get(&t).copied())
                .collect();
            next.sort();
            for t in &next {
                pred[t.index()].push(StateId(i as u32));
            }
            succ[i] = next;
        }
        for p in &mut pred {
            p.sort();
        }
        let end_goals: Vec<StateId> = states
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_clear() && s.is_end_goal(max_height))
            .map(|(i, _)| StateId(i as u32))
            .collect();
        GoalGraph { states, index, succ, pred, end_goals, max_height, objects }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_height(&self) -> usize {
        self.max_height
    }

    pub fn objects(&self) -> ObjectSet {
        self.objects
    }

    pub fn state(&self, id: StateId) -> &AbstractState {
        &self.states[id.index()]
    }

    pub fn id_of(&self, s: &AbstractState) -> Option<StateId> {
        self.index.get(s).copied()
    }

    pub fn empty_id(&self) -> StateId {
        self.id_of(&AbstractState::empty()).expect("empty state enumerated")
    }

    pub fn successors(&self, id: StateId) -> &[StateId] {
        &self.succ[id.index()]
    }

    pub fn predecessors(&self, id: StateId) -> &[StateId] {
        &self.pred[id.index()]
    }

    /// All dead-end states (roofed or complete at max height).
    pub fn end_goals(&self) -> &[StateId] {
        &self.end_goals
    }

    /// End-goals of the height-`level` problem class: roofed states up to
    /// that height plus complete states of exactly that height.
    pub fn end_goals_at_level(&self, level: usize) -> Vec<StateId> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_clear() && s.height() <= level && s.is_end_goal(level))
            .map(|(i, _)| StateId(i as u32))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, &AbstractState)> {
        self.states.iter().enumerate().map(|(i, s)| (StateId(i as u32), s))
    }

    /// JSON export for inspection and golden-file tests.
    pub fn export_json(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{{\n  \"max_height\": {},\n  \"states\": [\n",
            self.max_height
        ));
        for (i, s) in self.states.iter().enumerate() {
            let sep = if i + 1 == self.states.len() { "" } else { "," };
            out.push_str(&format!(
                "    {{\"id\": {}, \"layers\": \"{}\", \"blocks\": {}}}{}\n",
                i,
                s,
                s.blocks(),
                sep
            ));
        }
        out.push_str("  ],\n  \"edges\": [");
        let mut first = true;
        for (i, next) in self.succ.iter().enumerate() {
            for t in next {
                if !first {
                    out.push_str(", ");
                }
                out.push_str(&format!("[{}, {}]", i, t.0));
                first = false;
            }
        }
        out.push_str("],\n  \"end_goals\": [");
        let ids: Vec<String> = self.end_goals.iter().map(|g| g.0.to_string()).collect();
        out.push_str(&ids.join(", "));
        out.push_str("]\n}\n");
        out
    }
}

/// All legal layer sequences of height <= `max_height`, including the
/// empty state, in no particular order.
pub fn enumerate_states(max_height: usize, objects: ObjectSet) -> Vec<AbstractState> {
    let mut out = Vec::new();
    let mut frontier = vec![AbstractState::empty()];
    out.push(AbstractState::empty());
    while let Some(s) = frontier.pop() {
        for t in expand(&s, max_height, objects) {
            out.push(t.clone());
            frontier.push(t);
        }
    }
    out
}

/// End-goal states for a given maximum height.
pub fn enumerate_end_goals(max_height: usize, objects: ObjectSet) -> Vec<AbstractState> {
    enumerate_states(max_height, objects)
        .into_iter()
        .filter(|s| !s.is_clear() && s.is_end_goal(max_height))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Independent oracle: expand the grammar recursively over complete
    /// prefixes, then count cap states. Written against the grammar
    /// definition, not the BFS above.
    fn oracle_counts(h: usize) -> (usize, usize) {
        // complete unroofed sequences over {B, CC} of length 1..=h
        let complete: usize = (1..=h).map(|k| 1usize << k).sum();
        // roofed: complete base of length k-1 plus R
        let roofed: usize = (1..=h).map(|k| 1usize << (k - 1)).sum();
        // half-topped: complete base of length 0..h plus C1
        let half: usize = (0..h).map(|k| 1usize << k).sum();
        let total = 1 + complete + roofed + half;
        let end_goals = roofed + (1usize << h);
        (total, end_goals)
    }

    /// Brute-force enumeration by recursive expansion, separate from the
    /// production BFS order.
    fn brute_force(h: usize) -> BTreeSet<String> {
        fn rec(prefix: &mut Vec<Layer>, h: usize, out: &mut BTreeSet<String>) {
            out.insert(AbstractState::new(prefix.clone()).unwrap().to_string());
            if prefix.len() >= h {
                return;
            }
            for l in [Layer::Brick, Layer::CubePair] {
                prefix.push(l);
                rec(prefix, h, out);
                prefix.pop();
            }
            for l in [Layer::Roof, Layer::CubeHalf] {
                prefix.push(l);
                out.insert(AbstractState::new(prefix.clone()).unwrap().to_string());
                prefix.pop();
            }
        }
        let mut out = BTreeSet::new();
        rec(&mut Vec::new(), h, &mut out);
        out
    }

    #[test]
    fn counts_match_closed_form_and_brute_force() {
        for h in 0..=6 {
            let states = enumerate_states(h, ObjectSet::Base);
            let set: BTreeSet<String> = states.iter().map(|s| s.to_string()).collect();
            assert_eq!(set.len(), states.len(), "duplicates at h={h}");
            let (total, _) = oracle_counts(h);
            assert_eq!(states.len(), total, "state count at h={h}");
            assert_eq!(set, brute_force(h), "state sets differ at h={h}");
            if h >= 1 {
                let (_, goals) = oracle_counts(h);
                assert_eq!(enumerate_end_goals(h, ObjectSet::Base).len(), goals);
            }
        }
    }

    #[test]
    fn height_five_counts() {
        let g = GoalGraph::build(5, ObjectSet::Base);
        assert_eq!(g.len(), 125);
        assert_eq!(g.len() - 1, 124); // non-empty structures
        assert_eq!(g.end_goals().len(), 63);
    }

    #[test]
    fn height_one_states() {
        let states = enumerate_states(1, ObjectSet::Base);
        let set: BTreeSet<String> = states.iter().map(|s| s.to_string()).collect();
        let want: BTreeSet<String> =
            ["empty", "C1", "CC", "B", "R"].iter().map(|s| s.to_string()).collect();
        assert_eq!(set, want);
        let goals: BTreeSet<String> =
            enumerate_end_goals(1, ObjectSet::Base).iter().map(|s| s.to_string()).collect();
        let want_goals: BTreeSet<String> = ["B", "CC", "R"].iter().map(|s| s.to_string()).collect();
        assert_eq!(goals, want_goals);
    }

    #[test]
    fn height_three_end_goals() {
        assert_eq!(enumerate_end_goals(3, ObjectSet::Base).len(), 15);
    }

    #[test]
    fn successor_rules() {
        let g = GoalGraph::build(5, ObjectSet::Base);
        let succ_of = |code: &str| -> BTreeSet<String> {
            let id = g.id_of(&AbstractState::parse(code).unwrap()).unwrap();
            g.successors(id).iter().map(|t| g.state(*t).to_string()).collect()
        };
        let set = |codes: &[&str]| codes.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(succ_of("empty"), set(&["B", "R", "C1"]));
        assert_eq!(succ_of("B-R"), set(&[]));
        assert_eq!(succ_of("B-C1"), set(&["B-CC"]));
    }

    #[test]
    fn edges_add_one_block_and_graph_is_dag() {
        let g = GoalGraph::build(5, ObjectSet::Base);
        for (id, s) in g.iter() {
            for t in g.successors(id) {
                assert_eq!(g.state(*t).blocks(), s.blocks() + 1);
            }
        }
    }

    #[test]
    fn every_state_lies_on_a_path_to_an_end_goal() {
        let g = GoalGraph::build(5, ObjectSet::Base);
        // backward reachability from end-goals
        let mut on_path = vec![false; g.len()];
        let mut stack: Vec<StateId> = g.end_goals().to_vec();
        for s in &stack {
            on_path[s.index()] = true;
        }
        while let Some(s) = stack.pop() {
            for p in g.predecessors(s) {
                if !on_path[p.index()] {
                    on_path[p.index()] = true;
                    stack.push(*p);
                }
            }
        }
        assert!(on_path.iter().all(|&b| b), "unreachable or dead states exist");
        // forward reachability from empty
        let mut seen = vec![false; g.len()];
        let mut stack = vec![g.empty_id()];
        seen[g.empty_id().index()] = true;
        while let Some(s) = stack.pop() {
            for t in g.successors(s) {
                if !seen[t.index()] {
                    seen[t.index()] = true;
                    stack.push(*t);
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn ids_are_deterministic() {
        let a = GoalGraph::build(5, ObjectSet::Base);
        let b = GoalGraph::build(5, ObjectSet::Base);
        for (id, s) in a.iter() {
            assert_eq!(b.state(id), s);
        }
    }

    #[test]
    fn extend_preserves_ids_and_appends() {
        let base = GoalGraph::build(2, ObjectSet::Base);
        let ext = base.extend(3, ObjectSet::Extended);
        for (id, s) in base.iter() {
            assert_eq!(ext.state(id), s, "base id remapped");
        }
        assert!(ext.len() > base.len());
        // extended vocabulary reachable
        let t = AbstractState::parse("B-CC-SR").unwrap();
        assert!(ext.id_of(&t).is_some());
        let cyl = AbstractState::parse("CY-B-R").unwrap();
        assert!(ext.id_of(&cyl).is_some());
    }

    #[test]
    fn invalid_layer_sequences_rejected() {
        assert!(AbstractState::parse("R-B").is_err());
        assert!(AbstractState::parse("C1-B").is_err());
        assert!(AbstractState::parse("B-CC-R").is_ok());
    }
}
