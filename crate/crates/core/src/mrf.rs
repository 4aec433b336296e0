//! Exact MAP decoding of the tree MRF over parse-tree nodes.
//!
//! Each node takes a non-empty set of labels drawn from the retained label
//! list; leaves take exactly one. The unary cost of a set is the mean negative
//! log-probability of its labels, and a child's set must be contained in its
//! parent's set. On a tree the minimum-energy assignment is found exactly by
//! one upward min-sum pass and a downward backtrack.

use crate::error::{Error, Result};
use crate::forest::ParseTree;
use crate::net::{vote, Prediction};
use crate::numeric::LOG_EPS;

/// Upper bound on retained labels (states are `u16` bitmasks).
pub const MAX_RETAINED: usize = 16;

/// Labels kept for decoding, most frequent first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetainedLabels(Vec<usize>);

impl RetainedLabels {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() || labels.len() > MAX_RETAINED {
            return Err(Error::Invalid(format!(
                "retained label count {} outside 1..={MAX_RETAINED}",
                labels.len()
            )));
        }
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(Error::Invalid("retained labels must be distinct".into()));
        }
        Ok(Self(labels))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn full_state(&self) -> NodeState {
        NodeState(((1u32 << self.0.len()) - 1) as u16)
    }
}

/// Ranks predicted labels by super-pixel count (ties: smaller class first) and keeps `k`.
pub fn retain_labels(leaf_predictions: &[usize], k: usize) -> Result<RetainedLabels> {
    if leaf_predictions.is_empty() {
        return Err(Error::Invalid("no leaf predictions".into()));
    }
    let classes = leaf_predictions.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; classes];
    for &l in leaf_predictions {
        counts[l] += 1;
    }
    let mut ranked: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    ranked.truncate(k.clamp(1, MAX_RETAINED));
    RetainedLabels::new(ranked)
}

/// Set of retained-label positions, as a bitmask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeState(pub u16);

impl NodeState {
    pub fn singleton(pos: usize) -> Self {
        NodeState(1 << pos)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, pos: usize) -> bool {
        self.0 & (1 << pos) != 0
    }

    pub fn is_subset_of(self, other: NodeState) -> bool {
        self.0 & !other.0 == 0
    }

    /// Retained-label positions in ascending order.
    pub fn positions(self) -> impl Iterator<Item = usize> {
        (0..16).filter(move |&i| self.0 & (1 << i) != 0)
    }
}

/// Mean of `-ln max(p_k, ε)` over the labels in `state`.
pub fn unary(state: NodeState, p: &[f64], retained: &RetainedLabels) -> f64 {
    debug_assert!(!state.is_empty());
    let labels = retained.as_slice();
    let sum: f64 = state
        .positions()
        .map(|i| -p[labels[i]].max(LOG_EPS).ln())
        .sum();
    sum / state.len() as f64
}

/// Hard hierarchy constraint: every label of the child appears in the parent.
pub fn pairwise_feasible(child: NodeState, parent: NodeState) -> bool {
    child.is_subset_of(parent)
}

/// One decoding instance: a parse tree and a label distribution for each of its nodes.
#[derive(Clone, Debug)]
pub struct MrfProblem<'a> {
    pub tree: &'a ParseTree,
    pub probs: &'a [Vec<f64>],
    pub retained: RetainedLabels,
}

impl<'a> MrfProblem<'a> {
    pub fn new(
        tree: &'a ParseTree,
        probs: &'a [Vec<f64>],
        retained: RetainedLabels,
    ) -> Result<Self> {
        if probs.len() != tree.node_count() {
            return Err(Error::shape(
                "node distributions",
                tree.node_count(),
                probs.len(),
            ));
        }
        let classes = probs[0].len();
        if let Some(&bad) = retained.as_slice().iter().find(|&&l| l >= classes) {
            return Err(Error::ClassOutOfRange {
                target: bad,
                classes,
            });
        }
        Ok(Self {
            tree,
            probs,
            retained,
        })
    }

    fn node_unary(&self, node: usize, state: NodeState) -> f64 {
        unary(state, &self.probs[node], &self.retained)
    }

    /// Σ unary over an assignment.
    pub fn energy(&self, states: &[NodeState]) -> f64 {
        states
            .iter()
            .enumerate()
            .map(|(n, &s)| self.node_unary(n, s))
            .sum()
    }

    /// True iff leaves are singletons and every child is a subset of its parent.
    pub fn is_feasible(&self, states: &[NodeState]) -> bool {
        let t = self.tree;
        (0..t.leaf_count()).all(|i| states[i].len() == 1)
            && states
                .iter()
                .all(|s| !s.is_empty() && s.0 >> self.retained.len() == 0)
            && t.internal_nodes().all(|k| {
                t.children(k)
                    .iter()
                    .all(|&c| pairwise_feasible(states[c], states[k]))
            })
    }
}

/// Decoded states, their energy and per-edge work counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoding {
    pub states: Vec<NodeState>,
    pub energy: f64,
    /// `(parent, child)` state pairs examined on each child's incoming edge.
    pub pair_evaluations: Vec<usize>,
}

impl Decoding {
    /// One `id state_bitmask f1` line per node, then `energy E`.
    pub fn dump(&self, problem: &MrfProblem<'_>) -> String {
        let mut out = String::new();
        for (node, s) in self.states.iter().enumerate() {
            out.push_str(&format!(
                "{node} {:#b} {:?}\n",
                s.0,
                problem.node_unary(node, *s)
            ));
        }
        out.push_str(&format!("energy {:?}\n", self.energy));
        out
    }
}

/// Exact min-sum decoding; ties resolve to the smallest bitmask at each node, top-down.
pub fn map_decode(problem: &MrfProblem<'_>) -> Decoding {
    let tree = problem.tree;
    let n = tree.node_count();
    let l = problem.retained.len();
    let full = 1usize << l;
    let mut cost = vec![vec![f64::INFINITY; full]; n];
    // best_child[c][s] = (min cost of child c under parent state s, argmin mask)
    let mut best_child: Vec<Vec<(f64, u16)>> = vec![Vec::new(); n];
    let mut pair_evaluations = vec![0usize; n];

    for i in 0..tree.leaf_count() {
        for pos in 0..l {
            let s = NodeState::singleton(pos);
            cost[i][s.0 as usize] = problem.node_unary(i, s);
        }
    }
    for k in tree.internal_nodes() {
        for c in tree.children(k) {
            let mut table = vec![(f64::INFINITY, 0u16); full];
            let mut evaluations = 0;
            for s in 1..full {
                let mut best = (f64::INFINITY, 0u16);
                if tree.is_leaf(c) {
                    for pos in NodeState(s as u16).positions() {
                        let sub = 1usize << pos;
                        evaluations += 1;
                        if cost[c][sub] < best.0 {
                            best = (cost[c][sub], sub as u16);
                        }
                    }
                } else {
                    // descending subset walk; `<=` keeps the smallest mask on ties
                    let mut sub = s;
                    while sub > 0 {
                        evaluations += 1;
                        if cost[c][sub] <= best.0 {
                            best = (cost[c][sub], sub as u16);
                        }
                        sub = (sub - 1) & s;
                    }
                }
                table[s] = best;
            }
            pair_evaluations[c] = evaluations;
            best_child[c] = table;
        }
        let [a, b] = tree.children(k);
        for s in 1..full {
            let state = NodeState(s as u16);
            cost[k][s] = problem.node_unary(k, state) + best_child[a][s].0 + best_child[b][s].0;
        }
    }

    let root = tree.root();
    let mut root_state = 0usize;
    for s in 1..full {
        if root_state == 0 || cost[root][s] < cost[root][root_state] {
            root_state = s;
        }
    }
    let mut states = vec![NodeState(0); n];
    states[root] = NodeState(root_state as u16);
    for k in tree.internal_nodes().rev() {
        let s = states[k].0 as usize;
        for c in tree.children(k) {
            states[c] = NodeState(best_child[c][s].1);
        }
    }
    let energy = cost[root][root_state];
    Decoding {
        states,
        energy,
        pair_evaluations,
    }
}

/// Default guard on exhaustive enumeration.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Number of feasible joint assignments.
pub fn feasible_count(problem: &MrfProblem<'_>) -> f64 {
    let tree = problem.tree;
    let full = 1usize << problem.retained.len();
    let mut count = vec![vec![0.0f64; full]; tree.node_count()];
    for i in 0..tree.leaf_count() {
        for pos in 0..problem.retained.len() {
            count[i][1 << pos] = 1.0;
        }
    }
    for k in tree.internal_nodes() {
        for s in 1..full {
            let mut prod = 1.0;
            for c in tree.children(k) {
                let mut sum = 0.0;
                let mut sub = s;
                while sub > 0 {
                    sum += count[c][sub];
                    sub = (sub - 1) & s;
                }
                prod *= sum;
            }
            count[k][s] = prod;
        }
    }
    count[tree.root()].iter().sum()
}

/// Exhaustive search over every feasible assignment, visited in lexicographic
/// order of the pre-order state vector so the first optimum found matches the
/// decoder's tie-break.
pub fn brute_force_decode(problem: &MrfProblem<'_>, limit: f64) -> Result<Decoding> {
    let size = feasible_count(problem);
    if size > limit {
        return Err(Error::SearchSpace { size, limit });
    }
    let tree = problem.tree;
    let mut order = Vec::with_capacity(tree.node_count());
    let mut stack = vec![tree.root()];
    while let Some(n) = stack.pop() {
        order.push(n);
        if !tree.is_leaf(n) {
            let [l, r] = tree.children(n);
            stack.push(r);
            stack.push(l);
        }
    }
    let l = problem.retained.len();
    let mut search = Search {
        problem,
        order: &order,
        current: vec![NodeState(0); tree.node_count()],
        best: None,
        full: 1u16 << l,
    };
    search.visit(0, 0.0);
    let (energy, states) = search
        .best
        .expect("every problem has a feasible assignment");
    Ok(Decoding {
        states,
        energy,
        pair_evaluations: vec![0; tree.node_count()],
    })
}

struct Search<'p, 'a> {
    problem: &'p MrfProblem<'a>,
    order: &'p [usize],
    current: Vec<NodeState>,
    best: Option<(f64, Vec<NodeState>)>,
    full: u16,
}

impl Search<'_, '_> {
    fn visit(&mut self, depth: usize, partial: f64) {
        if depth == self.order.len() {
            let better = match &self.best {
                None => true,
                Some((e, _)) => partial < *e - 1e-12,
            };
            if better {
                self.best = Some((partial, self.current.clone()));
            }
            return;
        }
        let node = self.order[depth];
        let tree = self.problem.tree;
        let allowed = tree
            .parent(node)
            .map_or(self.full - 1, |p| self.current[p].0);
        for s in 1..self.full {
            let state = NodeState(s);
            if !state.is_subset_of(NodeState(allowed)) {
                continue;
            }
            if tree.is_leaf(node) && state.len() != 1 {
                continue;
            }
            self.current[node] = state;
            let e = partial + self.problem.node_unary(node, state);
            self.visit(depth + 1, e);
        }
        self.current[node] = NodeState(0);
    }
}

/// Class label of each leaf's singleton state.
pub fn decode_leaf_labels(
    states: &[NodeState],
    leaf_count: usize,
    retained: &RetainedLabels,
) -> Vec<usize> {
    states[..leaf_count]
        .iter()
        .map(|s| {
            debug_assert_eq!(s.len(), 1);
            retained.as_slice()[s.0.trailing_zeros() as usize]
        })
        .collect()
}

/// Per-tree decoding followed by the same vote used for plain prediction.
///
/// Retained labels come from the voted network prediction; each tree is
/// decoded with its own node distributions.
pub fn decode_forest(prediction: &Prediction, k: usize) -> Result<Vec<usize>> {
    let retained = retain_labels(&prediction.labels, k)?;
    let mut per_tree = Vec::with_capacity(prediction.traces.len());
    for trace in &prediction.traces {
        let tree = trace
            .tree()
            .ok_or_else(|| Error::Invalid("MRF decoding needs parse-tree traces".into()))?;
        let problem = MrfProblem::new(tree, &trace.probs, retained.clone())?;
        let decoded = map_decode(&problem);
        per_tree.push(decode_leaf_labels(
            &decoded.states,
            tree.leaf_count(),
            &retained,
        ));
    }
    Ok(vote(&per_tree, &prediction.mean_probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ret(v: &[usize]) -> RetainedLabels {
        RetainedLabels::new(v.to_vec()).unwrap()
    }

    #[test]
    fn retain_examples() {
        assert_eq!(retain_labels(&[3, 3, 3], 9).unwrap(), ret(&[3]));
        let mut preds = Vec::new();
        for (label, count) in (0..10).zip((1..=10).rev()) {
            preds.extend(std::iter::repeat_n(label, count));
        }
        let r = retain_labels(&preds, 9).unwrap();
        assert_eq!(r.as_slice(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        let r = retain_labels(&[7, 7, 7, 7, 7, 2, 2, 2, 2, 2, 4, 4], 2).unwrap();
        assert_eq!(r.as_slice(), &[2, 7]);
    }

    #[test]
    fn unary_examples() {
        let r = ret(&[0, 1]);
        let p = [0.3, 0.7];
        assert!((unary(NodeState(0b10), &p, &r) + 0.7f64.ln()).abs() < 1e-15);
        let half = [0.5, 0.5];
        assert!((unary(NodeState(0b11), &half, &r) - 2f64.ln()).abs() < 1e-15);
        let degenerate = [1.0, 0.0];
        assert_eq!(unary(NodeState(0b01), &degenerate, &r), 0.0);
        assert!((unary(NodeState(0b10), &degenerate, &r) + LOG_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn pairwise_examples() {
        assert!(pairwise_feasible(NodeState(0b001), NodeState(0b011)));
        assert!(!pairwise_feasible(NodeState(0b101), NodeState(0b011)));
        assert!(pairwise_feasible(NodeState(0b110), NodeState(0b110)));
    }

    #[test]
    fn single_leaf_decodes_to_argmax() {
        let tree = ParseTree::from_merges(1, vec![]).unwrap();
        let probs = vec![vec![0.2, 0.5, 0.3]];
        let problem = MrfProblem::new(&tree, &probs, ret(&[0, 1, 2])).unwrap();
        let d = map_decode(&problem);
        assert_eq!(d.states, vec![NodeState(0b010)]);
        assert!((d.energy + 0.5f64.ln()).abs() < 1e-15);
        let b = brute_force_decode(&problem, BRUTE_FORCE_LIMIT).unwrap();
        assert_eq!(b.states, d.states);
    }

    #[test]
    fn degenerate_on_one_label() {
        let tree = ParseTree::from_merges(3, vec![[0, 1], [2, 3]]).unwrap();
        let probs = vec![vec![0.0, 1.0, 0.0]; 5];
        let problem = MrfProblem::new(&tree, &probs, ret(&[0, 1, 2])).unwrap();
        let d = map_decode(&problem);
        assert!(d.states.iter().all(|&s| s == NodeState(0b010)));
    }

    #[test]
    fn hierarchy_fixes_inconsistent_leaf() {
        // leaf 1 leans to class 1 weakly, but every ancestor is confident in class 0
        let tree = ParseTree::from_merges(3, vec![[0, 1], [2, 3]]).unwrap();
        let probs = vec![
            vec![0.9, 0.1],
            vec![0.45, 0.55],
            vec![0.9, 0.1],
            vec![0.95, 0.05],
            vec![0.95, 0.05],
        ];
        let problem = MrfProblem::new(&tree, &probs, ret(&[0, 1])).unwrap();
        let d = map_decode(&problem);
        assert!(problem.is_feasible(&d.states));
        assert_eq!(
            decode_leaf_labels(&d.states, 3, &problem.retained),
            vec![0, 0, 0]
        );
        assert!((problem.energy(&d.states) - d.energy).abs() < 1e-12);
    }

    #[test]
    fn consistent_argmax_is_kept() {
        let tree = ParseTree::from_merges(4, vec![[0, 1], [2, 3], [4, 5]]).unwrap();
        let probs = vec![
            vec![0.8, 0.2],
            vec![0.7, 0.3],
            vec![0.1, 0.9],
            vec![0.3, 0.7],
            vec![0.9, 0.1],
            vec![0.2, 0.8],
            vec![0.5, 0.5],
        ];
        let problem = MrfProblem::new(&tree, &probs, ret(&[0, 1])).unwrap();
        let d = map_decode(&problem);
        assert_eq!(
            decode_leaf_labels(&d.states, 4, &problem.retained),
            vec![0, 0, 1, 1]
        );
    }

    #[test]
    fn dump_lists_nodes_and_energy() {
        let tree = ParseTree::from_merges(2, vec![[0, 1]]).unwrap();
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]];
        let problem = MrfProblem::new(&tree, &probs, ret(&[0, 1])).unwrap();
        let d = map_decode(&problem);
        let text = d.dump(&problem);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("0 0b1 "));
        assert!(lines[1].starts_with("1 0b10 "));
        assert!(lines[2].starts_with("2 0b11 "));
        assert_eq!(lines[3], format!("energy {:?}", d.energy));
    }

    #[test]
    fn search_guard() {
        let tree = ParseTree::from_merges(6, vec![[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]).unwrap();
        let probs = vec![vec![0.25; 4]; 11];
        let problem = MrfProblem::new(&tree, &probs, ret(&[0, 1, 2, 3])).unwrap();
        assert!(matches!(
            brute_force_decode(&problem, 10.0),
            Err(Error::SearchSpace { .. })
        ));
    }
}
