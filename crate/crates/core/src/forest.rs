//! Random binary parse trees over the super-pixel adjacency graph.
//!
//! Nodes `0..S` are the leaves (super-pixel ids). Internal node `S + m` is
//! created by the `m`-th merge, so children always carry smaller ids than
//! their parent and the root is `2S - 2`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingest::SuperpixelGraph;
use crate::numeric::Rng;

/// How the next pair of adjacent regions is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MergePolicy {
    /// Any edge of the contracted graph, uniformly.
    Uniform,
    /// Uniform among edges whose merged region has the fewest leaves.
    #[default]
    Balanced,
}

impl MergePolicy {
    pub fn name(self) -> &'static str {
        match self {
            MergePolicy::Uniform => "uniform",
            MergePolicy::Balanced => "balanced",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(MergePolicy::Uniform),
            "balanced" => Some(MergePolicy::Balanced),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseTree {
    leaves: usize,
    children: Vec<[usize; 2]>,
    parent: Vec<Option<usize>>,
    pure: Vec<Option<usize>>,
}

impl ParseTree {
    /// Builds a tree from its merge list; `merges[m]` are the children of node `S + m`.
    pub fn from_merges(leaves: usize, merges: Vec<[usize; 2]>) -> Result<Self> {
        if leaves == 0 {
            return Err(Error::Invalid("parse tree needs at least one leaf".into()));
        }
        if merges.len() != leaves - 1 {
            return Err(Error::Invalid(format!(
                "{leaves} leaves need {} merges, got {}",
                leaves - 1,
                merges.len()
            )));
        }
        let n = 2 * leaves - 1;
        let mut parent = vec![None; n];
        let mut children = Vec::with_capacity(merges.len());
        for (m, pair) in merges.into_iter().enumerate() {
            let k = leaves + m;
            let [a, b] = pair;
            let (l, r) = (a.min(b), a.max(b));
            if l == r || r >= k {
                return Err(Error::Invalid(format!(
                    "node {k} has invalid children ({a},{b})"
                )));
            }
            for c in [l, r] {
                if parent[c].is_some() {
                    return Err(Error::Invalid(format!("node {c} has two parents")));
                }
                parent[c] = Some(k);
            }
            children.push([l, r]);
        }
        Ok(Self {
            leaves,
            children,
            parent,
            pure: vec![None; leaves - 1],
        })
    }

    #[inline]
    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        2 * self.leaves - 1
    }

    #[inline]
    pub fn internal_count(&self) -> usize {
        self.leaves - 1
    }

    #[inline]
    pub fn root(&self) -> usize {
        2 * self.leaves - 2
    }

    #[inline]
    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.leaves
    }

    /// Children of an internal node, smaller id first.
    #[inline]
    pub fn children(&self, node: usize) -> [usize; 2] {
        self.children[node - self.leaves]
    }

    #[inline]
    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// Ids of internal nodes in creation (bottom-up) order.
    pub fn internal_nodes(&self) -> std::ops::Range<usize> {
        self.leaves..self.node_count()
    }

    pub fn pure_label(&self, node: usize) -> Option<usize> {
        if self.is_leaf(node) {
            None
        } else {
            self.pure[node - self.leaves]
        }
    }

    pub fn pure_count(&self) -> usize {
        self.pure.iter().filter(|p| p.is_some()).count()
    }

    /// Leaves under `node`, ascending.
    pub fn region(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if self.is_leaf(n) {
                out.push(n);
            } else {
                stack.extend(self.children(n));
            }
        }
        out.sort_unstable();
        out
    }

    /// Edges from the root to the deepest leaf.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.node_count()];
        let mut best = 0;
        for k in self.internal_nodes().rev() {
            for c in self.children(k) {
                depth[c] = depth[k] + 1;
                best = best.max(depth[c]);
            }
        }
        best
    }

    /// One line per internal node: `id left right pure_label|-`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for k in self.internal_nodes() {
            let [l, r] = self.children(k);
            let p = self
                .pure_label(k)
                .map_or("-".to_string(), |c| c.to_string());
            let _ = writeln!(out, "{k} {l} {r} {p}");
        }
        out
    }

    /// Inverse of [`ParseTree::dump`] for a tree over `leaves` super-pixels.
    pub fn parse_dump(leaves: usize, text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        let mut pure = Vec::new();
        for (n, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let bad = || Error::Parse {
                offset: n,
                message: format!("malformed tree line `{line}`"),
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 4 {
                return Err(bad());
            }
            let id: usize = tok[0].parse().map_err(|_| bad())?;
            if id != leaves + n {
                return Err(bad());
            }
            let l = tok[1].parse().map_err(|_| bad())?;
            let r = tok[2].parse().map_err(|_| bad())?;
            merges.push([l, r]);
            pure.push(if tok[3] == "-" {
                None
            } else {
                Some(tok[3].parse().map_err(|_| bad())?)
            });
        }
        let mut tree = Self::from_merges(leaves, merges)?;
        tree.pure = pure;
        Ok(tree)
    }
}

/// Successively merges random adjacent regions of `graph` up to the root.
pub fn build_random_tree(
    graph: &SuperpixelGraph,
    rng: &mut Rng,
    policy: MergePolicy,
) -> Result<ParseTree> {
    let s = graph.len();
    if s == 0 {
        return Err(Error::Invalid("empty graph".into()));
    }
    let n = 2 * s - 1;
    let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, set) in nbrs.iter_mut().enumerate().take(s) {
        set.extend(graph.neighbors(i).iter().copied());
    }
    let mut size = vec![1usize; n];
    let mut active: BTreeSet<usize> = (0..s).collect();
    let mut merges = Vec::with_capacity(s - 1);
    let mut edges: Vec<(usize, usize)> = Vec::new();

    for k in s..n {
        edges.clear();
        for &a in &active {
            edges.extend(nbrs[a].range(a + 1..).map(|&b| (a, b)));
        }
        if edges.is_empty() {
            return Err(Error::Disconnected {
                components: active.len(),
            });
        }
        let (a, b) = match policy {
            MergePolicy::Uniform => edges[rng.below(edges.len())],
            MergePolicy::Balanced => {
                let best = edges.iter().map(|&(a, b)| size[a] + size[b]).min().unwrap();
                let smallest: Vec<_> = edges
                    .iter()
                    .copied()
                    .filter(|&(a, b)| size[a] + size[b] == best)
                    .collect();
                smallest[rng.below(smallest.len())]
            }
        };
        let mut joined: BTreeSet<usize> = nbrs[a].union(&nbrs[b]).copied().collect();
        joined.remove(&a);
        joined.remove(&b);
        for &m in &joined {
            nbrs[m].remove(&a);
            nbrs[m].remove(&b);
            nbrs[m].insert(k);
        }
        nbrs[k] = joined;
        nbrs[a].clear();
        nbrs[b].clear();
        size[k] = size[a] + size[b];
        active.remove(&a);
        active.remove(&b);
        active.insert(k);
        merges.push([a, b]);
    }
    ParseTree::from_merges(s, merges)
}

/// Marks internal nodes whose leaves all share one ground-truth class.
///
/// VOID leaves make every ancestor impure.
pub fn mark_pure_nodes(mut tree: ParseTree, graph: &SuperpixelGraph) -> Result<ParseTree> {
    let labels = graph.labels().ok_or(Error::MissingLabels)?;
    if labels.len() != tree.leaf_count() {
        return Err(Error::shape("leaf labels", tree.leaf_count(), labels.len()));
    }
    let mut node_label: Vec<Option<usize>> = labels.to_vec();
    node_label.resize(tree.node_count(), None);
    for k in tree.internal_nodes() {
        let [l, r] = tree.children(k);
        node_label[k] = match (node_label[l], node_label[r]) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        };
        tree.pure[k - tree.leaves] = node_label[k];
    }
    Ok(tree)
}
