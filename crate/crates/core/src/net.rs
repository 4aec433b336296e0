//! The four-module recursive network: semantic mapper, combiner, decombiner
//! and categorizer, with backpropagation through the parse tree.
//!
//! Every module is a single affine layer followed by the activation (the
//! categorizer uses softmax instead). Bottom-up, leaves are mapped into the
//! semantic space and children are combined into parents. Top-down, the root
//! keeps its own semantic feature as its enhanced feature and every other node
//! is enhanced from `[own semantic feature; parent's enhanced feature]`.

use crate::error::{Error, Result};
use crate::forest::ParseTree;
use crate::ingest::SuperpixelGraph;
use crate::numeric::{affine_concat, argmax, cross_entropy, softmax, Activation, DenseMatrix, Rng};

/// Weights of the four modules; biases live in each block's last column.
#[derive(Clone, Debug, PartialEq)]
pub struct RcpnParams {
    pub w_sem: DenseMatrix,
    pub w_com: DenseMatrix,
    pub w_dec: DenseMatrix,
    pub w_cat: DenseMatrix,
    pub activation: Activation,
}

/// `(d_vis, d_sem, classes)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub d_vis: usize,
    pub d_sem: usize,
    pub classes: usize,
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "d_vis={} d_sem={} classes={}",
            self.d_vis, self.d_sem, self.classes
        )
    }
}

impl RcpnParams {
    pub fn zeros(dims: Dims, activation: Activation) -> Self {
        let Dims {
            d_vis,
            d_sem,
            classes,
        } = dims;
        Self {
            w_sem: DenseMatrix::zeros(d_sem, d_vis + 1),
            w_com: DenseMatrix::zeros(d_sem, 2 * d_sem + 1),
            w_dec: DenseMatrix::zeros(d_sem, 2 * d_sem + 1),
            w_cat: DenseMatrix::zeros(classes, d_sem + 1),
            activation,
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(dims: Dims, activation: Activation, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(dims, activation);
        for block in p.blocks_mut() {
            let (rows, cols) = block.shape();
            let limit = (6.0 / ((cols - 1) + rows) as f64).sqrt();
            for r in 0..rows {
                for c in 0..cols - 1 {
                    block.set(r, c, rng.uniform_in(-limit, limit));
                }
            }
        }
        p
    }

    /// Validates block shapes against each other and returns the dims.
    pub fn from_blocks(
        w_sem: DenseMatrix,
        w_com: DenseMatrix,
        w_dec: DenseMatrix,
        w_cat: DenseMatrix,
        activation: Activation,
    ) -> Result<Self> {
        let d_sem = w_sem.rows();
        let d_vis = w_sem.cols().saturating_sub(1);
        let dims = Dims {
            d_vis,
            d_sem,
            classes: w_cat.rows(),
        };
        let p = Self {
            w_sem,
            w_com,
            w_dec,
            w_cat,
            activation,
        };
        let expected = Self::zeros(dims, activation);
        for (name, got, want) in [
            ("W_com", &p.w_com, &expected.w_com),
            ("W_dec", &p.w_dec, &expected.w_dec),
            ("W_cat", &p.w_cat, &expected.w_cat),
        ] {
            if got.shape() != want.shape() {
                return Err(Error::DimensionMismatch {
                    what: name,
                    expected: format!("{:?}", want.shape()),
                    actual: format!("{:?}", got.shape()),
                });
            }
        }
        Ok(p)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            d_vis: self.w_sem.cols() - 1,
            d_sem: self.w_sem.rows(),
            classes: self.w_cat.rows(),
        }
    }

    pub fn check_dims(&self, expected: Dims) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::shape("model dimensions", expected, self.dims()));
        }
        Ok(())
    }

    /// Blocks in the fixed order sem, com, dec, cat.
    pub fn blocks(&self) -> [&DenseMatrix; 4] {
        [&self.w_sem, &self.w_com, &self.w_dec, &self.w_cat]
    }

    pub fn blocks_mut(&mut self) -> [&mut DenseMatrix; 4] {
        [
            &mut self.w_sem,
            &mut self.w_com,
            &mut self.w_dec,
            &mut self.w_cat,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

pub const MODULE_NAMES: [&str; 4] = ["sem", "com", "dec", "cat"];

/// Per-node activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    tree: Option<ParseTree>,
    /// Visual features of the leaves, kept for the mapper gradient.
    inputs: Vec<Vec<f64>>,
    /// Semantic features `x`.
    pub semantic: Vec<Vec<f64>>,
    /// Context-enhanced features `x̃`.
    pub enhanced: Vec<Vec<f64>>,
    /// Pre-activation of `x` (mapper for leaves, combiner for internal nodes).
    pre_semantic: Vec<Vec<f64>>,
    /// Pre-activation of `x̃`; empty for the root and in local mode.
    pre_enhanced: Vec<Vec<f64>>,
    /// Categorizer distributions.
    pub probs: Vec<Vec<f64>>,
    pub combiner_calls: usize,
    pub decombiner_calls: usize,
}

impl ForwardTrace {
    pub fn tree(&self) -> Option<&ParseTree> {
        self.tree.as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.probs.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.tree
            .as_ref()
            .map_or(self.probs.len(), |t| t.leaf_count())
    }

    /// Argmax label per leaf.
    pub fn leaf_labels(&self) -> Vec<usize> {
        self.probs[..self.leaf_count()]
            .iter()
            .map(|p| argmax(p))
            .collect()
    }

    /// Smallest absolute pre-activation anywhere in the pass.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre_semantic
            .iter()
            .chain(&self.pre_enhanced)
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn check_inputs(params: &RcpnParams, graph: &SuperpixelGraph) -> Result<()> {
    let d = params.dims();
    if graph.feature_dim() != d.d_vis {
        return Err(Error::shape(
            "visual feature dimension",
            d.d_vis,
            graph.feature_dim(),
        ));
    }
    Ok(())
}

fn activate(z: &[f64], act: Activation) -> Vec<f64> {
    z.iter().map(|&v| act.value(v)).collect()
}

/// Full bottom-up / top-down pass over one parse tree.
pub fn forward(
    params: &RcpnParams,
    graph: &SuperpixelGraph,
    tree: &ParseTree,
) -> Result<ForwardTrace> {
    check_inputs(params, graph)?;
    if tree.leaf_count() != graph.len() {
        return Err(Error::shape(
            "parse tree leaves",
            graph.len(),
            tree.leaf_count(),
        ));
    }
    let act = params.activation;
    let n = tree.node_count();
    let s = tree.leaf_count();
    let mut pre_semantic = Vec::with_capacity(n);
    let mut semantic = Vec::with_capacity(n);
    for i in 0..s {
        let z = affine_concat(&params.w_sem, &[graph.feature(i)]);
        semantic.push(activate(&z, act));
        pre_semantic.push(z);
    }
    let mut combiner_calls = 0;
    for k in tree.internal_nodes() {
        let [l, r] = tree.children(k);
        let z = affine_concat(&params.w_com, &[&semantic[l], &semantic[r]]);
        semantic.push(activate(&z, act));
        pre_semantic.push(z);
        combiner_calls += 1;
    }

    let mut enhanced = vec![Vec::new(); n];
    let mut pre_enhanced = vec![Vec::new(); n];
    let root = tree.root();
    enhanced[root] = semantic[root].clone();
    let mut decombiner_calls = 0;
    for k in tree.internal_nodes().rev() {
        for c in tree.children(k) {
            let z = affine_concat(&params.w_dec, &[&semantic[c], &enhanced[k]]);
            enhanced[c] = activate(&z, act);
            pre_enhanced[c] = z;
            decombiner_calls += 1;
        }
    }
    let probs = enhanced
        .iter()
        .map(|e| softmax(&affine_concat(&params.w_cat, &[e])))
        .collect();
    Ok(ForwardTrace {
        tree: Some(tree.clone()),
        inputs: graph.features().to_vec(),
        semantic,
        enhanced,
        pre_semantic,
        pre_enhanced,
        probs,
        combiner_calls,
        decombiner_calls,
    })
}

/// Context-free pass: the categorizer reads each leaf's semantic feature directly.
pub fn forward_local(params: &RcpnParams, graph: &SuperpixelGraph) -> Result<ForwardTrace> {
    check_inputs(params, graph)?;
    let act = params.activation;
    let s = graph.len();
    let mut pre_semantic = Vec::with_capacity(s);
    let mut semantic = Vec::with_capacity(s);
    for i in 0..s {
        let z = affine_concat(&params.w_sem, &[graph.feature(i)]);
        semantic.push(activate(&z, act));
        pre_semantic.push(z);
    }
    let probs = semantic
        .iter()
        .map(|x| softmax(&affine_concat(&params.w_cat, &[x])))
        .collect();
    Ok(ForwardTrace {
        tree: None,
        inputs: graph.features().to_vec(),
        enhanced: semantic.clone(),
        semantic,
        pre_semantic,
        pre_enhanced: vec![Vec::new(); s],
        probs,
        combiner_calls: 0,
        decombiner_calls: 0,
    })
}

/// Training objective for one tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossMode {
    /// Cross-entropy over labeled leaves only.
    Rcpn,
    /// Leaf term plus the cross-entropy of every pure internal node.
    #[default]
    PureNode,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Rcpn => "rcpn",
            LossMode::PureNode => "pure_node",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rcpn" => Some(LossMode::Rcpn),
            "pure_node" => Some(LossMode::PureNode),
            _ => None,
        }
    }
}

/// Loss of one tree together with the per-node gradients w.r.t. the categorizer logits.
#[derive(Clone, Debug)]
pub struct TreeLoss {
    pub value: f64,
    /// Σ weighted cross-entropy over labeled leaves.
    pub leaf_sum: f64,
    pub leaf_count: usize,
    /// Σ weighted cross-entropy over pure nodes (zero in rcpn mode).
    pub pure_sum: f64,
    pub pure_count: usize,
    /// `∂value/∂logits` per node; zero vectors where a node carries no loss.
    pub signals: Vec<Vec<f64>>,
}

/// Per-tree loss: mean over labeled leaves, plus mean over pure nodes in pure-node mode.
pub fn loss(
    trace: &ForwardTrace,
    graph: &SuperpixelGraph,
    mode: LossMode,
    class_weights: &[f64],
) -> Result<TreeLoss> {
    loss_with_normalizers(trace, graph, mode, class_weights, None, None)
}

/// Like [`loss`] but with explicit divisors for the leaf and pure-node sums,
/// which the trainer uses to normalize across a whole forest.
pub fn loss_with_normalizers(
    trace: &ForwardTrace,
    graph: &SuperpixelGraph,
    mode: LossMode,
    class_weights: &[f64],
    leaf_norm: Option<f64>,
    pure_norm: Option<f64>,
) -> Result<TreeLoss> {
    let labels = graph.labels().ok_or(Error::MissingLabels)?;
    let classes = trace.probs.first().map_or(0, |p| p.len());
    if class_weights.len() != classes {
        return Err(Error::shape("class weights", classes, class_weights.len()));
    }
    let s = trace.leaf_count();
    let mut signals = vec![vec![0.0; classes]; trace.node_count()];

    let leaf_targets: Vec<(usize, usize)> = labels[..s]
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|c| (i, c)))
        .collect();
    if leaf_targets.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let pure_targets: Vec<(usize, usize)> = match (mode, trace.tree()) {
        (LossMode::PureNode, Some(tree)) => tree
            .internal_nodes()
            .filter_map(|k| tree.pure_label(k).map(|c| (k, c)))
            .collect(),
        _ => Vec::new(),
    };

    let leaf_div = leaf_norm.unwrap_or(leaf_targets.len() as f64);
    let pure_div = pure_norm.unwrap_or(pure_targets.len().max(1) as f64);
    let mut accumulate = |targets: &[(usize, usize)], div: f64| -> Result<f64> {
        let mut sum = 0.0;
        for &(node, target) in targets {
            let w = *class_weights
                .get(target)
                .ok_or(Error::ClassOutOfRange { target, classes })?;
            let p = &trace.probs[node];
            sum += cross_entropy(p, target, w)?;
            // d(-w log p_t)/d logits = w (p - e_t)
            for (c, g) in signals[node].iter_mut().enumerate() {
                let t = if c == target { 1.0 } else { 0.0 };
                *g = w * (p[c] - t) / div;
            }
        }
        Ok(sum)
    };
    let leaf_sum = accumulate(&leaf_targets, leaf_div)?;
    let pure_sum = accumulate(&pure_targets, pure_div)?;
    let mut value = leaf_sum / leaf_div;
    if !pure_targets.is_empty() {
        value += pure_sum / pure_div;
    }
    Ok(TreeLoss {
        value,
        leaf_sum,
        leaf_count: leaf_targets.len(),
        pure_sum,
        pure_count: pure_targets.len(),
        signals,
    })
}

/// Gradients of all four blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub sem: DenseMatrix,
    pub com: DenseMatrix,
    pub dec: DenseMatrix,
    pub cat: DenseMatrix,
}

impl Gradients {
    pub fn zeros_like(params: &RcpnParams) -> Self {
        let z = RcpnParams::zeros(params.dims(), params.activation);
        Self {
            sem: z.w_sem,
            com: z.w_com,
            dec: z.w_dec,
            cat: z.w_cat,
        }
    }

    pub fn blocks(&self) -> [&DenseMatrix; 4] {
        [&self.sem, &self.com, &self.dec, &self.cat]
    }

    pub fn blocks_mut(&mut self) -> [&mut DenseMatrix; 4] {
        [&mut self.sem, &mut self.com, &mut self.dec, &mut self.cat]
    }

    /// Raw squared Frobenius norm per module (sem, com, dec, cat).
    pub fn squared_norms(&self) -> [f64; 4] {
        self.blocks().map(|b| b.squared_norm())
    }

    /// `sqrt(squared norm / parameter count)` per module.
    pub fn normalized_strengths(&self) -> [f64; 4] {
        self.blocks()
            .map(|b| (b.squared_norm() / b.len() as f64).sqrt())
    }

    pub fn global_norm(&self) -> f64 {
        self.squared_norms().iter().sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.add_assign(b);
        }
    }
}

fn local_delta(upstream: &[f64], pre: &[f64], act: Activation) -> Vec<f64> {
    upstream
        .iter()
        .zip(pre)
        .map(|(&g, &z)| g * act.derivative(z))
        .collect()
}

/// Backpropagation through structure for one trace.
///
/// The decombiner splits its input error between the child's own semantic
/// feature (the one-step bypass to the mapper/combiner output) and the
/// parent's enhanced feature (the path back up the tree).
pub fn backward(trace: &ForwardTrace, params: &RcpnParams, signals: &[Vec<f64>]) -> Gradients {
    let act = params.activation;
    let d = params.dims().d_sem;
    let n = trace.node_count();
    let mut grads = Gradients::zeros_like(params);
    let mut d_enh = vec![vec![0.0; d]; n];
    let mut d_sem = vec![vec![0.0; d]; n];

    for (node, e) in signals.iter().enumerate() {
        if e.iter().all(|&v| v == 0.0) {
            continue;
        }
        grads.cat.add_outer_with_bias(e, &trace.enhanced[node]);
        params.w_cat.add_transposed_block(e, 0, &mut d_enh[node]);
    }

    match trace.tree() {
        None => d_sem = d_enh,
        Some(tree) => {
            let root = tree.root();
            // children have smaller ids, so ascending order completes every d_enh before use
            for node in 0..n {
                if node == root {
                    let g = std::mem::take(&mut d_enh[node]);
                    for (a, b) in d_sem[node].iter_mut().zip(g) {
                        *a += b;
                    }
                    continue;
                }
                let parent = tree.parent(node).expect("non-root node has a parent");
                let delta = local_delta(&d_enh[node], &trace.pre_enhanced[node], act);
                if delta.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let mut input = Vec::with_capacity(2 * d);
                input.extend_from_slice(&trace.semantic[node]);
                input.extend_from_slice(&trace.enhanced[parent]);
                grads.dec.add_outer_with_bias(&delta, &input);
                params
                    .w_dec
                    .add_transposed_block(&delta, 0, &mut d_sem[node]);
                let mut to_parent = vec![0.0; d];
                params.w_dec.add_transposed_block(&delta, d, &mut to_parent);
                for (a, b) in d_enh[parent].iter_mut().zip(to_parent) {
                    *a += b;
                }
            }
            // combiner, parents before children
            for k in tree.internal_nodes().rev() {
                let delta = local_delta(&d_sem[k], &trace.pre_semantic[k], act);
                if delta.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let [l, r] = tree.children(k);
                let mut input = Vec::with_capacity(2 * d);
                input.extend_from_slice(&trace.semantic[l]);
                input.extend_from_slice(&trace.semantic[r]);
                grads.com.add_outer_with_bias(&delta, &input);
                let (mut dl, mut dr) = (vec![0.0; d], vec![0.0; d]);
                params.w_com.add_transposed_block(&delta, 0, &mut dl);
                params.w_com.add_transposed_block(&delta, d, &mut dr);
                for (a, b) in d_sem[l].iter_mut().zip(dl) {
                    *a += b;
                }
                for (a, b) in d_sem[r].iter_mut().zip(dr) {
                    *a += b;
                }
            }
        }
    }

    for (i, input) in trace.inputs.iter().enumerate() {
        let delta = local_delta(&d_sem[i], &trace.pre_semantic[i], act);
        grads.sem.add_outer_with_bias(&delta, input);
    }
    grads
}

/// Majority vote over per-tree leaf labels. Ties go to the label with the
/// highest mean probability, then to the smaller class index.
pub fn vote(per_tree: &[Vec<usize>], mean_probs: &[Vec<f64>]) -> Vec<usize> {
    let leaves = mean_probs.len();
    let classes = mean_probs.first().map_or(0, |p| p.len());
    (0..leaves)
        .map(|i| {
            let mut counts = vec![0usize; classes];
            for labels in per_tree {
                counts[labels[i]] += 1;
            }
            let mut best = 0;
            for c in 1..classes {
                let better = counts[c] > counts[best]
                    || (counts[c] == counts[best] && mean_probs[i][c] > mean_probs[i][best]);
                if better {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Voted leaf labels over a forest, with the tree-averaged leaf distributions.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub mean_probs: Vec<Vec<f64>>,
    pub traces: Vec<ForwardTrace>,
}

impl Prediction {
    pub fn from_traces(traces: Vec<ForwardTrace>) -> Self {
        assert!(!traces.is_empty(), "prediction needs at least one tree");
        let s = traces[0].leaf_count();
        let classes = traces[0].probs[0].len();
        let r = traces.len() as f64;
        let mut mean_probs = vec![vec![0.0; classes]; s];
        for t in &traces {
            for (m, p) in mean_probs.iter_mut().zip(&t.probs[..s]) {
                for (a, b) in m.iter_mut().zip(p) {
                    *a += b;
                }
            }
        }
        mean_probs.iter_mut().flatten().for_each(|v| *v /= r);
        let per_tree: Vec<Vec<usize>> = traces.iter().map(|t| t.leaf_labels()).collect();
        let labels = vote(&per_tree, &mean_probs);
        Self {
            labels,
            mean_probs,
            traces,
        }
    }
}

/// Runs every tree and votes.
pub fn predict(
    params: &RcpnParams,
    graph: &SuperpixelGraph,
    trees: &[ParseTree],
) -> Result<Prediction> {
    if trees.is_empty() {
        return Err(Error::Invalid(
            "prediction needs at least one parse tree".into(),
        ));
    }
    let traces = trees
        .iter()
        .map(|t| forward(params, graph, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prediction::from_traces(traces))
}
