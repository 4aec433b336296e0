//! Central-difference gradient checking over random graphs and parse trees.

use crate::error::Result;
use crate::forest::{build_random_tree, mark_pure_nodes, MergePolicy, ParseTree};
use crate::ingest::SuperpixelGraph;
use crate::net::{backward, forward, loss, Dims, LossMode, RcpnParams, MODULE_NAMES};
use crate::numeric::{Activation, DenseMatrix, Rng, LOG_EPS};

/// Connected random graph: a random spanning tree plus extra edges with
/// probability `extra`. Labels are uniform over `classes`, VOID with
/// probability `void`, and at least one node stays labeled.
pub fn random_graph(
    rng: &mut Rng,
    s: usize,
    d_vis: usize,
    classes: usize,
    extra: f64,
    void: f64,
) -> SuperpixelGraph {
    let mut edges = Vec::new();
    for i in 1..s {
        edges.push((rng.below(i), i));
    }
    for a in 0..s {
        for b in a + 1..s {
            if rng.bernoulli(extra) {
                edges.push((a, b));
            }
        }
    }
    let features = (0..s)
        .map(|_| (0..d_vis).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
        .collect();
    let mut labels: Vec<Option<usize>> = (0..s)
        .map(|_| {
            let l = rng.below(classes);
            (!rng.bernoulli(void)).then_some(l)
        })
        .collect();
    if labels.iter().all(|l| l.is_none()) {
        labels[rng.below(s)] = Some(rng.below(classes));
    }
    SuperpixelGraph::new(features, &edges, Some(labels), vec![1; s])
        .expect("spanning tree keeps it connected")
}

/// One gradient-check configuration.
#[derive(Clone, Debug)]
pub struct GradCase {
    pub graph: SuperpixelGraph,
    pub tree: ParseTree,
    pub params: RcpnParams,
    pub mode: LossMode,
    pub weights: Vec<f64>,
}

impl GradCase {
    /// Every entry of every block, biases included, uniform in ±0.8.
    pub fn random(
        rng: &mut Rng,
        s: usize,
        dims: Dims,
        activation: Activation,
        mode: LossMode,
    ) -> Result<Self> {
        let graph = random_graph(rng, s, dims.d_vis, dims.classes, 0.3, 0.15);
        let policy = if rng.bernoulli(0.5) {
            MergePolicy::Uniform
        } else {
            MergePolicy::Balanced
        };
        let tree = mark_pure_nodes(build_random_tree(&graph, rng, policy)?, &graph)?;
        let mut params = RcpnParams::zeros(dims, activation);
        for block in params.blocks_mut() {
            let (r, c) = block.shape();
            *block = DenseMatrix::random_uniform(r, c, 0.8, rng);
        }
        let weights = (0..dims.classes)
            .map(|_| rng.uniform_in(0.5, 2.0))
            .collect();
        Ok(Self {
            graph,
            tree,
            params,
            mode,
            weights,
        })
    }

    pub fn loss_at(&self, params: &RcpnParams) -> Result<f64> {
        let trace = forward(params, &self.graph, &self.tree)?;
        Ok(loss(&trace, &self.graph, self.mode, &self.weights)?.value)
    }

    /// Smallest |pre-activation| at the current parameters.
    pub fn kink_margin(&self) -> Result<f64> {
        Ok(forward(&self.params, &self.graph, &self.tree)?.min_abs_preactivation())
    }

    /// Smallest probability given to a loss target. Below `LOG_EPS` the
    /// clamped loss goes flat while the training signal does not, so a
    /// finite-difference check there compares different functions.
    pub fn min_target_prob(&self) -> Result<f64> {
        let trace = forward(&self.params, &self.graph, &self.tree)?;
        let labels = self.graph.labels().ok_or(crate::Error::MissingLabels)?;
        let leaves = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|c| (i, c)));
        let pure = self
            .tree
            .internal_nodes()
            .filter_map(|k| self.tree.pure_label(k).map(|c| (k, c)))
            .filter(|_| self.mode == LossMode::PureNode);
        Ok(leaves
            .chain(pure)
            .map(|(n, c)| trace.probs[n][c])
            .fold(1.0, f64::min))
    }

    /// Whether central differences are meaningful here: no relu
    /// pre-activation within `margin` of its kink and every target
    /// probability well above the clamp.
    pub fn is_smooth(&self, margin: f64) -> Result<bool> {
        let kinks_ok = self.params.activation == Activation::Tanh || self.kink_margin()? >= margin;
        Ok(kinks_ok && self.min_target_prob()? >= 1e3 * LOG_EPS)
    }
}

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub entries: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    /// `(block, row, col, analytic, numeric)` of the worst entry.
    pub worst: Option<(&'static str, usize, usize, f64, f64)>,
}

/// Compares every analytic weight gradient with a central difference of step `h`.
/// An entry passes when its relative error is within `rel` or its absolute
/// error within `abs`.
pub fn check_gradients(case: &GradCase, h: f64, rel: f64, abs: f64) -> Result<GradReport> {
    let trace = forward(&case.params, &case.graph, &case.tree)?;
    let l = loss(&trace, &case.graph, case.mode, &case.weights)?;
    let analytic = backward(&trace, &case.params, &l.signals);
    let mut report = GradReport {
        entries: 0,
        failures: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = case.params.clone();
    for (b, name) in MODULE_NAMES.iter().enumerate() {
        let (rows, cols) = case.params.blocks()[b].shape();
        for r in 0..rows {
            for c in 0..cols {
                let w = case.params.blocks()[b].get(r, c);
                probe.blocks_mut()[b].set(r, c, w + h);
                let up = case.loss_at(&probe)?;
                probe.blocks_mut()[b].set(r, c, w - h);
                let down = case.loss_at(&probe)?;
                probe.blocks_mut()[b].set(r, c, w);
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.blocks()[b].get(r, c);
                let diff = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs());
                let rel_err = if scale > 0.0 { diff / scale } else { 0.0 };
                report.entries += 1;
                if rel_err > rel && diff > abs {
                    report.failures += 1;
                }
                if diff > abs && rel_err > report.max_rel_error {
                    report.max_rel_error = rel_err;
                    report.worst = Some((name, r, c, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
