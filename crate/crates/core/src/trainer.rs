//! Training loop over images and freshly drawn parse forests, with
//! per-module gradient-strength diagnostics and checkpointing.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forest::{build_random_tree, mark_pure_nodes, MergePolicy, ParseTree};
use crate::ingest::SuperpixelGraph;
use crate::net::{
    backward, forward, forward_local, loss_with_normalizers, predict, Dims, Gradients, LossMode,
    Prediction, RcpnParams,
};
use crate::numeric::{Activation, DenseMatrix, Rng};

const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_TRAIN_TREES: u64 = 3;
const STREAM_INFER_TREES: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub r_train: usize,
    pub r_test: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub balanced: bool,
    pub policy: MergePolicy,
    pub d_sem: usize,
    pub activation: Activation,
    /// Skip the combiner/decombiner and classify mapper output directly.
    pub local_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            r_train: 10,
            r_test: 40,
            epochs: 10,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            clip_norm: 5.0,
            seed: 1,
            loss_mode: LossMode::PureNode,
            balanced: false,
            policy: MergePolicy::Balanced,
            d_sem: 60,
            activation: Activation::Tanh,
            local_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.r_train == 0 || self.r_test == 0 {
            return bad(format!(
                "tree counts must be positive (r_train={}, r_test={})",
                self.r_train, self.r_test
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            ));
        }
        if self.d_sem == 0 {
            return bad("d_sem must be positive".into());
        }
        Ok(())
    }

    /// `key = value` lines, the same keys the command line uses.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "r_train = {}", self.r_train);
        let _ = writeln!(s, "r_test = {}", self.r_test);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "momentum = {:?}", self.momentum);
        let _ = writeln!(s, "weight_decay = {:?}", self.weight_decay);
        let _ = writeln!(s, "clip_norm = {:?}", self.clip_norm);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "loss_mode = {}", self.loss_mode.name());
        let _ = writeln!(s, "balanced = {}", self.balanced);
        let _ = writeln!(s, "policy = {}", self.policy.name());
        let _ = writeln!(s, "d_sem = {}", self.d_sem);
        let _ = writeln!(s, "activation = {}", self.activation.name());
        let _ = writeln!(s, "local_only = {}", self.local_only);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed config line `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = || Error::Checkpoint(format!("invalid value `{v}` for `{k}`"));
            match k {
                "r_train" => c.r_train = v.parse().map_err(|_| bad())?,
                "r_test" => c.r_test = v.parse().map_err(|_| bad())?,
                "epochs" => c.epochs = v.parse().map_err(|_| bad())?,
                "learning_rate" => c.learning_rate = v.parse().map_err(|_| bad())?,
                "momentum" => c.momentum = v.parse().map_err(|_| bad())?,
                "weight_decay" => c.weight_decay = v.parse().map_err(|_| bad())?,
                "clip_norm" => c.clip_norm = v.parse().map_err(|_| bad())?,
                "seed" => c.seed = v.parse().map_err(|_| bad())?,
                "loss_mode" => c.loss_mode = LossMode::parse(v).ok_or_else(bad)?,
                "balanced" => c.balanced = v.parse().map_err(|_| bad())?,
                "policy" => c.policy = MergePolicy::parse(v).ok_or_else(bad)?,
                "d_sem" => c.d_sem = v.parse().map_err(|_| bad())?,
                "activation" => c.activation = Activation::parse(v).ok_or_else(bad)?,
                "local_only" => c.local_only = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Checkpoint(format!("unknown config key `{k}`"))),
            }
        }
        Ok(c)
    }
}

/// Inverse-frequency class weights over labeled super-pixels, rescaled so the
/// present classes average to one; absent classes get zero. All ones when
/// `balanced` is false.
pub fn class_weights(
    graphs: &[SuperpixelGraph],
    classes: usize,
    balanced: bool,
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; classes];
    let mut any = false;
    for g in graphs {
        for &l in g.labels().ok_or(Error::MissingLabels)?.iter().flatten() {
            if l >= classes {
                return Err(Error::ClassOutOfRange { target: l, classes });
            }
            counts[l] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::NoLabeledNodes);
    }
    if !balanced {
        return Ok(vec![1.0; classes]);
    }
    let total: usize = counts.iter().sum();
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { total as f64 / n as f64 })
        .collect();
    let present = counts.iter().filter(|&&n| n > 0).count() as f64;
    let mean = raw.iter().sum::<f64>() / present;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Momentum SGD with global-norm clipping and L2 decay, in place.
pub fn sgd_step(
    params: &mut RcpnParams,
    grads: &Gradients,
    velocity: &mut Gradients,
    config: &TrainConfig,
) -> Result<()> {
    for (name, g) in crate::net::MODULE_NAMES.iter().zip(grads.blocks()) {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { block: name });
        }
    }
    let norm = grads.global_norm();
    let scale = if norm > config.clip_norm {
        config.clip_norm / norm
    } else {
        1.0
    };
    for ((p, g), v) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(velocity.blocks_mut())
    {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = config.momentum * *vi
                - config.learning_rate * (scale * gi + config.weight_decay * *w);
            *w += *vi;
        }
    }
    Ok(())
}

/// One optimizer step's diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub iteration: usize,
    pub loss: f64,
    /// Normalized strengths for sem, com, dec, cat.
    pub strengths: [f64; 4],
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    let mut s = String::from("iter,loss,g_sem,g_com,g_dec,g_cat\n");
    for r in rows {
        let [a, b, c, d] = r.strengths;
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?}",
            r.iteration, r.loss, a, b, c, d
        );
    }
    s
}

pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{e},{l:?}");
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: RcpnParams,
    pub diagnostics: Vec<DiagnosticsRow>,
    /// Mean image loss per epoch.
    pub loss_curve: Vec<f64>,
}

#[cfg(feature = "parallel")]
fn map_ordered<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Draws `count` marked parse trees from a dedicated random stream.
pub fn draw_forest(
    graph: &SuperpixelGraph,
    count: usize,
    policy: MergePolicy,
    seed: u64,
    stream: &[u64],
) -> Result<Vec<ParseTree>> {
    (0..count as u64)
        .map(|r| {
            let mut keys = stream.to_vec();
            keys.push(r);
            let mut rng = Rng::derive(seed, &keys);
            let tree = build_random_tree(graph, &mut rng, policy)?;
            if graph.labels().is_some() {
                mark_pure_nodes(tree, graph)
            } else {
                Ok(tree)
            }
        })
        .collect()
}

/// Loss and summed gradients of one image over its forest, normalized so the
/// leaf term averages over all labeled leaves of all trees and the pure-node
/// term over all pure nodes of all trees.
pub fn image_gradients(
    params: &RcpnParams,
    graph: &SuperpixelGraph,
    trees: &[ParseTree],
    mode: LossMode,
    weights: &[f64],
) -> Result<(f64, Gradients)> {
    let labeled = graph
        .labels()
        .ok_or(Error::MissingLabels)?
        .iter()
        .filter(|l| l.is_some())
        .count();
    let leaf_norm = (trees.len() * labeled) as f64;
    let pure_total: usize = trees.iter().map(|t| t.pure_count()).sum();
    let pure_norm = pure_total.max(1) as f64;
    let per_tree = map_ordered(trees, |tree| -> Result<(f64, Gradients)> {
        let trace = forward(params, graph, tree)?;
        let l = loss_with_normalizers(
            &trace,
            graph,
            mode,
            weights,
            Some(leaf_norm),
            Some(pure_norm),
        )?;
        Ok((l.value, backward(&trace, params, &l.signals)))
    });
    let mut total = Gradients::zeros_like(params);
    let mut value = 0.0;
    for r in per_tree {
        let (v, g) = r?;
        value += v;
        total.add_assign(&g);
    }
    Ok((value, total))
}

/// Context-free variant: mapper and categorizer only.
pub fn image_gradients_local(
    params: &RcpnParams,
    graph: &SuperpixelGraph,
    weights: &[f64],
) -> Result<(f64, Gradients)> {
    let trace = forward_local(params, graph)?;
    let l = loss_with_normalizers(&trace, graph, LossMode::Rcpn, weights, None, None)?;
    Ok((l.value, backward(&trace, params, &l.signals)))
}

/// Trains from a fresh initialization.
pub fn train(
    graphs: &[SuperpixelGraph],
    classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let d_vis = graphs
        .first()
        .ok_or_else(|| Error::Invalid("empty training set".into()))?
        .feature_dim();
    let dims = Dims {
        d_vis,
        d_sem: config.d_sem,
        classes,
    };
    let params = RcpnParams::init(
        dims,
        config.activation,
        &mut Rng::derive(config.seed, &[STREAM_INIT]),
    );
    train_from(params, graphs, config)
}

/// Continues training `params`.
pub fn train_from(
    mut params: RcpnParams,
    graphs: &[SuperpixelGraph],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = params.dims();
    for (i, g) in graphs.iter().enumerate() {
        if g.feature_dim() != dims.d_vis {
            return Err(Error::shape(
                "visual feature dimension",
                dims.d_vis,
                format!("{} in image {i}", g.feature_dim()),
            ));
        }
    }
    let weights = class_weights(graphs, dims.classes, config.balanced)?;
    let mut velocity = Gradients::zeros_like(&params);
    let mut diagnostics = Vec::new();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut iteration = 0;
    for epoch in 0..config.epochs as u64 {
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        Rng::derive(config.seed, &[STREAM_ORDER, epoch]).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let graph = &graphs[i];
            let (value, grads) = if config.local_only {
                image_gradients_local(&params, graph, &weights)?
            } else {
                let trees = draw_forest(
                    graph,
                    config.r_train,
                    config.policy,
                    config.seed,
                    &[STREAM_TRAIN_TREES, epoch, i as u64],
                )?;
                image_gradients(&params, graph, &trees, config.loss_mode, &weights)?
            };
            diagnostics.push(DiagnosticsRow {
                iteration,
                loss: value,
                strengths: grads.normalized_strengths(),
            });
            sgd_step(&mut params, &grads, &mut velocity, config)?;
            epoch_loss += value;
            iteration += 1;
        }
        loss_curve.push(epoch_loss / graphs.len().max(1) as f64);
    }
    Ok(TrainOutcome {
        params,
        diagnostics,
        loss_curve,
    })
}

/// Test-time forest for image `index` and the voted prediction over it.
pub fn infer_graph(
    params: &RcpnParams,
    graph: &SuperpixelGraph,
    index: usize,
    config: &TrainConfig,
) -> Result<Prediction> {
    if config.local_only {
        return Ok(Prediction::from_traces(vec![forward_local(params, graph)?]));
    }
    let trees = draw_forest(
        graph,
        config.r_test,
        config.policy,
        config.seed,
        &[STREAM_INFER_TREES, index as u64],
    )?;
    predict(params, graph, &trees)
}

const MAGIC: &[u8; 8] = b"RCPNCKPT";
const FORMAT_VERSION: u32 = 1;

/// Layout (little endian): magic `RCPNCKPT`, u32 version, u32 d_vis, u32 d_sem,
/// u32 classes, u8 activation (0 tanh, 1 relu), the W_sem, W_com, W_dec, W_cat
/// blocks as row-major f64, then a u32 length and the training config as
/// `key = value` text.
pub fn encode_checkpoint(params: &RcpnParams, config: &TrainConfig) -> Vec<u8> {
    let d = params.dims();
    let mut out = Vec::with_capacity(32 + 8 * params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [d.d_vis, d.d_sem, d.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match params.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    });
    for b in params.blocks() {
        for v in b.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let text = config.to_kv();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out
}

pub fn decode_checkpoint(data: &[u8]) -> Result<(RcpnParams, TrainConfig)> {
    let corrupt = |m: &str| Error::Checkpoint(m.to_string());
    if data.len() < 8 || &data[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic: expected `{}`",
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = data
            .get(pos..pos + n)
            .ok_or_else(|| corrupt("truncated payload"))?;
        pos += n;
        Ok(s)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let d_vis = u32_at(take(4)?) as usize;
    let d_sem = u32_at(take(4)?) as usize;
    let classes = u32_at(take(4)?) as usize;
    let activation = match take(1)?[0] {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown activation code {other}"
            )))
        }
    };
    let mut params = RcpnParams::zeros(
        Dims {
            d_vis,
            d_sem,
            classes,
        },
        activation,
    );
    for block in params.blocks_mut() {
        let n = block.len();
        let bytes = take(8 * n)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (r, c) = block.shape();
        *block =
            DenseMatrix::from_vec(r, c, values).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    let len = u32_at(take(4)?) as usize;
    let text = std::str::from_utf8(take(len)?).map_err(|_| corrupt("config is not UTF-8"))?;
    let config = TrainConfig::from_kv(text)?;
    if pos != data.len() {
        return Err(corrupt("trailing bytes after config"));
    }
    Ok((params, config))
}

pub fn save_checkpoint(
    params: &RcpnParams,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, config))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RcpnParams, TrainConfig)> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(labels: &[usize]) -> SuperpixelGraph {
        let s = labels.len();
        let edges: Vec<_> = (1..s).map(|i| (i - 1, i)).collect();
        SuperpixelGraph::new(
            (0..s).map(|i| vec![i as f64 / s as f64, 0.5]).collect(),
            &edges,
            Some(labels.iter().map(|&l| Some(l)).collect()),
            vec![1; s],
        )
        .unwrap()
    }

    #[test]
    fn class_weight_examples() {
        let g = labeled(&[0, 1, 0, 1]);
        assert_eq!(
            class_weights(&[g.clone()], 2, true).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(class_weights(&[g], 2, false).unwrap(), vec![1.0, 1.0]);

        let mut l = vec![0; 90];
        l.extend(vec![1; 10]);
        let w = class_weights(&[labeled(&l)], 3, true).unwrap();
        let avg = (1.0 / 0.9 + 1.0 / 0.1) / 2.0;
        assert!((w[0] - (1.0 / 0.9) / avg).abs() < 1e-12);
        assert!((w[1] - (1.0 / 0.1) / avg).abs() < 1e-12);
        assert!((w[0] - 0.2).abs() < 1e-12);
        assert!((w[1] - 1.8).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn class_weights_need_labels() {
        let s = SuperpixelGraph::new(vec![vec![0.0]], &[], Some(vec![None]), vec![1]).unwrap();
        assert!(matches!(
            class_weights(&[s], 2, true),
            Err(Error::NoLabeledNodes)
        ));
    }

    fn unit_grads(params: &RcpnParams, value: f64) -> Gradients {
        let mut g = Gradients::zeros_like(params);
        for b in g.blocks_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = value);
        }
        g
    }

    #[test]
    fn plain_descent_step() {
        let mut rng = Rng::new(1);
        let dims = Dims {
            d_vis: 2,
            d_sem: 2,
            classes: 2,
        };
        let p0 = RcpnParams::init(dims, Activation::Tanh, &mut rng);
        let g = unit_grads(&p0, 0.5);
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            clip_norm: f64::INFINITY,
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut p = p0.clone();
        let mut v = Gradients::zeros_like(&p);
        sgd_step(&mut p, &g, &mut v, &cfg).unwrap();
        for (a, b) in p.blocks().iter().zip(p0.blocks()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, y - 0.1 * 0.5);
            }
        }
    }

    #[test]
    fn clipping_caps_applied_norm() {
        let dims = Dims {
            d_vis: 2,
            d_sem: 2,
            classes: 2,
        };
        let p0 = RcpnParams::zeros(dims, Activation::Tanh);
        let n = p0.parameter_count() as f64;
        let g = unit_grads(&p0, 10.0 / n.sqrt());
        assert!((g.global_norm() - 10.0).abs() < 1e-12);
        let cfg = TrainConfig {
            momentum: 0.0,
            clip_norm: 1.0,
            learning_rate: 1.0,
            ..Default::default()
        };
        let mut p = p0.clone();
        let mut v = Gradients::zeros_like(&p);
        sgd_step(&mut p, &g, &mut v, &cfg).unwrap();
        let applied: f64 = p
            .blocks()
            .iter()
            .map(|b| b.squared_norm())
            .sum::<f64>()
            .sqrt();
        assert!((applied - 1.0).abs() < 1e-12);
    }

    #[test]
    fn momentum_two_steps() {
        let dims = Dims {
            d_vis: 1,
            d_sem: 1,
            classes: 2,
        };
        let p0 = RcpnParams::zeros(dims, Activation::Tanh);
        let g = unit_grads(&p0, 1.0);
        let cfg = TrainConfig {
            momentum: 0.9,
            learning_rate: 0.1,
            clip_norm: f64::INFINITY,
            ..Default::default()
        };
        let mut p = p0.clone();
        let mut v = Gradients::zeros_like(&p);
        sgd_step(&mut p, &g, &mut v, &cfg).unwrap();
        // v1 = -0.1, w1 = -0.1
        assert!((p.w_sem.get(0, 0) + 0.1).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut v, &cfg).unwrap();
        // v2 = 0.9 * -0.1 - 0.1 = -0.19, w2 = -0.29
        assert!((v.sem.get(0, 0) + 0.19).abs() < 1e-15);
        assert!((p.w_sem.get(0, 0) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let dims = Dims {
            d_vis: 1,
            d_sem: 1,
            classes: 2,
        };
        let mut p = RcpnParams::zeros(dims, Activation::Tanh);
        let mut g = Gradients::zeros_like(&p);
        g.com.set(0, 0, f64::NAN);
        let mut v = Gradients::zeros_like(&p);
        let e = sgd_step(&mut p, &g, &mut v, &TrainConfig::default()).unwrap_err();
        assert!(matches!(e, Error::NonFinite { block: "com" }));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let graphs = vec![labeled(&[0, 0, 1, 1]), labeled(&[1, 0, 1])];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            r_train: 2,
            d_sem: 3,
            ..Default::default()
        };
        let init = RcpnParams::init(
            Dims {
                d_vis: 2,
                d_sem: 3,
                classes: 2,
            },
            Activation::Tanh,
            &mut Rng::derive(cfg.seed, &[STREAM_INIT]),
        );
        let out = train(&graphs, 2, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.diagnostics.len(), 6);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let mut rng = Rng::new(9);
        let p = RcpnParams::init(
            Dims {
                d_vis: 4,
                d_sem: 3,
                classes: 5,
            },
            Activation::Relu,
            &mut rng,
        );
        let cfg = TrainConfig {
            seed: 77,
            loss_mode: LossMode::Rcpn,
            d_sem: 3,
            learning_rate: 0.123456789,
            ..Default::default()
        };
        let bytes = encode_checkpoint(&p, &cfg);
        let (p2, c2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(p2, p);
        assert_eq!(c2, cfg);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let e = decode_checkpoint(&bad).unwrap_err().to_string();
        assert!(e.contains("RCPNCKPT"), "{e}");

        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(decode_checkpoint(&v2)
            .unwrap_err()
            .to_string()
            .contains("version 2"));

        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());

        let e = p2
            .check_dims(Dims {
                d_vis: 4,
                d_sem: 30,
                classes: 5,
            })
            .unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch { .. }));
    }
}
