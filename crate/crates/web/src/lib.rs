//! Browser bindings: draw a synthetic scene, grow a random parse tree over its
//! cells, and compare context-aware labeling with the local baseline.

use std::fmt::Write as _;

use rcpn_core::forest::{build_random_tree, MergePolicy, ParseTree};
use rcpn_core::ingest::{
    generate_synthetic, scene_graph, synthetic_dataset, LabelGrid, PixelGrid, SuperpixelGraph,
    SynthScene, SynthSpec,
};
use rcpn_core::net::RcpnParams;
use rcpn_core::numeric::Rng;
use rcpn_core::trainer::{infer_graph, train, train_from, TrainConfig};
use wasm_bindgen::prelude::*;

const VOID_RGB: [u8; 3] = [0, 0, 0];

fn to_rgba(img: &PixelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width() * img.height() * 4);
    for i in 0..img.width() * img.height() {
        let p = img.pixel_at(i);
        out.extend(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out.push(255);
    }
    out
}

fn labels_rgba(labels: &LabelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.width() * labels.height() * 4);
    for l in labels.iter() {
        let rgb = match l {
            Some(c) => SynthSpec::class_color(c).map(|v| (v * 255.0).round() as u8),
            None => VOID_RGB,
        };
        out.extend(rgb);
        out.push(255);
    }
    out
}

/// Demo state: the current scene plus the two trained models, if any.
#[wasm_bindgen]
pub struct Demo {
    spec: SynthSpec,
    scene: SynthScene,
    graph: SuperpixelGraph,
    training: Vec<SuperpixelGraph>,
    chunks: u64,
    context: Option<(RcpnParams, TrainConfig)>,
    local: Option<(RcpnParams, TrainConfig)>,
}

impl Demo {
    pub fn create(seed: u64, ambiguity: f64) -> rcpn_core::Result<Demo> {
        let spec = SynthSpec {
            ambiguity,
            ..Default::default()
        };
        let scene = generate_synthetic(&spec, &mut Rng::new(seed));
        let graph = scene_graph(&spec, &scene)?;
        Ok(Demo {
            spec,
            scene,
            graph,
            training: Vec::new(),
            chunks: 0,
            context: None,
            local: None,
        })
    }

    pub fn tree(&self, seed: u64, balanced: bool) -> rcpn_core::Result<ParseTree> {
        let policy = if balanced {
            MergePolicy::Balanced
        } else {
            MergePolicy::Uniform
        };
        build_random_tree(&self.graph, &mut Rng::new(seed), policy)
    }

    /// Draws a fresh training set and initializes both models.
    pub fn prepare(&mut self, images: usize, seed: u64) -> rcpn_core::Result<()> {
        self.training = synthetic_dataset(&self.spec, images, seed)
            .iter()
            .map(|s| scene_graph(&self.spec, s))
            .collect::<rcpn_core::Result<Vec<_>>>()?;
        let base = TrainConfig {
            epochs: 0,
            seed,
            r_train: 4,
            r_test: 8,
            d_sem: 16,
            learning_rate: 0.03,
            ..Default::default()
        };
        let local_cfg = TrainConfig {
            local_only: true,
            ..base.clone()
        };
        let classes = self.spec.classes;
        self.context = Some((train(&self.training, classes, &base)?.params, base));
        self.local = Some((
            train(&self.training, classes, &local_cfg)?.params,
            local_cfg,
        ));
        self.chunks = 0;
        Ok(())
    }

    /// Continues training both models; returns their mean losses over the chunk.
    /// Each chunk draws its trees and visiting order from a fresh seed.
    pub fn fit_chunk(&mut self, epochs: usize) -> rcpn_core::Result<(f64, f64)> {
        self.chunks += 1;
        let chunk = self.chunks;
        let step = |model: &mut Option<(RcpnParams, TrainConfig)>, graphs: &[SuperpixelGraph]| {
            let (params, cfg) = model
                .as_mut()
                .ok_or_else(|| rcpn_core::Error::Invalid("call prepare first".into()))?;
            let run = TrainConfig {
                epochs,
                seed: cfg.seed.wrapping_add(chunk),
                ..cfg.clone()
            };
            let out = train_from(params.clone(), graphs, &run)?;
            *params = out.params;
            let n = out.loss_curve.len().max(1) as f64;
            Ok::<f64, rcpn_core::Error>(out.loss_curve.iter().sum::<f64>() / n)
        };
        let a = step(&mut self.context, &self.training)?;
        let b = step(&mut self.local, &self.training)?;
        Ok((a, b))
    }

    /// Per-cell predictions of the chosen model on the current scene.
    pub fn cell_predictions(&self, context: bool) -> rcpn_core::Result<Option<Vec<usize>>> {
        let model = if context { &self.context } else { &self.local };
        let Some((params, cfg)) = model else {
            return Ok(None);
        };
        Ok(Some(infer_graph(params, &self.graph, 0, cfg)?.labels))
    }

    pub fn scene(&self) -> &SynthScene {
        &self.scene
    }
}

fn js_err(e: rcpn_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, ambiguity: f64) -> Result<Demo, JsError> {
        Demo::create(seed, ambiguity).map_err(js_err)
    }

    /// Replaces the scene and keeps any trained models.
    pub fn new_scene(&mut self, seed: u64) -> Result<(), JsError> {
        self.scene = generate_synthetic(&self.spec, &mut Rng::new(seed));
        self.graph = scene_graph(&self.spec, &self.scene).map_err(js_err)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.spec.width()
    }

    pub fn height(&self) -> usize {
        self.spec.height()
    }

    pub fn cells_x(&self) -> usize {
        self.spec.cells_x
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        to_rgba(&self.scene.image)
    }

    pub fn truth_rgba(&self) -> Vec<u8> {
        labels_rgba(&self.scene.labels)
    }

    /// Ambiguous cell ids of the current scene.
    pub fn ambiguous_cells(&self) -> Vec<u32> {
        self.scene.ambiguous.iter().map(|&c| c as u32).collect()
    }

    /// A random parse tree as JSON: node positions in cell units, parent links, depth.
    pub fn parse_tree(&self, seed: u64, balanced: bool) -> Result<String, JsError> {
        let tree = self.tree(seed, balanced).map_err(js_err)?;
        Ok(tree_json(&tree, self.spec.cells_x))
    }

    pub fn prepare_training(&mut self, images: usize, seed: u64) -> Result<(), JsError> {
        self.prepare(images, seed).map_err(js_err)
    }

    /// Returns `[context_loss, local_loss]` averaged over the chunk.
    pub fn train_chunk(&mut self, epochs: usize) -> Result<Vec<f64>, JsError> {
        let (a, b) = self.fit_chunk(epochs).map_err(js_err)?;
        Ok(vec![a, b])
    }

    pub fn trained(&self) -> bool {
        self.context.is_some()
    }

    /// Label colors of the chosen model; empty before training.
    pub fn label_rgba(&self, context: bool) -> Result<Vec<u8>, JsError> {
        let Some(cells) = self.cell_predictions(context).map_err(js_err)? else {
            return Ok(Vec::new());
        };
        let labels: Vec<Option<usize>> = (0..self.width() * self.height())
            .map(|i| {
                let (x, y) = (i % self.width(), i / self.width());
                Some(cells[(y / self.spec.cell_px) * self.spec.cells_x + x / self.spec.cell_px])
            })
            .collect();
        let grid = LabelGrid::new(self.width(), self.height(), labels).map_err(js_err)?;
        Ok(labels_rgba(&grid))
    }

    /// Fraction of ambiguous cells labeled correctly, NaN before training or
    /// when the scene has none.
    pub fn ambiguous_accuracy(&self, context: bool) -> Result<f64, JsError> {
        let Some(cells) = self.cell_predictions(context).map_err(js_err)? else {
            return Ok(f64::NAN);
        };
        Ok(ambiguous_accuracy(&self.scene, &cells))
    }
}

pub fn ambiguous_accuracy(scene: &SynthScene, cells: &[usize]) -> f64 {
    let amb = &scene.ambiguous;
    let hits = amb
        .iter()
        .filter(|&&c| cells[c] == scene.cell_labels[c])
        .count();
    hits as f64 / amb.len() as f64
}

/// Each node sits at the mean center of its cells.
pub fn tree_json(tree: &ParseTree, cells_x: usize) -> String {
    let mut s = format!(
        "{{\"depth\":{},\"leaves\":{},\"nodes\":[",
        tree.depth(),
        tree.leaf_count()
    );
    for node in 0..tree.node_count() {
        let region = tree.region(node);
        let n = region.len() as f64;
        let x = region
            .iter()
            .map(|&c| (c % cells_x) as f64 + 0.5)
            .sum::<f64>()
            / n;
        let y = region
            .iter()
            .map(|&c| (c / cells_x) as f64 + 0.5)
            .sum::<f64>()
            / n;
        let parent = tree.parent(node).map(|p| p as i64).unwrap_or(-1);
        if node > 0 {
            s.push(',');
        }
        let _ = write!(
            s,
            "{{\"x\":{x},\"y\":{y},\"parent\":{parent},\"size\":{}}}",
            region.len()
        );
    }
    s.push_str("]}");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_buffers_have_rgba_length() {
        let d = Demo::create(3, 0.5).unwrap();
        let n = d.width() * d.height() * 4;
        assert_eq!(d.image_rgba().len(), n);
        assert_eq!(d.truth_rgba().len(), n);
        assert!(d.image_rgba().chunks(4).all(|p| p[3] == 255));
    }

    #[test]
    fn tree_json_lists_every_node() {
        let d = Demo::create(3, 0.5).unwrap();
        let tree = d.tree(9, true).unwrap();
        let json = tree_json(&tree, d.cells_x());
        assert_eq!(json.matches("\"parent\"").count(), 2 * 16 - 1);
        assert_eq!(json.matches("\"parent\":-1").count(), 1);
        assert!(json.starts_with(&format!("{{\"depth\":{},\"leaves\":16", tree.depth())));
    }

    #[test]
    fn predictions_absent_before_training() {
        let d = Demo::create(3, 0.5).unwrap();
        assert!(d.cell_predictions(true).unwrap().is_none());
    }

    #[test]
    fn demo_training_uses_context() {
        let mut d = Demo::create(5, 0.5).unwrap();
        d.prepare(40, 1).unwrap();
        for _ in 0..15 {
            let (ctx, loc) = d.fit_chunk(10).unwrap();
            assert!(ctx.is_finite() && loc.is_finite());
        }
        let (mut c_hits, mut l_hits, mut n) = (0, 0, 0);
        for seed in 100..120 {
            d.new_scene(seed).unwrap();
            let c = d.cell_predictions(true).unwrap().unwrap();
            let l = d.cell_predictions(false).unwrap().unwrap();
            for &a in &d.scene().ambiguous {
                c_hits += (c[a] == d.scene().cell_labels[a]) as usize;
                l_hits += (l[a] == d.scene().cell_labels[a]) as usize;
                n += 1;
            }
        }
        let (c, l) = (c_hits as f64 / n as f64, l_hits as f64 / n as f64);
        assert!(c >= 0.9 && c > l, "context {c} local {l}");
    }
}
