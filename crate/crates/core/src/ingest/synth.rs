//! Synthetic scenes whose ambiguous cells can only be labeled from context.
//!
//! A scene is a grid of solid cells. Exactly one cell is a marker (class 2)
//! painted in one of two marker colors. Ambiguous cells are all the same gray
//! and take class 0 under the first marker color and class 1 under the second.
//! Every other cell shows its class color and is identifiable on its own.

use super::{build_graph, grid_superpixels, FeatureSpec, LabelGrid, PixelGrid, SuperpixelGraph};
use crate::error::Result;
use crate::numeric::Rng;

pub const CLASS_A: usize = 0;
pub const CLASS_B: usize = 1;
pub const MARKER_CLASS: usize = 2;

const GRAY: [f64; 3] = [0.5, 0.5, 0.5];
const MARKER_COLORS: [[f64; 3]; 2] = [[0.95, 0.9, 0.1], [0.1, 0.9, 0.95]];
const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.7, 0.2],
    [0.0, 0.0, 0.0], // marker class, never painted from the palette
    [0.15, 0.25, 0.85],
    [0.9, 0.55, 0.1],
    [0.6, 0.2, 0.75],
    [0.45, 0.3, 0.15],
    [0.95, 0.95, 0.95],
];

/// Parameters of the synthetic context dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub cells_x: usize,
    pub cells_y: usize,
    pub cell_px: usize,
    /// Class count, at least 3.
    pub classes: usize,
    /// Fraction of non-marker cells drawn as ambiguous gray.
    pub ambiguity: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Swaps which marker color maps ambiguous cells to which class.
    pub invert_rule: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            cells_x: 4,
            cells_y: 4,
            cell_px: 8,
            classes: 4,
            ambiguity: 0.5,
            noise: 0.03,
            invert_rule: false,
        }
    }
}

impl SynthSpec {
    pub fn cell_count(&self) -> usize {
        self.cells_x * self.cells_y
    }

    pub fn width(&self) -> usize {
        self.cells_x * self.cell_px
    }

    pub fn height(&self) -> usize {
        self.cells_y * self.cell_px
    }

    pub fn ambiguous_count(&self) -> usize {
        let free = self.cell_count().saturating_sub(1);
        ((self.ambiguity.clamp(0.0, 1.0) * free as f64).round() as usize).min(free)
    }

    /// Color associated with a locally identifiable class.
    pub fn class_color(class: usize) -> [f64; 3] {
        if class < PALETTE.len() {
            PALETTE[class]
        } else {
            // evenly spaced hues on a dimmer ring for large class counts
            let hue = (class as f64 * 0.618_033_988_75).fract() * 6.0;
            let x = 1.0 - (hue % 2.0 - 1.0).abs();
            let (r, g, b) = match hue as usize {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            [0.2 + 0.6 * r, 0.2 + 0.6 * g, 0.2 + 0.6 * b]
        }
    }
}

/// One generated scene with its generative metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub image: PixelGrid,
    pub labels: LabelGrid,
    /// Per-cell class, row-major.
    pub cell_labels: Vec<usize>,
    pub marker_cell: usize,
    /// Which marker color (0 or 1) the scene uses.
    pub marker: usize,
    /// Ambiguous cell ids, ascending.
    pub ambiguous: Vec<usize>,
}

/// Draws one scene. The draw sequence is fixed, so a seed reproduces it exactly.
pub fn generate_synthetic(spec: &SynthSpec, rng: &mut Rng) -> SynthScene {
    assert!(
        spec.classes >= 3,
        "synthetic scenes need at least 3 classes"
    );
    assert!(spec.cell_count() >= 1 && spec.cell_px >= 1);
    let n = spec.cell_count();
    let marker_cell = rng.below(n);
    let marker = rng.below(2);

    let mut others: Vec<usize> = (0..n).filter(|&c| c != marker_cell).collect();
    rng.shuffle(&mut others);
    let mut ambiguous: Vec<usize> = others[..spec.ambiguous_count()].to_vec();
    ambiguous.sort_unstable();

    let context_class = if (marker == 0) != spec.invert_rule {
        CLASS_A
    } else {
        CLASS_B
    };
    let plain: Vec<usize> = (0..spec.classes).filter(|&c| c != MARKER_CLASS).collect();
    let mut cell_labels = vec![0; n];
    let mut cell_colors = vec![GRAY; n];
    for c in 0..n {
        if c == marker_cell {
            cell_labels[c] = MARKER_CLASS;
            cell_colors[c] = MARKER_COLORS[marker];
        } else if ambiguous.binary_search(&c).is_ok() {
            cell_labels[c] = context_class;
        } else {
            let class = plain[rng.below(plain.len())];
            cell_labels[c] = class;
            cell_colors[c] = SynthSpec::class_color(class);
        }
    }

    let (w, h) = (spec.width(), spec.height());
    let mut image = PixelGrid::filled(w, h, GRAY);
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let cell = (y / spec.cell_px) * spec.cells_x + x / spec.cell_px;
            let base = cell_colors[cell];
            let mut px = [0.0; 3];
            for (c, v) in px.iter_mut().enumerate() {
                *v = base[c] + spec.noise * rng.normal();
            }
            image.set_pixel(x, y, px);
            labels.push(Some(cell_labels[cell]));
        }
    }
    let labels = LabelGrid::new(w, h, labels).expect("dimensions agree");
    SynthScene {
        image,
        labels,
        cell_labels,
        marker_cell,
        marker,
        ambiguous,
    }
}

/// Seed of scene `index` in a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    Rng::derive(seed, &[index as u64]).next_u64()
}

pub fn synthetic_dataset(spec: &SynthSpec, count: usize, seed: u64) -> Vec<SynthScene> {
    (0..count)
        .map(|i| generate_synthetic(spec, &mut Rng::new(scene_seed(seed, i))))
        .collect()
}

/// Graph over the scene's cells: a grid segmentation with one super-pixel per cell.
pub fn scene_graph(spec: &SynthSpec, scene: &SynthScene) -> Result<SuperpixelGraph> {
    let seg = grid_superpixels(&scene.image, spec.cell_count())?;
    build_graph(
        &seg,
        &scene.image,
        Some(&scene.labels),
        FeatureSpec::RegionStats,
    )
}
