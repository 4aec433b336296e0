//! Image and label loading, super-pixel segmentation, region features and the
//! super-pixel adjacency graph.

mod graph;
mod pnm;
mod superpixel;
mod synth;

pub use graph::{
    build_graph, export_features, import_features, parse_features, FeatureSpec, SuperpixelGraph,
};
pub use pnm::{
    decode_pgm_labels, decode_ppm, encode_pgm_labels, encode_ppm, encode_ppm_ascii, load_image,
    load_labels, save_image, save_labels,
};
pub use superpixel::{grid_superpixels, slic_superpixels, SuperpixelMethod};
pub use synth::{
    generate_synthetic, scene_graph, scene_seed, synthetic_dataset, SynthScene, SynthSpec,
};

use crate::error::{Error, Result};

/// RGB image with channel values in `[0, 1]`, stored row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("empty image {width}x{height}")));
        }
        if values.len() != width * height * 3 {
            return Err(Error::shape(
                "pixel buffer",
                width * height * 3,
                values.len(),
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let values = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    #[inline]
    pub fn pixel_at(&self, idx: usize) -> [f64; 3] {
        [
            self.values[3 * idx],
            self.values[3 * idx + 1],
            self.values[3 * idx + 2],
        ]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        for (c, v) in rgb.into_iter().enumerate() {
            self.values[i + c] = v.clamp(0.0, 1.0);
        }
    }
}

/// Per-pixel class indices; `None` is VOID (unlabeled / ignored).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    width: usize,
    height: usize,
    labels: Vec<Option<usize>>,
}

impl LabelGrid {
    pub fn new(width: usize, height: usize, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape("label buffer", width * height, labels.len()));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<usize> {
        self.labels[y * self.width + x]
    }

    pub fn at(&self, idx: usize) -> Option<usize> {
        self.labels[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.labels.iter().copied()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Paints every pixel with the label of its super-pixel.
    pub fn from_superpixels(seg: &SegmentationMap, per_superpixel: &[usize]) -> Self {
        let labels = seg.ids().iter().map(|&s| Some(per_superpixel[s])).collect();
        Self {
            width: seg.width(),
            height: seg.height(),
            labels,
        }
    }
}

/// Partition of the image into `count` super-pixels with ids `0..count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    count: usize,
    ids: Vec<usize>,
}

impl SegmentationMap {
    /// Validates that every id is in range and every super-pixel is non-empty.
    pub fn new(width: usize, height: usize, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != width * height {
            return Err(Error::shape(
                "segmentation buffer",
                width * height,
                ids.len(),
            ));
        }
        let count = ids.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; count];
        for &i in &ids {
            seen[i] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("super-pixel {empty} has no pixels")));
        }
        Ok(Self {
            width,
            height,
            count,
            ids,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    #[inline]
    pub fn id(&self, x: usize, y: usize) -> usize {
        self.ids[y * self.width + x]
    }

    pub fn pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.count];
        for &i in &self.ids {
            counts[i] += 1;
        }
        counts
    }
}
