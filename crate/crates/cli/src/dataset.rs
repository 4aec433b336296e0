//! Loading image directories into super-pixel graphs.

use std::path::Path;

use rayon::prelude::*;
use rcpn_core::ingest::{
    build_graph, import_features, load_image, load_labels, FeatureSpec, LabelGrid, PixelGrid,
    SegmentationMap, SuperpixelGraph,
};
use rcpn_core::metrics::TimingReport;

use crate::{io_err, CliError, Settings};

pub struct Sample {
    pub stem: String,
    pub image: PixelGrid,
    pub seg: SegmentationMap,
    pub graph: SuperpixelGraph,
    pub labels: Option<LabelGrid>,
}

/// File stems in `dir` with extension `ext`, sorted.
pub fn list_stems(dir: &Path, ext: &str) -> Result<Vec<String>, CliError> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

pub const TIMING_STAGES: [&str; 4] = ["superpixels", "features", "network", "mrf"];

/// Reads one image (and its labels when requested), segments it and builds the graph.
pub fn load_sample(
    settings: &Settings,
    stem: &str,
    with_labels: bool,
    timing: &mut TimingReport,
) -> Result<Sample, CliError> {
    let image = load_image(settings.images.join(format!("{stem}.ppm")))
        .map_err(|e| in_file(stem, "ppm", e))?;
    let labels = if with_labels {
        let path = settings.labels.join(format!("{stem}.pgm"));
        if !path.exists() {
            return Err(CliError::Data(format!(
                "no label map {} for image {stem}",
                path.display()
            )));
        }
        Some(load_labels(&path, settings.void_value as u32).map_err(|e| in_file(stem, "pgm", e))?)
    } else {
        None
    };
    let seg = timing.time_stage("superpixels", || settings.segmenter().segment(&image))??;
    let graph = timing.time_stage("features", || -> Result<SuperpixelGraph, CliError> {
        let graph = build_graph(&seg, &image, labels.as_ref(), FeatureSpec::RegionStats)?;
        Ok(match &settings.features {
            Some(dir) => import_features(dir.join(format!("{stem}.csv")), graph)?,
            None => graph,
        })
    })??;
    Ok(Sample {
        stem: stem.to_string(),
        image,
        seg,
        graph,
        labels,
    })
}

fn in_file(stem: &str, ext: &str, e: rcpn_core::Error) -> CliError {
    CliError::Data(format!("{stem}.{ext}: {e}"))
}

/// Loads every `.ppm` in the images directory, in filename order.
pub fn load_dataset(settings: &Settings, with_labels: bool) -> Result<Vec<Sample>, CliError> {
    let stems = list_stems(&settings.images, "ppm")?;
    if stems.is_empty() {
        return Err(CliError::Data(format!(
            "no .ppm images in {}",
            settings.images.display()
        )));
    }
    stems
        .par_iter()
        .map(|stem| load_sample(settings, stem, with_labels, &mut TimingReport::new()))
        .collect()
}

/// Configured class count, or one more than the largest label seen.
pub fn class_count(settings: &Settings, samples: &[Sample]) -> Result<usize, CliError> {
    let max = samples
        .iter()
        .filter_map(|s| s.labels.as_ref())
        .flat_map(|l| l.iter().flatten())
        .max();
    match (settings.classes, max) {
        (0, None) => Err(CliError::Data("no labeled pixels in the dataset".into())),
        (0, Some(m)) => Ok((m + 1).max(2)),
        (c, Some(m)) if m >= c => Err(CliError::Data(format!(
            "label {m} found but `classes` is {c}"
        ))),
        (c, _) => Ok(c),
    }
}
