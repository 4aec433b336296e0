//! The five subcommands. Each writes its artifacts under `out` and returns
//! what it computed so callers and tests can inspect it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use rcpn_core::ingest::{
    encode_pgm_labels, encode_ppm, generate_synthetic, load_labels, scene_seed,
};
use rcpn_core::ingest::{LabelGrid, PixelGrid, SynthScene, SynthSpec};
use rcpn_core::metrics::{ConfusionMatrix, Scores, TimingReport};
use rcpn_core::mrf::decode_forest;
use rcpn_core::net::{LossMode, RcpnParams};
use rcpn_core::numeric::Rng;
use rcpn_core::trainer::{
    diagnostics_csv, infer_graph, load_checkpoint, loss_curve_csv, save_checkpoint, train,
    DiagnosticsRow, TrainConfig, TrainOutcome,
};

use crate::config::ConfigValue;
use crate::dataset::{class_count, list_stems, load_dataset, load_sample, Sample, TIMING_STAGES};
use crate::{create_dir, write_file, CliConfig, CliError, Command, Settings};

/// Runs the configured command and returns a one-line summary.
pub fn run(config: &CliConfig) -> Result<String, CliError> {
    let s = &config.settings;
    create_dir(&s.out)?;
    write_file(&s.out.join("resolved_config"), s.resolved())?;
    match config.command {
        Command::Synth => {
            let scenes = cmd_synth(s)?;
            Ok(format!(
                "wrote {} scenes to {}",
                scenes.len(),
                s.out.display()
            ))
        }
        Command::Train => {
            let (outcome, scores) = cmd_train(s)?;
            Ok(format!(
                "trained {} steps, final loss {:.4}; train ppa {:.4} mca {:.4} iou {:.4}",
                outcome.diagnostics.len(),
                outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
                scores.ppa,
                scores.mca,
                scores.iou
            ))
        }
        Command::Infer => {
            let n = cmd_infer(s)?.len();
            Ok(format!(
                "labeled {n} images into {}",
                s.out.join("predictions").display()
            ))
        }
        Command::Eval => {
            let (scores, _) = cmd_eval(s)?;
            Ok(format!(
                "ppa {:.4} mca {:.4} iou {:.4}",
                scores.ppa, scores.mca, scores.iou
            ))
        }
        Command::Diag => {
            let d = cmd_diag(s)?;
            Ok(format!(
                "early g_com/g_sem: rcpn {:.4}, pure_node {:.4}",
                d.early_ratio_rcpn, d.early_ratio_pure_node
            ))
        }
    }
}

/// One scene line of a synthetic manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestScene {
    pub name: String,
    pub seed: u64,
    pub marker: usize,
    pub marker_cell: usize,
    pub ambiguous: Vec<usize>,
}

pub fn scene_name(i: usize) -> String {
    format!("img_{i:04}")
}

pub fn manifest_text(
    spec: &SynthSpec,
    seed: u64,
    scenes: &[(ManifestScene, SynthScene)],
) -> String {
    let mut m = String::from("# synthetic context dataset\n");
    let _ = writeln!(m, "cells_x = {}", spec.cells_x);
    let _ = writeln!(m, "cells_y = {}", spec.cells_y);
    let _ = writeln!(m, "cell_px = {}", spec.cell_px);
    let _ = writeln!(m, "classes = {}", spec.classes);
    let _ = writeln!(m, "ambiguity = {:?}", spec.ambiguity);
    let _ = writeln!(m, "noise = {:?}", spec.noise);
    let _ = writeln!(m, "invert_rule = {}", spec.invert_rule);
    let _ = writeln!(m, "seed = {seed}");
    let _ = writeln!(m, "count = {}", scenes.len());
    m.push_str("# scene = name,seed,marker,marker_cell,ambiguous cells\n");
    for (e, _) in scenes {
        let _ = writeln!(
            m,
            "scene = {},{},{},{},{}",
            e.name,
            e.seed,
            e.marker,
            e.marker_cell,
            e.ambiguous.render().replace(',', ";")
        );
    }
    m
}

pub fn parse_manifest(text: &str) -> Result<(SynthSpec, Vec<ManifestScene>), CliError> {
    let mut spec = SynthSpec::default();
    let mut scenes = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || CliError::Data(format!("manifest line {}: cannot parse `{line}`", n + 1));
        let (k, v) = line.split_once('=').ok_or_else(bad)?;
        let v = v.trim();
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match k.trim() {
            "cells_x" => spec.cells_x = num(v)?,
            "cells_y" => spec.cells_y = num(v)?,
            "cell_px" => spec.cell_px = num(v)?,
            "classes" => spec.classes = num(v)?,
            "ambiguity" => spec.ambiguity = v.parse().map_err(|_| bad())?,
            "noise" => spec.noise = v.parse().map_err(|_| bad())?,
            "invert_rule" => spec.invert_rule = v.parse().map_err(|_| bad())?,
            "seed" | "count" => {}
            "scene" => {
                let f: Vec<&str> = v.split(',').collect();
                if f.len() != 5 {
                    return Err(bad());
                }
                let ambiguous = if f[4].is_empty() {
                    Vec::new()
                } else {
                    f[4].split(';').map(num).collect::<Result<_, _>>()?
                };
                scenes.push(ManifestScene {
                    name: f[0].to_string(),
                    seed: f[1].parse().map_err(|_| bad())?,
                    marker: num(f[2])?,
                    marker_cell: num(f[3])?,
                    ambiguous,
                });
            }
            _ => return Err(bad()),
        }
    }
    Ok((spec, scenes))
}

pub fn cmd_synth(s: &Settings) -> Result<Vec<SynthScene>, CliError> {
    let spec = s.synth_spec();
    let (img_dir, lab_dir) = (s.out.join("images"), s.out.join("labels"));
    create_dir(&img_dir)?;
    create_dir(&lab_dir)?;
    let scenes: Vec<(ManifestScene, SynthScene)> = (0..s.count)
        .map(|i| {
            let seed = scene_seed(s.seed, i);
            let scene = generate_synthetic(&spec, &mut Rng::new(seed));
            let entry = ManifestScene {
                name: scene_name(i),
                seed,
                marker: scene.marker,
                marker_cell: scene.marker_cell,
                ambiguous: scene.ambiguous.clone(),
            };
            (entry, scene)
        })
        .collect();
    for (e, scene) in &scenes {
        write_file(
            &img_dir.join(format!("{}.ppm", e.name)),
            encode_ppm(&scene.image),
        )?;
        write_file(
            &lab_dir.join(format!("{}.pgm", e.name)),
            encode_pgm_labels(&scene.labels, s.void_value)?,
        )?;
    }
    write_file(
        &s.out.join("manifest.txt"),
        manifest_text(&spec, s.seed, &scenes),
    )?;
    Ok(scenes.into_iter().map(|(_, sc)| sc).collect())
}

fn labeled_graphs(samples: &[Sample]) -> Vec<rcpn_core::ingest::SuperpixelGraph> {
    samples.iter().map(|s| s.graph.clone()).collect()
}

/// Voted (optionally hierarchy-decoded) super-pixel labels for one sample.
pub fn label_sample(
    params: &RcpnParams,
    sample: &Sample,
    index: usize,
    s: &Settings,
    timing: &mut TimingReport,
) -> Result<LabelGrid, CliError> {
    let cfg = s.train_config();
    let prediction = timing.time_stage("network", || {
        infer_graph(params, &sample.graph, index, &cfg)
    })??;
    let labels = if s.mrf && !cfg.local_only {
        timing.time_stage("mrf", || decode_forest(&prediction, s.mrf_k))??
    } else {
        prediction.labels
    };
    Ok(LabelGrid::from_superpixels(&sample.seg, &labels))
}

fn score_samples(
    params: &RcpnParams,
    samples: &[Sample],
    s: &Settings,
) -> Result<Scores, CliError> {
    let parts: Vec<ConfusionMatrix> = samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| -> Result<ConfusionMatrix, CliError> {
            let pred = label_sample(params, sample, i, s, &mut TimingReport::new())?;
            let mut m = ConfusionMatrix::new(params.dims().classes);
            m.accumulate(
                &pred,
                sample
                    .labels
                    .as_ref()
                    .expect("training samples are labeled"),
            )?;
            Ok(m)
        })
        .collect::<Result<_, _>>()?;
    let mut total = ConfusionMatrix::new(params.dims().classes);
    parts.iter().for_each(|p| total.merge(p));
    Ok(total.scores()?)
}

fn scores_csv(scores: &Scores, subset: Option<f64>) -> String {
    match subset {
        Some(v) => format!(
            "ppa,mca,iou,iou_subset\n{:?},{:?},{:?},{v:?}\n",
            scores.ppa, scores.mca, scores.iou
        ),
        None => format!(
            "ppa,mca,iou\n{:?},{:?},{:?}\n",
            scores.ppa, scores.mca, scores.iou
        ),
    }
}

fn train_samples(
    s: &Settings,
    cfg: &TrainConfig,
) -> Result<(Vec<Sample>, usize, TrainOutcome), CliError> {
    let samples = load_dataset(s, true)?;
    let classes = class_count(s, &samples)?;
    let outcome = train(&labeled_graphs(&samples), classes, cfg)?;
    Ok((samples, classes, outcome))
}

pub fn cmd_train(s: &Settings) -> Result<(TrainOutcome, Scores), CliError> {
    let cfg = s.train_config();
    let (samples, _, outcome) = train_samples(s, &cfg)?;
    save_checkpoint(&outcome.params, &cfg, s.out.join("model.ckpt"))?;
    write_file(
        &s.out.join("diagnostics.csv"),
        diagnostics_csv(&outcome.diagnostics),
    )?;
    write_file(
        &s.out.join("loss_curve.csv"),
        loss_curve_csv(&outcome.loss_curve),
    )?;
    let scores = score_samples(&outcome.params, &samples, s)?;
    write_file(&s.out.join("train_metrics.csv"), scores_csv(&scores, None))?;
    Ok((outcome, scores))
}

fn overlay(image: &PixelGrid, labels: &LabelGrid) -> PixelGrid {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if let Some(c) = labels.get(x, y) {
                let (p, k) = (image.pixel(x, y), SynthSpec::class_color(c));
                out.set_pixel(x, y, [0, 1, 2].map(|i| 0.4 * p[i] + 0.6 * k[i]));
            }
        }
    }
    out
}

/// Labels every image; returns `(stem, label map)` in filename order.
pub fn cmd_infer(s: &Settings) -> Result<Vec<(String, LabelGrid)>, CliError> {
    let model = s.model.as_ref().expect("checked at parse time");
    let (params, _) = load_checkpoint(model)?;
    let stems = list_stems(&s.images, "ppm")?;
    if stems.is_empty() {
        return Err(CliError::Data(format!(
            "no .ppm images in {}",
            s.images.display()
        )));
    }
    let results: Vec<(Sample, LabelGrid, TimingReport)> = stems
        .par_iter()
        .enumerate()
        .map(|(i, stem)| -> Result<_, CliError> {
            let mut timing = TimingReport::new();
            let sample = load_sample(s, stem, false, &mut timing)?;
            let d_vis = params.dims().d_vis;
            if sample.graph.feature_dim() != d_vis {
                return Err(rcpn_core::Error::shape(
                    "visual feature dimension",
                    d_vis,
                    format!("{} in {stem}", sample.graph.feature_dim()),
                )
                .into());
            }
            let labels = label_sample(&params, &sample, i, s, &mut timing)?;
            timing.finish();
            Ok((sample, labels, timing))
        })
        .collect::<Result<_, _>>()?;

    let pred_dir = s.out.join("predictions");
    create_dir(&pred_dir)?;
    let overlay_dir = s.out.join("overlays");
    if s.overlays {
        create_dir(&overlay_dir)?;
    }
    for (sample, labels, _) in &results {
        write_file(
            &pred_dir.join(format!("{}.pgm", sample.stem)),
            encode_pgm_labels(labels, s.void_value)?,
        )?;
        if s.overlays {
            write_file(
                &overlay_dir.join(format!("{}.ppm", sample.stem)),
                encode_ppm(&overlay(&sample.image, labels)),
            )?;
        }
    }
    write_file(
        &s.out.join("timing.csv"),
        timing_csv(results.iter().map(|r| &r.2)),
    )?;
    Ok(results
        .into_iter()
        .map(|(sample, labels, _)| (sample.stem, labels))
        .collect())
}

/// Mean seconds per image for each stage, then the mean total.
fn timing_csv<'a>(reports: impl Iterator<Item = &'a TimingReport>) -> String {
    let reports: Vec<_> = reports.collect();
    let n = reports.len().max(1) as f64;
    let mut out = String::new();
    for stage in TIMING_STAGES {
        let sum: f64 = reports.iter().filter_map(|r| r.stage(stage)).sum();
        let _ = writeln!(out, "{stage},{:.3}", sum / n);
    }
    let total: f64 = reports.iter().map(|r| r.total()).sum();
    let _ = writeln!(out, "total,{:.3}", total / n);
    out
}

pub fn cmd_eval(s: &Settings) -> Result<(Scores, Option<f64>), CliError> {
    let preds: BTreeSet<String> = list_stems(&s.predictions, "pgm")?.into_iter().collect();
    let truth: BTreeSet<String> = list_stems(&s.labels, "pgm")?.into_iter().collect();
    let missing: Vec<String> = preds
        .symmetric_difference(&truth)
        .map(|stem| {
            let side = if preds.contains(stem) {
                "ground truth"
            } else {
                "prediction"
            };
            format!("{stem}.pgm (no {side})")
        })
        .collect();
    if preds.is_empty() || truth.is_empty() || preds.is_disjoint(&truth) {
        return Err(CliError::Data(
            "no prediction/ground-truth pairs with matching filenames".into(),
        ));
    }
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "unpaired label maps: {}",
            missing.join(", ")
        )));
    }
    let mut pairs = Vec::with_capacity(preds.len());
    for stem in &preds {
        let load = |dir: &Path| {
            load_labels(dir.join(format!("{stem}.pgm")), s.void_value as u32)
                .map_err(|e| CliError::Data(format!("{stem}.pgm: {e}")))
        };
        pairs.push((stem, load(&s.predictions)?, load(&s.labels)?));
    }
    let max = pairs
        .iter()
        .flat_map(|(_, p, t)| p.iter().chain(t.iter()).flatten())
        .max()
        .unwrap_or(0);
    let classes = match s.classes {
        0 => max + 1,
        c if max >= c => {
            return Err(CliError::Data(format!(
                "label {max} found but `classes` is {c}"
            )));
        }
        c => c,
    };
    let mut conf = ConfusionMatrix::new(classes);
    for (stem, p, t) in &pairs {
        conf.accumulate(p, t)
            .map_err(|e| CliError::Data(format!("{stem}.pgm: {e}")))?;
    }
    let scores = conf.scores()?;
    let subset = if s.iou_subset.is_empty() {
        None
    } else {
        Some(conf.subset_iou(&s.iou_subset).unwrap_or(f64::NAN))
    };
    write_file(&s.out.join("metrics.csv"), scores_csv(&scores, subset))?;
    Ok((scores, subset))
}

#[derive(Clone, Debug)]
pub struct DiagReport {
    pub rcpn: Vec<DiagnosticsRow>,
    pub pure_node: Vec<DiagnosticsRow>,
    pub early_ratio_rcpn: f64,
    pub early_ratio_pure_node: f64,
}

/// Mean g_com/g_sem over the first tenth of the steps (at least one step).
pub fn early_ratio(rows: &[DiagnosticsRow]) -> f64 {
    let k = rows.len().div_ceil(10).max(1).min(rows.len());
    rows[..k]
        .iter()
        .map(|r| r.strengths[1] / r.strengths[0])
        .sum::<f64>()
        / k as f64
}

pub fn cmd_diag(s: &Settings) -> Result<DiagReport, CliError> {
    let samples = load_dataset(s, true)?;
    let classes = class_count(s, &samples)?;
    let graphs = labeled_graphs(&samples);
    let run = |mode: LossMode| -> Result<Vec<DiagnosticsRow>, CliError> {
        let cfg = TrainConfig {
            loss_mode: mode,
            local_only: false,
            ..s.train_config()
        };
        let out = train(&graphs, classes, &cfg)?;
        if out.diagnostics.is_empty() {
            return Err(CliError::Usage("diag needs at least one epoch".into()));
        }
        write_file(
            &s.out.join(format!("diagnostics_{}.csv", mode.name())),
            diagnostics_csv(&out.diagnostics),
        )?;
        Ok(out.diagnostics)
    };
    let rcpn = run(LossMode::Rcpn)?;
    let pure_node = run(LossMode::PureNode)?;
    let report = DiagReport {
        early_ratio_rcpn: early_ratio(&rcpn),
        early_ratio_pure_node: early_ratio(&pure_node),
        rcpn,
        pure_node,
    };
    write_file(
        &s.out.join("diag_summary.csv"),
        format!(
            "mode,early_g_com_over_g_sem\nrcpn,{:?}\npure_node,{:?}\n",
            report.early_ratio_rcpn, report.early_ratio_pure_node
        ),
    )?;
    Ok(report)
}
