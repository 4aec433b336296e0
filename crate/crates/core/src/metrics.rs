//! Pixel-level confusion metrics and per-stage timing.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::ingest::LabelGrid;

/// Rows are ground truth, columns are predictions. VOID pixels are never counted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Self {
        let classes = rows.len();
        let mut m = Self::new(classes);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), classes, "confusion matrix must be square");
            for (p, &v) in row.iter().enumerate() {
                m.counts[t * classes + p] = v;
            }
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn grow(&mut self, classes: usize) {
        if classes <= self.classes {
            return;
        }
        let mut next = Self::new(classes);
        for t in 0..self.classes {
            for p in 0..self.classes {
                next.counts[t * classes + p] = self.get(t, p);
            }
        }
        *self = next;
    }

    pub fn add(&mut self, truth: usize, pred: usize, n: u64) {
        self.grow(truth.max(pred) + 1);
        self.counts[truth * self.classes + pred] += n;
    }

    /// Adds one count per non-VOID ground-truth pixel.
    pub fn accumulate(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(Error::shape(
                "prediction",
                format!("{}x{}", gt.width(), gt.height()),
                format!("{}x{}", pred.width(), pred.height()),
            ));
        }
        for (i, (p, t)) in pred.iter().zip(gt.iter()).enumerate() {
            let Some(t) = t else { continue };
            let p = p.ok_or_else(|| {
                Error::Invalid(format!("prediction has a VOID pixel at index {i}"))
            })?;
            self.add(t, p, 1);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.grow(other.classes);
        for t in 0..other.classes {
            for p in 0..other.classes {
                self.counts[t * self.classes + p] += other.get(t, p);
            }
        }
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// Per-class IoU, `None` for classes absent from both truth and prediction.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let d = self.get(c, c);
                let union = self.row_sum(c) + self.col_sum(c) - d;
                (union > 0).then(|| d as f64 / union as f64)
            })
            .collect()
    }

    /// Per-class recall, `None` for classes absent from the truth.
    pub fn class_recall(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let r = self.row_sum(c);
                (r > 0).then(|| self.get(c, c) as f64 / r as f64)
            })
            .collect()
    }

    /// Per-class precision, `None` for classes never predicted.
    pub fn class_precision(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let col = self.col_sum(c);
                (col > 0).then(|| self.get(c, c) as f64 / col as f64)
            })
            .collect()
    }

    pub fn scores(&self) -> Result<Scores> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyConfusion);
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        let mean = |v: Vec<Option<f64>>| {
            let present: Vec<f64> = v.into_iter().flatten().collect();
            present.iter().sum::<f64>() / present.len() as f64
        };
        Ok(Scores {
            ppa: trace as f64 / total as f64,
            mca: mean(self.class_recall()),
            iou: mean(self.class_iou()),
        })
    }

    /// Mean IoU restricted to `subset`, skipping classes absent from truth and prediction.
    pub fn subset_iou(&self, subset: &[usize]) -> Option<f64> {
        let per = self.class_iou();
        let v: Vec<f64> = subset
            .iter()
            .filter_map(|&c| per.get(c).copied().flatten())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub ppa: f64,
    pub mca: f64,
    pub iou: f64,
}

/// Wall-clock seconds per named stage, in first-open order.
#[derive(Clone, Debug, Default)]
pub struct TimingReport {
    stages: Vec<(String, f64)>,
    open: BTreeMap<String, Instant>,
    started: Option<Instant>,
    total: f64,
}

impl TimingReport {
    pub fn new() -> Self {
        Self {
            started: Some(Instant::now()),
            ..Default::default()
        }
    }

    pub fn begin(&mut self, stage: &str) -> Result<()> {
        if self.open.contains_key(stage) {
            return Err(Error::StageOpen(stage.to_string()));
        }
        self.open.insert(stage.to_string(), Instant::now());
        Ok(())
    }

    pub fn end(&mut self, stage: &str) -> Result<f64> {
        let start = self
            .open
            .remove(stage)
            .ok_or_else(|| Error::StageNotOpen(stage.to_string()))?;
        let secs = start.elapsed().as_secs_f64();
        match self.stages.iter_mut().find(|(n, _)| n == stage) {
            Some((_, s)) => *s += secs,
            None => self.stages.push((stage.to_string(), secs)),
        }
        Ok(secs)
    }

    /// Runs `thunk` inside `stage`.
    pub fn time_stage<T>(&mut self, stage: &str, thunk: impl FnOnce() -> T) -> Result<T> {
        self.begin(stage)?;
        let out = thunk();
        self.end(stage)?;
        Ok(out)
    }

    /// Stops the overall clock.
    pub fn finish(&mut self) {
        if let Some(s) = self.started.take() {
            self.total = s.elapsed().as_secs_f64();
        }
        let staged: f64 = self.stages.iter().map(|(_, s)| s).sum();
        self.total = self.total.max(staged);
    }

    pub fn stages(&self) -> &[(String, f64)] {
        &self.stages
    }

    pub fn stage(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// `stage,seconds` lines with three decimals, ending with the total.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (name, secs) in &self.stages {
            out.push_str(&format!("{name},{secs:.3}\n"));
        }
        out.push_str(&format!("total,{:.3}\n", self.total));
        out
    }
}
