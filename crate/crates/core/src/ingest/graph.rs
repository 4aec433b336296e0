//! Super-pixel graph: region features, majority labels and 4-connected adjacency.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use super::{LabelGrid, PixelGrid, SegmentationMap};
use crate::error::{Error, Result};

/// Which per-region features `build_graph` extracts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureSpec {
    /// Mean RGB, std RGB, normalized centroid and area fraction (9 values).
    #[default]
    RegionStats,
}

impl FeatureSpec {
    pub fn dim(self) -> usize {
        match self {
            FeatureSpec::RegionStats => 9,
        }
    }
}

/// Super-pixels with visual features, optional ground truth and adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelGraph {
    features: Vec<Vec<f64>>,
    labels: Option<Vec<Option<usize>>>,
    adjacency: Vec<Vec<usize>>,
    pixel_counts: Vec<usize>,
}

impl SuperpixelGraph {
    /// Assembles a graph from an edge list, checking symmetry, connectivity and finiteness.
    pub fn new(
        features: Vec<Vec<f64>>,
        edges: &[(usize, usize)],
        labels: Option<Vec<Option<usize>>>,
        pixel_counts: Vec<usize>,
    ) -> Result<Self> {
        let s = features.len();
        if s == 0 {
            return Err(Error::Invalid(
                "graph needs at least one super-pixel".into(),
            ));
        }
        if pixel_counts.len() != s {
            return Err(Error::shape("pixel counts", s, pixel_counts.len()));
        }
        if let Some(l) = &labels {
            if l.len() != s {
                return Err(Error::shape("super-pixel labels", s, l.len()));
            }
        }
        let d = features[0].len();
        for (i, f) in features.iter().enumerate() {
            if f.len() != d {
                return Err(Error::shape(
                    "feature vector",
                    d,
                    format!("{} at super-pixel {i}", f.len()),
                ));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "non-finite feature at super-pixel {i}"
                )));
            }
        }
        let mut sets = vec![BTreeSet::new(); s];
        for &(a, b) in edges {
            if a >= s || b >= s {
                return Err(Error::Invalid(format!(
                    "edge ({a},{b}) out of range for {s} nodes"
                )));
            }
            if a == b {
                return Err(Error::Invalid(format!("self edge at {a}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        let adjacency: Vec<Vec<usize>> =
            sets.into_iter().map(|n| n.into_iter().collect()).collect();
        let comps = count_components(&adjacency);
        if comps != 1 {
            return Err(Error::Disconnected { components: comps });
        }
        Ok(Self {
            features,
            labels,
            adjacency,
            pixel_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn pixel_counts(&self) -> &[usize] {
        &self.pixel_counts
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    pub fn with_features(mut self, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != self.len() {
            return Err(Error::shape("feature rows", self.len(), features.len()));
        }
        self.features = features;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape("super-pixel labels", self.len(), labels.len()));
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

fn count_components(adjacency: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adjacency.len()];
    let mut n = 0;
    let mut queue = VecDeque::new();
    for start in 0..adjacency.len() {
        if seen[start] {
            continue;
        }
        n += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    n
}

/// Majority non-VOID label per region; ties toward the smaller class index.
pub(crate) fn majority_labels(seg: &SegmentationMap, labels: &LabelGrid) -> Vec<Option<usize>> {
    let classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut hist = vec![vec![0usize; classes]; seg.count()];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            hist[seg.ids()[i]][c] += 1;
        }
    }
    hist.iter()
        .map(|h| {
            let mut best: Option<(usize, usize)> = None;
            for (c, &n) in h.iter().enumerate() {
                if n > 0 && best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((c, n));
                }
            }
            best.map(|(c, _)| c)
        })
        .collect()
}

/// Builds the super-pixel graph for one image.
pub fn build_graph(
    seg: &SegmentationMap,
    img: &PixelGrid,
    labels: Option<&LabelGrid>,
    spec: FeatureSpec,
) -> Result<SuperpixelGraph> {
    let (w, h) = (seg.width(), seg.height());
    if img.width() != w || img.height() != h {
        return Err(Error::shape(
            "image",
            format!("{w}x{h}"),
            format!("{}x{}", img.width(), img.height()),
        ));
    }
    if let Some(l) = labels {
        if l.width() != w || l.height() != h {
            return Err(Error::shape(
                "label map",
                format!("{w}x{h}"),
                format!("{}x{}", l.width(), l.height()),
            ));
        }
    }
    let s = seg.count();
    let counts = seg.pixel_counts();

    let features = match spec {
        FeatureSpec::RegionStats => {
            let mut sum = vec![[0.0f64; 3]; s];
            let mut pos = vec![[0.0f64; 2]; s];
            for (i, &k) in seg.ids().iter().enumerate() {
                let p = img.pixel_at(i);
                for c in 0..3 {
                    sum[k][c] += p[c];
                }
                pos[k][0] += (i % w) as f64;
                pos[k][1] += (i / w) as f64;
            }
            let means: Vec<[f64; 3]> = (0..s)
                .map(|k| {
                    let n = counts[k] as f64;
                    [sum[k][0] / n, sum[k][1] / n, sum[k][2] / n]
                })
                .collect();
            // second pass keeps the variance free of cancellation
            let mut var = vec![[0.0f64; 3]; s];
            for (i, &k) in seg.ids().iter().enumerate() {
                let p = img.pixel_at(i);
                for c in 0..3 {
                    var[k][c] += (p[c] - means[k][c]).powi(2);
                }
            }
            let total = (w * h) as f64;
            (0..s)
                .map(|k| {
                    let n = counts[k] as f64;
                    let m = means[k];
                    let sd = [
                        (var[k][0] / n).sqrt(),
                        (var[k][1] / n).sqrt(),
                        (var[k][2] / n).sqrt(),
                    ];
                    vec![
                        m[0],
                        m[1],
                        m[2],
                        sd[0],
                        sd[1],
                        sd[2],
                        pos[k][0] / n / w as f64,
                        pos[k][1] / n / h as f64,
                        n / total,
                    ]
                })
                .collect()
        }
    };

    let mut edges = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = seg.id(x, y);
            if x + 1 < w {
                let b = seg.id(x + 1, y);
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = seg.id(x, y + 1);
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    let sp_labels = labels.map(|l| majority_labels(seg, l));
    SuperpixelGraph::new(features, &edges, sp_labels, counts)
}

/// Serializes features as header-free `id,f1,...,fd` rows.
pub fn export_features(graph: &SuperpixelGraph) -> String {
    let mut out = String::new();
    for (i, f) in graph.features().iter().enumerate() {
        out.push_str(&i.to_string());
        for v in f {
            // `{:?}` prints the shortest representation that round-trips exactly
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

/// Parses feature rows for a graph with `count` super-pixels.
pub fn parse_features(text: &str, count: usize, source_name: &str) -> Result<Vec<Vec<f64>>> {
    let err = |row: usize, message: String| Error::Csv {
        source_name: source_name.to_string(),
        row,
        message,
    };
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; count];
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let row = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id_tok = fields.next().unwrap_or("");
        let id: usize = id_tok
            .parse()
            .map_err(|_| err(row, format!("invalid super-pixel id `{id_tok}`")))?;
        if id >= count {
            return Err(err(
                row,
                format!("super-pixel id {id} out of range 0..{count}"),
            ));
        }
        let values = fields
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(row, format!("invalid feature value `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(err(row, "row has no feature values".into()));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(
                    row,
                    format!("ragged row: expected {d} values, found {}", values.len()),
                ))
            }
            _ => {}
        }
        if rows[id].is_some() {
            return Err(err(row, format!("duplicate super-pixel id {id}")));
        }
        rows[id] = Some(values);
    }
    rows.into_iter()
        .enumerate()
        .map(|(id, r)| r.ok_or_else(|| err(0, format!("missing super-pixel id {id}"))))
        .collect()
}

/// Replaces a graph's features with rows read from a CSV file.
pub fn import_features(path: impl AsRef<Path>, graph: SuperpixelGraph) -> Result<SuperpixelGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let features = parse_features(&text, graph.len(), &path.display().to_string())?;
    graph.with_features(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::grid_superpixels;

    fn single_pixel_seg(w: usize, h: usize) -> SegmentationMap {
        SegmentationMap::new(w, h, (0..w * h).collect()).unwrap()
    }

    #[test]
    fn four_connected_adjacency() {
        let img = PixelGrid::filled(2, 2, [0.5; 3]);
        let g = build_graph(
            &single_pixel_seg(2, 2),
            &img,
            None,
            FeatureSpec::RegionStats,
        )
        .unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn solid_gray_features() {
        let img = PixelGrid::filled(6, 6, [0.4; 3]);
        let seg = grid_superpixels(&img, 9).unwrap();
        let g = build_graph(&seg, &img, None, FeatureSpec::RegionStats).unwrap();
        for f in g.features() {
            assert_eq!(f.len(), 9);
            for c in 0..3 {
                assert!((f[c] - 0.4).abs() < 1e-15);
                assert_eq!(f[3 + c], 0.0);
            }
        }
    }

    #[test]
    fn region_stats_match_scalar_recomputation() {
        let values: Vec<f64> = (0..48).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let img = PixelGrid::new(4, 4, values).unwrap();
        // left two columns vs right two columns
        let ids = (0..16).map(|i| usize::from(i % 4 >= 2)).collect();
        let seg = SegmentationMap::new(4, 4, ids).unwrap();
        let g = build_graph(&seg, &img, None, FeatureSpec::RegionStats).unwrap();
        for k in 0..2 {
            let px: Vec<[f64; 3]> = (0..16)
                .filter(|i| usize::from(i % 4 >= 2) == k)
                .map(|i| img.pixel_at(i))
                .collect();
            for c in 0..3 {
                let mut mean = 0.0;
                for p in &px {
                    mean += p[c];
                }
                mean /= px.len() as f64;
                let mut var = 0.0;
                for p in &px {
                    var += (p[c] - mean) * (p[c] - mean);
                }
                let sd = (var / px.len() as f64).sqrt();
                assert!((g.feature(k)[c] - mean).abs() < 1e-12);
                assert!((g.feature(k)[3 + c] - sd).abs() < 1e-12);
            }
            let cx = if k == 0 { 0.5 } else { 2.5 };
            assert!((g.feature(k)[6] - cx / 4.0).abs() < 1e-12);
            assert!((g.feature(k)[7] - 1.5 / 4.0).abs() < 1e-12);
            assert!((g.feature(k)[8] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn majority_label_with_void_and_ties() {
        let img = PixelGrid::filled(4, 1, [0.0; 3]);
        let seg = SegmentationMap::new(4, 1, vec![0, 0, 1, 1]).unwrap();
        let labels = LabelGrid::new(4, 1, vec![Some(3), Some(1), None, None]).unwrap();
        let g = build_graph(&seg, &img, Some(&labels), FeatureSpec::RegionStats).unwrap();
        assert_eq!(g.labels().unwrap(), &[Some(1), None]);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let e = SuperpixelGraph::new(vec![vec![0.0]; 3], &[(0, 1)], None, vec![1; 3]).unwrap_err();
        assert!(matches!(e, Error::Disconnected { components: 2 }));
    }

    #[test]
    fn feature_csv_round_trip_and_errors() {
        let img = PixelGrid::new(2, 1, vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9]).unwrap();
        let g = build_graph(
            &single_pixel_seg(2, 1),
            &img,
            None,
            FeatureSpec::RegionStats,
        )
        .unwrap();
        let csv = export_features(&g);
        let back = parse_features(&csv, 2, "mem").unwrap();
        assert_eq!(back, g.features());

        let first_row_only = csv.lines().next().unwrap();
        let e = parse_features(first_row_only, 2, "mem")
            .unwrap_err()
            .to_string();
        assert!(e.contains("missing super-pixel id 1"), "{e}");

        let e = parse_features("0,1,2\n1,3\n", 2, "mem")
            .unwrap_err()
            .to_string();
        assert!(e.contains("mem:2") && e.contains("ragged"), "{e}");

        let e = parse_features("0,1\n0,2\n", 2, "mem")
            .unwrap_err()
            .to_string();
        assert!(e.contains("duplicate super-pixel id 0"), "{e}");
    }

    #[test]
    fn wide_imported_features() {
        let rows: String = (0..3)
            .map(|i| {
                let vals: Vec<String> = (0..768)
                    .map(|j| format!("{}", (i * 768 + j) as f64 * 1e-3))
                    .collect();
                format!("{i},{}\n", vals.join(","))
            })
            .collect();
        let f = parse_features(&rows, 3, "wide").unwrap();
        assert!(f.iter().all(|r| r.len() == 768));
    }
}
