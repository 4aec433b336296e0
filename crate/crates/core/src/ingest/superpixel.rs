//! Grid and SLIC-style over-segmentation.

use std::collections::VecDeque;

use super::{PixelGrid, SegmentationMap};
use crate::error::{Error, Result};

/// Segmenter selection used by the pipeline configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SuperpixelMethod {
    Grid {
        target: usize,
    },
    Slic {
        target: usize,
        compactness: f64,
        iters: usize,
    },
}

impl SuperpixelMethod {
    pub fn segment(&self, img: &PixelGrid) -> Result<SegmentationMap> {
        match *self {
            SuperpixelMethod::Grid { target } => grid_superpixels(img, target),
            SuperpixelMethod::Slic {
                target,
                compactness,
                iters,
            } => slic_superpixels(img, target, compactness, iters),
        }
    }
}

/// Block boundaries splitting `len` into `n` parts, larger parts first.
fn block_edges(len: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| (i * len).div_ceil(n)).collect()
}

/// Rectangular blocks, `⌊√target⌋` per axis (clipped to the image size), ids row-major.
pub fn grid_superpixels(img: &PixelGrid, target_count: usize) -> Result<SegmentationMap> {
    let (w, h) = (img.width(), img.height());
    if target_count == 0 || target_count > w * h {
        return Err(Error::Invalid(format!(
            "target super-pixel count {target_count} outside 1..={}",
            w * h
        )));
    }
    let per_axis = (target_count as f64).sqrt().floor() as usize;
    let nx = per_axis.clamp(1, w);
    let ny = per_axis.clamp(1, h);
    let xe = block_edges(w, nx);
    let ye = block_edges(h, ny);
    let mut ids = vec![0; w * h];
    for by in 0..ny {
        for bx in 0..nx {
            let id = by * nx + bx;
            for y in ye[by]..ye[by + 1] {
                for x in xe[bx]..xe[bx + 1] {
                    ids[y * w + x] = id;
                }
            }
        }
    }
    SegmentationMap::new(w, h, ids)
}

#[derive(Clone, Copy, Debug)]
struct Center {
    rgb: [f64; 3],
    x: f64,
    y: f64,
}

fn color_dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Iterative clustering in joint color/position space followed by
/// connectivity enforcement: every cluster keeps its largest 4-connected
/// component and the remaining fragments join the nearest adjacent cluster.
pub fn slic_superpixels(
    img: &PixelGrid,
    target_count: usize,
    compactness: f64,
    iters: usize,
) -> Result<SegmentationMap> {
    let (w, h) = (img.width(), img.height());
    if target_count == 0 || target_count > w * h {
        return Err(Error::Invalid(format!(
            "target super-pixel count {target_count} outside 1..={}",
            w * h
        )));
    }
    if iters == 0 || !(compactness > 0.0) {
        return Err(Error::Invalid(format!(
            "SLIC needs iters >= 1 and compactness > 0, got {iters} and {compactness}"
        )));
    }
    let step = ((w * h) as f64 / target_count as f64).sqrt();
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let xe = block_edges(w, nx);
    let ye = block_edges(h, ny);
    let mut centers = Vec::with_capacity(nx * ny);
    for by in 0..ny {
        for bx in 0..nx {
            let cx = (xe[bx] + xe[bx + 1] - 1) as f64 / 2.0;
            let cy = (ye[by] + ye[by + 1] - 1) as f64 / 2.0;
            let px = img.pixel(cx.round() as usize, cy.round() as usize);
            centers.push(Center {
                rgb: px,
                x: cx,
                y: cy,
            });
        }
    }
    let spacing = (w as f64 / nx as f64).max(h as f64 / ny as f64);
    let pos_weight = (compactness / spacing).powi(2);
    let window = (2.0 * spacing).ceil() as isize;

    let mut labels = vec![usize::MAX; w * h];
    let mut best = vec![f64::INFINITY; w * h];
    for _ in 0..iters {
        best.iter_mut().for_each(|b| *b = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x.round() as isize - window).max(0) as usize;
            let x1 = ((c.x.round() as isize + window) as usize).min(w - 1);
            let y0 = (c.y.round() as isize - window).max(0) as usize;
            let y1 = ((c.y.round() as isize + window) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let ds2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = color_dist2(img.pixel_at(i), c.rgb) + pos_weight * ds2;
                    if d < best[i] {
                        best[i] = d;
                        labels[i] = k;
                    }
                }
            }
        }
        // pixels outside every window fall back to a full search
        for i in 0..w * h {
            if best[i].is_infinite() {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let mut bd = f64::INFINITY;
                for (k, c) in centers.iter().enumerate() {
                    let d = color_dist2(img.pixel_at(i), c.rgb)
                        + pos_weight * ((x - c.x).powi(2) + (y - c.y).powi(2));
                    if d < bd {
                        bd = d;
                        labels[i] = k;
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for (i, &k) in labels.iter().enumerate() {
            let p = img.pixel_at(i);
            let s = &mut sums[k];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                *c = Center {
                    rgb: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                    x: s[3] / s[5],
                    y: s[4] / s[5],
                };
            }
        }
    }

    let merged = enforce_connectivity(img, &labels, &centers, pos_weight);
    SegmentationMap::new(w, h, merged)
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    let mut out = [usize::MAX; 4];
    if x > 0 {
        out[0] = i - 1;
    }
    if x + 1 < w {
        out[1] = i + 1;
    }
    if y > 0 {
        out[2] = i - w;
    }
    if y + 1 < h {
        out[3] = i + w;
    }
    out.into_iter().filter(|&n| n != usize::MAX)
}

/// Returns per-pixel component ids and the component count for a labeling.
fn components(labels: &[usize], w: usize, h: usize) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; w * h];
    let mut n = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = n;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbors4(i, w, h) {
                if comp[j] == usize::MAX && labels[j] == labels[i] {
                    comp[j] = n;
                    queue.push_back(j);
                }
            }
        }
        n += 1;
    }
    (comp, n)
}

fn enforce_connectivity(
    img: &PixelGrid,
    labels: &[usize],
    centers: &[Center],
    pos_weight: f64,
) -> Vec<usize> {
    let (w, h) = (img.width(), img.height());
    let (comp, ncomp) = components(labels, w, h);

    let mut size = vec![0usize; ncomp];
    let mut sums = vec![[0.0f64; 5]; ncomp];
    let mut cluster_of = vec![0usize; ncomp];
    for i in 0..w * h {
        let c = comp[i];
        size[c] += 1;
        cluster_of[c] = labels[i];
        let p = img.pixel_at(i);
        let s = &mut sums[c];
        s[0] += p[0];
        s[1] += p[1];
        s[2] += p[2];
        s[3] += (i % w) as f64;
        s[4] += (i / w) as f64;
    }

    // largest component per cluster survives; ties go to the first in scan order
    let mut keeper = vec![usize::MAX; centers.len()];
    for c in 0..ncomp {
        let k = cluster_of[c];
        if keeper[k] == usize::MAX || size[c] > size[keeper[k]] {
            keeper[k] = c;
        }
    }
    let mut owner: Vec<Option<usize>> = (0..ncomp)
        .map(|c| (keeper[cluster_of[c]] == c).then_some(cluster_of[c]))
        .collect();

    let mut adjacent = vec![Vec::new(); ncomp];
    for i in 0..w * h {
        for j in neighbors4(i, w, h) {
            let (a, b) = (comp[i], comp[j]);
            if a != b && !adjacent[a].contains(&b) {
                adjacent[a].push(b);
            }
        }
    }

    // orphans attach, in rounds, to the nearest cluster among already-resolved neighbours
    loop {
        let mut changed = false;
        let mut pending = false;
        let snapshot = owner.clone();
        for c in 0..ncomp {
            if snapshot[c].is_some() {
                continue;
            }
            pending = true;
            let s = &sums[c];
            let n = size[c] as f64;
            let mean = [s[0] / n, s[1] / n, s[2] / n];
            let (mx, my) = (s[3] / n, s[4] / n);
            let mut best: Option<(f64, usize)> = None;
            for &nb in &adjacent[c] {
                if let Some(k) = snapshot[nb] {
                    let ctr = &centers[k];
                    let d = color_dist2(mean, ctr.rgb)
                        + pos_weight * ((mx - ctr.x).powi(2) + (my - ctr.y).powi(2));
                    if best.is_none_or(|(bd, bk)| d < bd || (d == bd && k < bk)) {
                        best = Some((d, k));
                    }
                }
            }
            if let Some((_, k)) = best {
                owner[c] = Some(k);
                changed = true;
            }
        }
        if !pending || !changed {
            break;
        }
    }

    // compact ids in raster order of first appearance
    let mut remap = vec![usize::MAX; centers.len()];
    let mut next = 0;
    (0..w * h)
        .map(|i| {
            let k = owner[comp[i]].expect("image is connected, every fragment resolves");
            if remap[k] == usize::MAX {
                remap[k] = next;
                next += 1;
            }
            remap[k]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(seg: &SegmentationMap) -> Vec<usize> {
        let mut s = seg.pixel_counts();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    #[test]
    fn grid_four_by_four() {
        let img = PixelGrid::filled(4, 4, [0.5; 3]);
        let seg = grid_superpixels(&img, 4).unwrap();
        assert_eq!(seg.count(), 4);
        assert_eq!(sizes(&seg), vec![4, 4, 4, 4]);
        assert_eq!(seg.id(1, 1), 0);
        assert_eq!(seg.id(2, 0), 1);
        assert_eq!(seg.id(0, 2), 2);
        assert_eq!(seg.id(3, 3), 3);
    }

    #[test]
    fn grid_single_block() {
        let img = PixelGrid::filled(3, 7, [0.5; 3]);
        let seg = grid_superpixels(&img, 1).unwrap();
        assert_eq!(seg.count(), 1);
    }

    #[test]
    fn grid_uneven_blocks() {
        let img = PixelGrid::filled(5, 5, [0.5; 3]);
        let seg = grid_superpixels(&img, 4).unwrap();
        assert_eq!(sizes(&seg), vec![9, 6, 6, 4]);
        assert_eq!(seg.pixel_counts().iter().sum::<usize>(), 25);
    }

    #[test]
    fn grid_never_exceeds_target() {
        let img = PixelGrid::filled(20, 20, [0.5; 3]);
        for t in 1..=50 {
            assert!(grid_superpixels(&img, t).unwrap().count() <= t);
        }
    }

    #[test]
    fn grid_rejects_bad_target() {
        let img = PixelGrid::filled(2, 2, [0.5; 3]);
        assert!(grid_superpixels(&img, 0).is_err());
        assert!(grid_superpixels(&img, 5).is_err());
    }

    #[test]
    fn slic_uniform_matches_grid() {
        let img = PixelGrid::filled(16, 16, [0.3, 0.6, 0.2]);
        let slic = slic_superpixels(&img, 4, 0.2, 10).unwrap();
        let grid = grid_superpixels(&img, 4).unwrap();
        assert_eq!(slic.count(), 4);
        // each pixel lies within 2 px of a grid boundary or agrees with the grid block
        let mut mapping = std::collections::HashMap::new();
        for y in 0..16 {
            for x in 0..16 {
                mapping.entry(slic.id(x, y)).or_insert(grid.id(x, y));
            }
        }
        for y in 0..16usize {
            for x in 0..16usize {
                let near_boundary = x.abs_diff(8) <= 2 || y.abs_diff(8) <= 2;
                if !near_boundary {
                    assert_eq!(mapping[&slic.id(x, y)], grid.id(x, y), "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn slic_single_segment() {
        let img = PixelGrid::filled(9, 5, [0.1, 0.2, 0.3]);
        assert_eq!(slic_superpixels(&img, 1, 0.2, 5).unwrap().count(), 1);
    }

    #[test]
    fn slic_follows_color_edge() {
        let (w, h) = (12, 6);
        let mut img = PixelGrid::filled(w, h, [0.9, 0.1, 0.1]);
        // color boundary between columns 4 and 5, off the spatial midline
        for y in 0..h {
            for x in 5..w {
                img.set_pixel(x, y, [0.1, 0.1, 0.9]);
            }
        }
        let seg = slic_superpixels(&img, 2, 0.01, 10).unwrap();
        assert_eq!(seg.count(), 2);
        for y in 0..h {
            for x in 0..w {
                let expect_left = x < 5;
                assert_eq!(seg.id(x, y) == seg.id(0, 0), expect_left, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn slic_segments_are_connected() {
        let mut rng = crate::numeric::Rng::new(5);
        let values: Vec<f64> = (0..24 * 18 * 3).map(|_| rng.uniform()).collect();
        let img = PixelGrid::new(24, 18, values).unwrap();
        let seg = slic_superpixels(&img, 12, 0.5, 5).unwrap();
        let (_, ncomp) = components(seg.ids(), 24, 18);
        assert_eq!(ncomp, seg.count());
    }
}
