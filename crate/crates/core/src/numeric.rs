//! Dense kernels shared by every network module, plus the seeded random source.
//!
//! Every weight block carries its bias as a trailing column, so an affine map is
//! `W · [x; 1]` and a module is a single matrix.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Probability floor used inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix data length", rows * cols, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite matrix entry at index {i}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("matrix row length", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Entries drawn uniformly from `[-limit, limit]`.
    pub fn random_uniform(rows: usize, cols: usize, limit: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.uniform_in(-limit, limit))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &DenseMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Accumulates the outer product `delta ⊗ [input; 1]`.
    pub fn add_outer_with_bias(&mut self, delta: &[f64], input: &[f64]) {
        debug_assert_eq!(delta.len(), self.rows);
        debug_assert_eq!(input.len() + 1, self.cols);
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &x) in row.iter_mut().zip(input) {
                *w += d * x;
            }
            row[self.cols - 1] += d;
        }
    }

    /// Adds `W[:, offset..offset + out.len()]ᵀ · delta` into `out`.
    pub fn add_transposed_block(&self, delta: &[f64], offset: usize, out: &mut [f64]) {
        debug_assert_eq!(delta.len(), self.rows);
        debug_assert!(offset + out.len() < self.cols);
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.row(r)[offset..offset + out.len()];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * d;
            }
        }
    }
}

/// Returns `W · [x; 1]`.
pub fn affine(w: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() + 1 {
        return Err(Error::shape(
            "affine input",
            format!(
                "{}x{} weight for input of length {}",
                w.rows,
                w.cols,
                w.cols.saturating_sub(1)
            ),
            format!(
                "{}x{} weight with input of length {}",
                w.rows,
                w.cols,
                x.len()
            ),
        ));
    }
    Ok(affine_unchecked(w, x))
}

/// `W · [x; 1]` where `x` is split across several slices laid out back to back.
pub(crate) fn affine_concat(w: &DenseMatrix, parts: &[&[f64]]) -> Vec<f64> {
    debug_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>() + 1, w.cols);
    (0..w.rows)
        .map(|r| {
            let row = w.row(r);
            let mut acc = row[w.cols - 1];
            let mut c = 0;
            for part in parts {
                for &x in *part {
                    acc += row[c] * x;
                    c += 1;
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn affine_unchecked(w: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    affine_concat(w, &[x])
}

/// Elementwise nonlinearity used inside every module.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Applies `kind` elementwise, returning values and local derivatives.
pub fn activation(z: &[f64], kind: Activation) -> (Vec<f64>, Vec<f64>) {
    z.iter()
        .map(|&v| (kind.value(v), kind.derivative(v)))
        .unzip()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `-weight · ln(max(probs[target], ε))`.
pub fn cross_entropy(probs: &[f64], target: usize, weight: f64) -> Result<f64> {
    let p = probs.get(target).ok_or(Error::ClassOutOfRange {
        target,
        classes: probs.len(),
    })?;
    Ok(-weight * p.max(LOG_EPS).ln())
}

/// Index of the largest entry; ties resolve to the smaller index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// SplitMix64 finalizer, used to fold stream keys into one seed.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded, platform-independent random source (ChaCha8 keyed by the seed).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream identified by `seed` and a key path, e.g. `(epoch, image, tree)`.
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        let mut s = mix64(seed);
        for &k in keys {
            s = mix64(s ^ mix64(k));
        }
        Self::new(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_bias() {
        let w = DenseMatrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(affine(&w, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let w = DenseMatrix::from_rows(&[&[0.0, 0.0, 5.0]]).unwrap();
        assert_eq!(affine(&w, &[9.0, 9.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn affine_matches_scalar_loops() {
        let mut rng = Rng::new(3);
        let w = DenseMatrix::random_uniform(4, 6, 1.0, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let got = affine(&w, &x).unwrap();
        for r in 0..4 {
            let mut acc = 0.0;
            for c in 0..5 {
                acc += w.get(r, c) * x[c];
            }
            acc += w.get(r, 5);
            assert!((got[r] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_reports_both_shapes() {
        let w = DenseMatrix::zeros(2, 3);
        let err = affine(&w, &[1.0, 2.0, 3.0]).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
        assert!(err.contains("length 3"), "{err}");
    }

    #[test]
    fn activation_values() {
        let (v, d) = activation(&[0.0], Activation::Tanh);
        assert_eq!((v[0], d[0]), (0.0, 1.0));
        let (v, d) = activation(&[-2.0, 3.0], Activation::Relu);
        assert_eq!(v, vec![0.0, 3.0]);
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn tanh_derivative_matches_finite_difference() {
        let h = 1e-6;
        let fd = (0.5f64 + h).tanh() - (0.5f64 - h).tanh();
        let fd = fd / (2.0 * h);
        assert!((Activation::Tanh.derivative(0.5) - fd).abs() < 1e-8);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[5.0, 1005.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0, 1.0).unwrap(), 0.0);
        let u = [0.25; 4];
        assert!((cross_entropy(&u, 2, 1.0).unwrap() - 4f64.ln()).abs() < 1e-15);
        let v = cross_entropy(&[0.2, 0.8], 0, 2.0).unwrap();
        assert!((v - 2.0 * -(0.2f64.ln())).abs() < 1e-15);
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2, 1.0),
            Err(Error::ClassOutOfRange {
                target: 2,
                classes: 2
            })
        ));
        // log(0) is clamped
        assert!((cross_entropy(&[0.0, 1.0], 0, 1.0).unwrap() + LOG_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let a: Vec<u64> = {
            let mut r = Rng::new(42);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = Rng::new(42);
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        let mut c = Rng::derive(42, &[1, 2]);
        let mut d = Rng::derive(42, &[2, 1]);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn argmax_prefers_smaller_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }
}
