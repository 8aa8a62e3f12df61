//! Seeded randomness and the small dense kernels the estimator needs.
//!
//! # Random number generation
//!
//! All randomness flows through [`Rng`], which is pinned to the ChaCha8
//! stream cipher (`rand_chacha`). A root generator is keyed by a 64-bit seed
//! (expanded with PCG32 as `SeedableRng::seed_from_u64` does) and uses stream
//! 0. Child generators keep the key and select a different 64-bit ChaCha
//! stream, computed by folding the child id into the parent stream with
//! SplitMix64. Distinct streams under one key never overlap. Normal variates
//! use the ziggurat sampler from `rand_distr`.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PlsiError, Result};

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator: ChaCha8 keyed by `seed`, positioned on `stream`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    /// Generator for the nested substream `seed / path[0] / path[1] / ...`.
    pub fn substream(seed: u64, path: &[u64]) -> Self {
        path.iter()
            .fold(Rng::new(seed), |rng, &id| rng.derive(id))
    }

    /// Child generator for `id`; independent of how far `self` has advanced.
    pub fn derive(&self, id: u64) -> Self {
        let stream = splitmix64(self.stream ^ splitmix64(id.wrapping_add(1)));
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on (0, 1), never returning 0.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PlsiError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PlsiError::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Builds an `n x k` matrix from `k` columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(PlsiError::Shape("columns differ in length".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend(columns.iter().map(|c| c[i]));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(PlsiError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a column vector `v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(PlsiError::Shape(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// New matrix made of the listed rows, repeats allowed.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

/// Lower-triangular `L` with `L * L^T = cov`.
pub fn cholesky(cov: &Matrix) -> Result<Matrix> {
    let n = cov.rows();
    if cov.cols() != n {
        return Err(PlsiError::Shape(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            cov.cols()
        )));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (cov.get(i, j), cov.get(j, i));
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(PlsiError::Domain(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = cov.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k).powi(2);
        }
        if !(diag > 0.0) {
            return Err(PlsiError::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let d = diag.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut s = cov.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// `n` rows of `mean + L z` with `z` standard normal.
pub fn mvn_sample(rng: &mut Rng, mean: &[f64], chol: &Matrix, n: usize) -> Result<Matrix> {
    let p = mean.len();
    if chol.rows() != p || chol.cols() != p {
        return Err(PlsiError::Shape(format!(
            "mean has length {p} but factor is {}x{}",
            chol.rows(),
            chol.cols()
        )));
    }
    let mut out = Matrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = rng.normal());
        let row = out.row_mut(i);
        for r in 0..p {
            row[r] = mean[r] + dot(&chol.row(r)[..=r], &z[..=r]);
        }
    }
    Ok(out)
}

/// Inverse of the standard normal CDF.
pub fn standard_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PlsiError::Domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(p))
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Rng;
    use proptest::prelude::*;

    fn lower_times_transpose(l: &Matrix) -> Matrix {
        l.matmul(&l.transpose()).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
    }

    #[test]
    fn cholesky_two_by_two_reproduces_input() {
        let cov = Matrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let back = lower_times_transpose(&cholesky(&cov).unwrap());
        for (a, b) in back.data().iter().zip(cov.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let cov = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        match cholesky(&cov) {
            Err(PlsiError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn mvn_with_zero_factor_returns_mean() {
        let mut rng = Rng::new(3);
        let mean = [1.0, -2.0, 0.5];
        let x = mvn_sample(&mut rng, &mean, &Matrix::zeros(3, 3), 10).unwrap();
        for i in 0..10 {
            assert_eq!(x.row(i), &mean);
        }
    }

    #[test]
    fn mvn_shape_mismatch() {
        let mut rng = Rng::new(3);
        assert!(mvn_sample(&mut rng, &[0.0; 2], &Matrix::identity(3), 1).is_err());
    }

    #[test]
    fn mvn_equicorrelated_sample_correlation() {
        let p = 8;
        let rho = 0.3;
        let mut cov = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                cov.set(i, j, if i == j { 1.0 } else { rho });
            }
        }
        let l = cholesky(&cov).unwrap();
        let mut rng = Rng::new(11);
        let n = 100_000;
        let x = mvn_sample(&mut rng, &[0.0; 8], &l, n).unwrap();
        for a in 0..p {
            for b in (a + 1)..p {
                let (ca, cb) = (x.column(a), x.column(b));
                let (ma, mb) = (mean(&ca), mean(&cb));
                let cov_ab: f64 = ca.iter().zip(&cb).map(|(u, v)| (u - ma) * (v - mb)).sum();
                let r = cov_ab / (sample_sd(&ca) * sample_sd(&cb) * (n - 1) as f64);
                assert!((r - 0.3).abs() < 0.01, "pair ({a},{b}) corr {r}");
            }
        }
    }

    #[test]
    fn mvn_is_deterministic() {
        let l = Matrix::identity(4);
        let a = mvn_sample(&mut Rng::new(5), &[0.0; 4], &l, 20).unwrap();
        let b = mvn_sample(&mut Rng::new(5), &[0.0; 4], &l, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(standard_normal_quantile(0.5).unwrap(), 0.0);
        assert!((standard_normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-8);
        assert!((standard_normal_quantile(0.025).unwrap() + 1.959_963_984_540_054).abs() < 1e-8);
        assert!(standard_normal_quantile(0.0).is_err());
        assert!(standard_normal_quantile(1.0).is_err());
        assert!(standard_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_inverts_cdf_on_grid() {
        let normal = Normal::standard();
        for k in 0..=100 {
            let x = -5.0 + 0.1 * k as f64;
            let back = standard_normal_quantile(normal.cdf(x)).unwrap();
            assert!((back - x).abs() < 1e-6, "x = {x}, back = {back}");
        }
    }

    #[test]
    fn substreams_differ() {
        for seed in [0u64, 1, 42, u64::MAX] {
            let mut a = Rng::substream(seed, &[1]);
            let mut b = Rng::substream(seed, &[2]);
            let sa: Vec<u64> = (0..10_000).map(|_| a.next_u64()).collect();
            let sb: Vec<u64> = (0..10_000).map(|_| b.next_u64()).collect();
            assert_ne!(sa, sb);
        }
    }

    #[test]
    fn derive_ignores_parent_position() {
        let mut parent = Rng::new(9);
        let before = parent.derive(4).next_u64();
        parent.uniform();
        assert_eq!(parent.derive(4).next_u64(), before);
        assert_eq!(Rng::substream(9, &[4]).next_u64(), before);
    }

    #[test]
    fn type7_quantile_matches_hand_values() {
        let v = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.0];
        // sorted: 1, 1.5, 2.6, 3, 4, 5, 9 ; h = 6q
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 9.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.25) - 2.05).abs() < 1e-12);
    }

    fn spd_strategy() -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-1.0f64..1.0, 64).prop_map(|a| {
            let a = Matrix::new(8, 8, a).unwrap();
            let mut s = a.matmul(&a.transpose()).unwrap();
            for i in 0..8 {
                s.set(i, i, s.get(i, i) + 0.5);
            }
            s
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn cholesky_roundtrip_on_random_spd(cov in spd_strategy()) {
            let back = lower_times_transpose(&cholesky(&cov).unwrap());
            let scale = cov.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in back.data().iter().zip(cov.data()) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
        }
    }
}
