//! Band matrices and the banded Cholesky factorization.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Symmetric band matrix storing the lower band: `(i, i - k)` for `k <= bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self { n, bw: bandwidth, data: vec![0.0; n * (bandwidth + 1)] }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Storage bandwidth (an upper bound on the structural bandwidth).
    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = i - j;
        (k <= self.bw).then(|| i * (self.bw + 1) + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Sets `(i, j)` and `(j, i)`. Panics outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] += v;
    }

    /// Largest `|i - j|` with a nonzero entry.
    pub fn effective_bandwidth(&self) -> usize {
        let mut best = 0;
        for i in 0..self.n {
            for k in (best + 1)..=self.bw.min(i) {
                if self.data[i * (self.bw + 1) + k] != 0.0 {
                    best = k;
                }
            }
        }
        best
    }

    /// `self + scale * other`, with the larger of the two bandwidths.
    pub fn add_scaled(&self, other: &SymBandMatrix, scale: f64) -> SymBandMatrix {
        assert_eq!(self.n, other.n);
        let bw = self.bw.max(other.bw);
        let mut out = SymBandMatrix::zeros(self.n, bw);
        for i in 0..self.n {
            for k in 0..=bw.min(i) {
                out.data[i * (bw + 1) + k] = self.get(i, i - k) + scale * other.get(i, i - k);
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> SymBandMatrix {
        SymBandMatrix { n: self.n, bw: self.bw, data: self.data.iter().map(|v| v * factor).collect() }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            y[i] += row[0] * x[i];
            for k in 1..=self.bw.min(i) {
                let v = row[k];
                y[i] += v * x[i - k];
                y[i - k] += v * x[i];
            }
        }
        y
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Lower band of a dense matrix, assumed symmetric.
    pub fn from_dense(m: &DMatrix<f64>, bandwidth: usize) -> Self {
        assert!(m.is_square());
        let mut out = Self::zeros(m.nrows(), bandwidth);
        for i in 0..m.nrows() {
            for k in 0..=bandwidth.min(i) {
                out.data[i * (bandwidth + 1) + k] = m[(i, i - k)];
            }
        }
        out
    }

    /// Cholesky factorization without pivoting.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        BandCholesky::factor(self)
    }
}

/// General (unsymmetric) band matrix with `lower` sub- and `upper` super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    // row i holds columns i - lower ..= i + upper
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self { n, lower, upper, data: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.lower < i || j > i + self.upper {
            return None;
        }
        Some(i * (self.lower + self.upper + 1) + (j + self.lower - i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] = v;
    }

    fn col_range(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        i.saturating_sub(self.lower)..=(i + self.upper).min(self.n - 1)
    }

    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::zeros(self.n, self.upper, self.lower);
        for i in 0..self.n {
            for j in self.col_range(i) {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> BandMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in self.col_range(i) {
                let s = out.slot(i, j).unwrap();
                out.data[s] *= d[i];
            }
        }
        out
    }

    /// Band product; bandwidths add.
    pub fn matmul(&self, other: &BandMatrix) -> BandMatrix {
        assert_eq!(self.n, other.n);
        let mut out = BandMatrix::zeros(self.n, self.lower + other.lower, self.upper + other.upper);
        for i in 0..self.n {
            for k in self.col_range(i) {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in other.col_range(k) {
                    let s = out.slot(i, j).unwrap();
                    out.data[s] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// Symmetric part `(A + A^T)/2` stored as a symmetric band.
    pub fn symmetric_part(&self) -> SymBandMatrix {
        let bw = self.lower.max(self.upper);
        let mut out = SymBandMatrix::zeros(self.n, bw);
        for i in 0..self.n {
            for k in 0..=bw.min(i) {
                let j = i - k;
                out.set(i, j, 0.5 * (self.get(i, j) + self.get(j, i)));
            }
        }
        out
    }

    /// Largest deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in self.col_range(i) {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Lower-triangular band factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i, i-k] at k
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SymBandMatrix) -> Result<Self> {
        let n = a.n;
        let bw = a.bw;
        let w = bw + 1;
        let mut l = a.data.clone();
        for i in 0..n {
            let jmin = i.saturating_sub(bw);
            for j in jmin..=i {
                // L[i,j] = (A[i,j] - sum_{m} L[i,m] L[j,m]) / L[j,j]
                let mmin = jmin.max(j.saturating_sub(bw));
                let mut s = l[i * w + (i - j)];
                for m in mmin..j {
                    s -= l[i * w + (i - m)] * l[j * w + (j - m)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::SingularPrecision { pivot: i, value: s });
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(Self { n, bw, data: l })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    /// `log |A| = 2 sum log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l(i, i).ln()).sum::<f64>()
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut s = b[i];
            for j in i.saturating_sub(self.bw)..i {
                s -= self.l(i, j) * b[j];
            }
            b[i] = s / self.l(i, i);
        }
    }

    /// Solves `L^T x = z` in place.
    pub fn solve_upper_in_place(&self, z: &mut [f64]) {
        for i in (0..self.n).rev() {
            let mut s = z[i];
            for j in (i + 1)..(i + 1 + self.bw).min(self.n) {
                s -= self.l(j, i) * z[j];
            }
            z[i] = s / self.l(i, i);
        }
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// Draw from `N(0, A^{-1})`: `L^{-T} z` with `z` standard normal.
    pub fn sample_inverse<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        self.solve_upper_in_place(&mut z);
        z
    }

    /// Dense `A^{-1}` (tests and diagnostics only).
    pub fn inverse_dense(&self) -> DMatrix<f64> {
        let mut inv = DMatrix::zeros(self.n, self.n);
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            inv.set_column(j, &nalgebra::DVector::from_vec(col));
        }
        inv
    }

    pub fn factor_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if j <= i && i - j <= self.bw { self.l(i, j) } else { 0.0 })
    }
}
