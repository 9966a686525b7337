//! Piecewise-linear hat functions on the regular grid `{0, 1/N, ..., 1}^d`.
//!
//! Multi-indices `(j_1, ..., j_d)` are linearised row-major with `j_1` slowest,
//! so in 2d the column of node `(j_1, j_2)` is `j_1 (N+1) + j_2`.

use serde::{Deserialize, Serialize};

use crate::banded::SymBandMatrix;
use crate::error::{domain, Result};
use nalgebra::DMatrix;

/// Hat function `psi_j` on the grid of size `n_grid`.
pub fn psi(j: usize, n_grid: usize, x: f64) -> Result<f64> {
    if n_grid == 0 {
        return domain("grid size must be at least 1");
    }
    if j > n_grid {
        return domain(format!("basis index {j} outside 0..={n_grid}"));
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("x = {x} outside [0, 1]"));
    }
    let r = n_grid as f64 * (x - j as f64 / n_grid as f64).abs();
    Ok(if r <= 1.0 { 1.0 - r } else { 0.0 })
}

/// Number of coefficients `(N+1)^d`.
pub fn n_coeffs(n_grid: usize, dim: usize) -> usize {
    (n_grid + 1).pow(dim as u32)
}

/// Cell index and right-node weight of `x` on the 1d grid.
///
/// Points on an interior node belong to the cell on their left.
fn locate(x: f64, n_grid: usize) -> (usize, f64) {
    let mut t = x * n_grid as f64;
    // snap rounding noise so that x = j/N lands exactly on node j
    let r = t.round();
    if (t - r).abs() <= 4.0 * f64::EPSILON * r.max(1.0) {
        t = r;
    }
    let cell = (t.ceil() as usize).saturating_sub(1).min(n_grid - 1);
    let frac = (t - cell as f64).clamp(0.0, 1.0);
    (cell, frac)
}

/// Nonzero 1d basis values at `x` as `(index, weight)` pairs.
fn hat_weights(x: f64, n_grid: usize) -> [(usize, f64); 2] {
    let (cell, frac) = locate(x, n_grid);
    [(cell, 1.0 - frac), (cell + 1, frac)]
}

fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return domain(format!("point has dimension {}, expected {dim}", x.len()));
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return domain(format!("coordinate {v} outside [0, 1]"));
    }
    Ok(())
}

/// Tensor-product basis values at one point, zero weights dropped.
fn point_entries(x: &[f64], n_grid: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    out.push((0, 1.0));
    for &xi in x {
        let w = hat_weights(xi, n_grid);
        let prev = std::mem::take(out);
        for (col, val) in prev {
            for &(j, wj) in &w {
                if wj != 0.0 {
                    out.push((col * (n_grid + 1) + j, val * wj));
                }
            }
        }
    }
}

/// Coefficients of `f_N = sum_j w_j psi_j` on the grid of size `n_grid` in
/// dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisExpansion {
    n_grid: usize,
    dim: usize,
    coeffs: Vec<f64>,
}

impl BasisExpansion {
    pub fn new(n_grid: usize, dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if n_grid == 0 || dim == 0 {
            return domain("grid size and dimension must be positive");
        }
        if coeffs.len() != n_coeffs(n_grid, dim) {
            return domain(format!(
                "expected {} coefficients for N = {n_grid}, d = {dim}, got {}",
                n_coeffs(n_grid, dim),
                coeffs.len()
            ));
        }
        Ok(Self { n_grid, dim, coeffs })
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficient at multi-index `idx`.
    pub fn coeff_at(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.dim || idx.iter().any(|&j| j > self.n_grid) {
            return domain(format!("multi-index {idx:?} invalid for N = {}", self.n_grid));
        }
        let lin = idx.iter().fold(0, |acc, &j| acc * (self.n_grid + 1) + j);
        Ok(self.coeffs[lin])
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim)?;
        Ok(eval_coeffs(&self.coeffs, self.n_grid, x))
    }
}

/// Piecewise-multilinear evaluation of raw coefficients; `x` must be valid.
pub(crate) fn eval_coeffs(coeffs: &[f64], n_grid: usize, x: &[f64]) -> f64 {
    match x.len() {
        1 => {
            let (c, t) = locate(x[0], n_grid);
            let (a, b) = (coeffs[c], coeffs[c + 1]);
            if t == 0.0 {
                a
            } else if t == 1.0 {
                b
            } else {
                a + t * (b - a)
            }
        }
        _ => {
            let mut buf = Vec::with_capacity(1 << x.len());
            point_entries(x, n_grid, &mut buf);
            buf.iter().map(|&(col, w)| w * coeffs[col]).sum()
        }
    }
}

/// Sparse `n x (N+1)^d` design matrix `Phi_{ij} = psi_j(x_i)` in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDesign {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseDesign {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `Phi^T y`.
    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_rows);
        let mut out = vec![0.0; self.n_cols];
        for (i, &yi) in y.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
        out
    }

    /// `Phi w`.
    pub fn mul(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.n_cols);
        (0..self.n_rows).map(|i| self.row(i).map(|(j, v)| v * w[j]).sum()).collect()
    }

    /// Largest `|j - k|` among column pairs sharing a row; the bandwidth of `Phi^T Phi`.
    pub fn gram_bandwidth(&self) -> usize {
        (0..self.n_rows)
            .map(|i| {
                let r = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
                match (r.iter().min(), r.iter().max()) {
                    (Some(a), Some(b)) => b - a,
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0)
    }

    /// Dense `Phi^T Phi`, accumulated row by row in `O(n 4^d)`.
    pub fn gram_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_cols, self.n_cols);
        for i in 0..self.n_rows {
            for (j, vj) in self.row(i) {
                for (k, vk) in self.row(i) {
                    g[(j, k)] += vj * vk;
                }
            }
        }
        g
    }

    /// Banded `Phi^T Phi` with the given bandwidth (at least `gram_bandwidth()`).
    pub fn gram_banded(&self, bandwidth: usize) -> SymBandMatrix {
        let mut g = SymBandMatrix::zeros(self.n_cols, bandwidth);
        for i in 0..self.n_rows {
            for (j, vj) in self.row(i) {
                for (k, vk) in self.row(i) {
                    if k <= j {
                        g.add(j, k, vj * vk);
                    }
                }
            }
        }
        g
    }
}

/// Design matrix for row-major `points` (`n * dim` values) on the grid of size `n_grid`.
pub fn design_matrix(points: &[f64], n_grid: usize, dim: usize) -> Result<SparseDesign> {
    if n_grid == 0 || dim == 0 {
        return domain("grid size and dimension must be positive");
    }
    if !points.len().is_multiple_of(dim) {
        return domain(format!("{} coordinates do not split into {dim}-vectors", points.len()));
    }
    let n_rows = points.len() / dim;
    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    let mut cols = Vec::with_capacity(n_rows * (1 << dim));
    let mut vals = Vec::with_capacity(n_rows * (1 << dim));
    row_ptr.push(0);
    let mut buf = Vec::with_capacity(1 << dim);
    for x in points.chunks_exact(dim) {
        check_point(x, dim)?;
        point_entries(x, n_grid, &mut buf);
        for &(c, v) in &buf {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseDesign { n_rows, n_cols: n_coeffs(n_grid, dim), row_ptr, cols, vals })
}

/// Interpolant of `f` at the grid nodes: `coeffs[(j_1..j_d)] = f(j_1/N, ..., j_d/N)`.
pub fn interpolate_function<F>(f: F, n_grid: usize, dim: usize) -> Result<BasisExpansion>
where
    F: Fn(&[f64]) -> f64,
{
    if n_grid == 0 || dim == 0 {
        return domain("grid size and dimension must be positive");
    }
    let nodes = grid_points(n_grid, dim);
    let coeffs = nodes.chunks_exact(dim).map(&f).collect();
    BasisExpansion::new(n_grid, dim, coeffs)
}

/// All nodes of `{0, 1/K, ..., 1}^d` in canonical order, row-major flattened.
pub fn grid_points(k: usize, dim: usize) -> Vec<f64> {
    let total = n_coeffs(k, dim);
    let mut out = Vec::with_capacity(total * dim);
    for lin in 0..total {
        let mut rem = lin;
        let start = out.len();
        out.resize(start + dim, 0.0);
        for axis in (0..dim).rev() {
            out[start + axis] = (rem % (k + 1)) as f64 / k as f64;
            rem /= k + 1;
        }
    }
    out
}
