//! Uniform one-dimensional grids with finite differences, quadrature,
//! interpolation and CSV round-tripping.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch")]
    GridMismatch,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// Uniform grid `x_i = x_min + i h`, `i = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub h: f64,
    pub n: usize,
}

impl Grid {
    /// Symmetric grid on `[-half_length, half_length]` with an odd number of
    /// nodes, so that `x = 0` is a node.
    pub fn make_symmetric(half_length: f64, n: usize) -> Result<Grid, GridError> {
        if !(half_length > 0.0) || !half_length.is_finite() {
            return Err(GridError::InvalidArgument(format!(
                "half length must be positive, got {half_length}"
            )));
        }
        if n < 8 || n % 2 == 0 {
            return Err(GridError::InvalidArgument(format!(
                "node count must be odd and at least 8, got {n}"
            )));
        }
        Ok(Grid {
            x_min: -half_length,
            h: 2.0 * half_length / (n - 1) as f64,
            n,
        })
    }

    /// Periodic grid on `[-half_length, half_length)` with `n` nodes.
    pub fn make_periodic(half_length: f64, n: usize) -> Result<Grid, GridError> {
        if !(half_length > 0.0) || n < 8 {
            return Err(GridError::InvalidArgument(format!(
                "bad periodic grid ({half_length}, {n})"
            )));
        }
        Ok(Grid {
            x_min: -half_length,
            h: 2.0 * half_length / n as f64,
            n,
        })
    }

    pub fn uniform(x_min: f64, h: f64, n: usize) -> Result<Grid, GridError> {
        if !(h > 0.0) || n < 2 || !x_min.is_finite() {
            return Err(GridError::InvalidArgument(format!(
                "bad uniform grid ({x_min}, {h}, {n})"
            )));
        }
        Ok(Grid { x_min, h, n })
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Length of the periodic cell spanned by the nodes.
    pub fn period(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn nearest_index(&self, x: f64) -> usize {
        let i = ((x - self.x_min) / self.h).round();
        i.clamp(0.0, (self.n - 1) as f64) as usize
    }

    pub fn matches(&self, other: &Grid) -> bool {
        self.n == other.n
            && (self.h - other.h).abs() <= 1e-12 * self.h
            && (self.x_min - other.x_min).abs() <= 1e-9 * self.h
    }

    /// Quadrature weight of node `i` (composite Simpson, closed with a
    /// three-eighths panel when the interval count is odd).
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        quad_weight(i, self.n, self.h)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.weight(i)).collect()
    }
}

#[inline]
fn quad_weight(i: usize, n: usize, h: f64) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h,
        3 => [1.0, 4.0, 1.0][i] * h / 3.0,
        4 => [1.0, 3.0, 3.0, 1.0][i] * 3.0 * h / 8.0,
        _ if n % 2 == 1 => {
            if i == 0 || i == n - 1 {
                h / 3.0
            } else if i % 2 == 1 {
                4.0 * h / 3.0
            } else {
                2.0 * h / 3.0
            }
        }
        _ => {
            let m = n - 3;
            let mut w = 0.0;
            if i < m {
                w += if i == 0 || i == m - 1 {
                    h / 3.0
                } else if i % 2 == 1 {
                    4.0 * h / 3.0
                } else {
                    2.0 * h / 3.0
                };
            }
            if i + 4 >= n {
                let k = i + 4 - n;
                w += [1.0, 3.0, 3.0, 1.0][k] * 3.0 * h / 8.0;
            }
            w
        }
    }
}

/// Finite-difference weights for derivatives `0..=m` at `z` on arbitrary
/// nodes. Returns `c[k][j]`.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k] == 0.0 || !a[p][k].is_finite() {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Accuracy order of the difference stencils.
pub const FD_ORDER: usize = 6;

/// Samples of a function on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n {
            return Err(GridError::InvalidArgument(format!(
                "{} values for {} nodes",
                values.len(),
                grid.n
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n).map(|i| f(grid.x(i))).collect();
        GridFunction { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.n] }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination `f(x, self, other)`.
    pub fn zip_with(
        &self,
        other: &GridFunction,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Self, GridError> {
        if !self.grid.matches(&other.grid) {
            return Err(GridError::GridMismatch);
        }
        let values = (0..self.grid.n)
            .map(|i| f(self.grid.x(i), self.values[i], other.values[i]))
            .collect();
        Ok(GridFunction { grid: self.grid, values })
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn axpy(&self, c: f64, other: &GridFunction) -> Result<Self, GridError> {
        self.zip_with(other, |_, a, b| a + c * b)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn integrate(&self) -> f64 {
        integrate(self)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Degree-7 Lagrange interpolation at an arbitrary point; the stencil is
    /// shifted inward near the ends.
    pub fn interpolate(&self, x: f64) -> f64 {
        lagrange8(&self.values, self.grid.x_min, self.grid.h, x)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), GridError> {
        write_columns(path, &["x", "value"], &[&self.grid.nodes(), &self.values])
    }

    /// Read a two-column `x,value` file sampled on a uniform grid.
    pub fn read_csv(path: &Path) -> Result<Self, GridError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: Option<&str>| -> Result<f64, GridError> {
                s.ok_or_else(|| GridError::Parse("missing column".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| GridError::Parse(e.to_string()))
            };
            xs.push(parse(rec.get(0))?);
            vs.push(parse(rec.get(1))?);
        }
        if xs.len() < 2 {
            return Err(GridError::Parse("fewer than two samples".into()));
        }
        let h = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
        for (i, &x) in xs.iter().enumerate() {
            if (x - (xs[0] + i as f64 * h)).abs() > 1e-6 * h {
                return Err(GridError::Parse(format!("non-uniform node at row {i}")));
            }
        }
        let grid = Grid::uniform(xs[0], h, xs.len())?;
        GridFunction::new(grid, vs)
    }
}

/// Degree-7 Lagrange interpolation of uniformly spaced samples.
pub fn lagrange8(values: &[f64], x_min: f64, h: f64, x: f64) -> f64 {
    let n = values.len();
    let t = (x - x_min) / h;
    if n < 8 {
        let i = t.floor().clamp(0.0, (n - 2) as f64) as usize;
        let s = t - i as f64;
        return values[i] * (1.0 - s) + values[i + 1] * s;
    }
    let i0 = (t.floor() as i64 - 3).clamp(0, n as i64 - 8) as usize;
    let s = t - i0 as f64;
    // barycentric weights for 8 equispaced nodes: (-1)^j C(7, j)
    const W: [f64; 8] = [1.0, -7.0, 21.0, -35.0, 35.0, -21.0, 7.0, -1.0];
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..8 {
        let d = s - j as f64;
        if d == 0.0 {
            return values[i0 + j];
        }
        let c = W[j] / d;
        num += c * values[i0 + j];
        den += c;
    }
    num / den
}

/// Derivative of the given order (1, 2 or 3) with sixth-order stencils:
/// centered in the interior, one-sided near the ends.
pub fn differentiate(f: &GridFunction, order: usize) -> Result<GridFunction, GridError> {
    if !(1..=3).contains(&order) {
        return Err(GridError::InvalidArgument(format!("derivative order {order}")));
    }
    let n = f.grid.n;
    let half = if order == 3 { 4 } else { 3 };
    let width = order + FD_ORDER;
    if n < width.max(2 * half + 1) {
        return Err(GridError::InvalidArgument(format!("{n} nodes too few for order {order}")));
    }
    let h = f.grid.h;
    let scale = h.powi(order as i32);
    let offsets: Vec<f64> = (-(half as i64)..=half as i64).map(|k| k as f64).collect();
    let central = fornberg(0.0, &offsets, order).swap_remove(order);
    let v = &f.values;
    let mut out = vec![0.0; n];
    for i in half..n - half {
        let mut s = 0.0;
        for (k, c) in central.iter().enumerate() {
            s += c * v[i + k - half];
        }
        out[i] = s / scale;
    }
    let nodes: Vec<f64> = (0..width).map(|k| k as f64).collect();
    for i in 0..half {
        let c = fornberg(i as f64, &nodes, order).swap_remove(order);
        out[i] = c.iter().zip(&v[..width]).map(|(c, v)| c * v).sum::<f64>() / scale;
        let j = n - 1 - i;
        let c = fornberg((width - 1 - i) as f64, &nodes, order).swap_remove(order);
        out[j] = c.iter().zip(&v[n - width..]).map(|(c, v)| c * v).sum::<f64>() / scale;
    }
    Ok(GridFunction { grid: f.grid, values: out })
}

pub fn integrate(f: &GridFunction) -> f64 {
    let g = &f.grid;
    f.values.iter().enumerate().map(|(i, v)| g.weight(i) * v).sum()
}

/// L2 inner product by quadrature.
pub fn inner(f: &GridFunction, g: &GridFunction) -> Result<f64, GridError> {
    if !f.grid.matches(&g.grid) {
        return Err(GridError::GridMismatch);
    }
    Ok(inner_unchecked(&f.grid, &f.values, &g.values))
}

#[inline]
pub fn inner_unchecked(grid: &Grid, f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).enumerate().map(|(i, (a, b))| grid.weight(i) * a * b).sum()
}

/// Weights integrating the quintic through six nodes over one cell, for each
/// placement of the cell inside the stencil.
fn cell_weights() -> [[f64; 6]; 5] {
    let mut out = [[0.0; 6]; 5];
    for (pos, row) in out.iter_mut().enumerate() {
        let s: Vec<f64> = (0..6).map(|j| j as f64 - pos as f64).collect();
        let a: Vec<Vec<f64>> = (0..6).map(|p| s.iter().map(|x| x.powi(p as i32)).collect()).collect();
        let b: Vec<f64> = (0..6).map(|p| 1.0 / (p as f64 + 1.0)).collect();
        let w = solve_dense(a, b).expect("vandermonde");
        row.copy_from_slice(&w);
    }
    out
}

fn cell_integrals(f: &GridFunction) -> Vec<f64> {
    let n = f.grid.n;
    let h = f.grid.h;
    let v = &f.values;
    if n < 6 {
        return (0..n - 1).map(|i| 0.5 * h * (v[i] + v[i + 1])).collect();
    }
    let w = cell_weights();
    (0..n - 1)
        .map(|i| {
            let start = i.saturating_sub(2).min(n - 6);
            let pos = i - start;
            let row = &w[pos];
            h * (0..6).map(|j| row[j] * v[start + j]).sum::<f64>()
        })
        .collect()
}

/// `F(x_i) = integral of f from x_min to x_i`.
pub fn cumulative_from_left(f: &GridFunction) -> GridFunction {
    let cells = cell_integrals(f);
    let mut out = vec![0.0; f.grid.n];
    for i in 0..cells.len() {
        out[i + 1] = out[i] + cells[i];
    }
    GridFunction { grid: f.grid, values: out }
}

/// `F(x_i) = integral of f from x_i to x_max`.
pub fn cumulative_from_right(f: &GridFunction) -> GridFunction {
    let cells = cell_integrals(f);
    let n = f.grid.n;
    let mut out = vec![0.0; n];
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1] + cells[i];
    }
    GridFunction { grid: f.grid, values: out }
}

/// Write named columns of equal length as CSV.
pub fn write_columns(path: &Path, headers: &[&str], cols: &[&[f64]]) -> Result<(), GridError> {
    if headers.len() != cols.len() {
        return Err(GridError::InvalidArgument("header/column count".into()));
    }
    let len = cols.first().map_or(0, |c| c.len());
    if cols.iter().any(|c| c.len() != len) {
        return Err(GridError::InvalidArgument("ragged columns".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    let mut row = Vec::with_capacity(cols.len());
    for i in 0..len {
        row.clear();
        row.extend(cols.iter().map(|c| format!("{:.17e}", c[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_weights_sum_to_length() {
        for n in [9, 10, 11, 2048, 4001] {
            let g = Grid::uniform(-1.0, 0.1, n).unwrap();
            let s: f64 = g.weights().iter().sum();
            assert!((s - 0.1 * (n - 1) as f64).abs() < 1e-12 * n as f64, "n={n}: {s}");
        }
    }

    #[test]
    fn fornberg_central_second() {
        let c = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(c[2], vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn cumulative_polynomial_exact() {
        let g = Grid::uniform(0.0, 0.1, 21).unwrap();
        let f = GridFunction::from_fn(g, |x| 5.0 * x.powi(4));
        let c = cumulative_from_left(&f);
        for i in 0..21 {
            assert!((c.values[i] - g.x(i).powi(5)).abs() < 1e-12);
        }
    }

    #[test]
    fn lagrange_reproduces_degree_seven() {
        let g = Grid::uniform(-2.0, 0.25, 17).unwrap();
        let p = |x: f64| x.powi(7) - 3.0 * x.powi(3) + 1.0;
        let f = GridFunction::from_fn(g, p);
        for &x in &[-1.93, 0.11, 1.99] {
            assert!((f.interpolate(x) - p(x)).abs() < 1e-10);
        }
    }
}
