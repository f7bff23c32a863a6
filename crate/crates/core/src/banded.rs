//! Band matrices with an LU factorization using partial pivoting.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("zero pivot in column {0}")]
    Singular(usize),
    #[error("dimension mismatch")]
    Dimension,
}

/// Square matrix with `kl` sub-diagonals and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku || i >= self.n || j >= self.n {
            None
        } else {
            Some(i * (self.kl + self.ku + 1) + j + self.kl - i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Set an entry inside the band; entries outside the band are ignored.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if let Some(k) = self.idx(i, j) {
            self.data[k] = v;
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if let Some(k) = self.idx(i, j) {
            self.data[k] += v;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut s = 0.0;
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                s += self.get(i, j) * xj;
            }
            *yi = s;
        }
        y
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..(i + self.ku.max(self.kl) + 1).min(self.n) {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn lu(&self) -> Result<BandLu, BandError> {
        BandLu::factor(self)
    }

    /// Number of negative pivots of `A - sigma I` under elimination without
    /// pivoting. For symmetric `A` this is the number of eigenvalues below
    /// `sigma`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let n = self.n;
        let bw = self.kl.max(self.ku);
        let w = 2 * bw + 1;
        let mut a = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + j + bw - i;
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                a[at(i, j)] = self.get(i, j) - if i == j { sigma } else { 0.0 };
            }
        }
        let mut neg = 0;
        for k in 0..n {
            let mut p = a[at(k, k)];
            if p == 0.0 {
                p = f64::EPSILON * (1.0 + sigma.abs());
                a[at(k, k)] = p;
            }
            if p < 0.0 {
                neg += 1;
            }
            for r in k + 1..(k + bw + 1).min(n) {
                let m = a[at(r, k)] / p;
                if m == 0.0 {
                    continue;
                }
                for j in k + 1..(k + bw + 1).min(n) {
                    a[at(r, j)] -= m * a[at(k, j)];
                }
            }
        }
        neg
    }
}

/// LU factors of a band matrix, LAPACK `gbtrf` style.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    // row i holds columns i - kl ..= i + kl + ku
    rows: Vec<f64>,
    mult: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn factor(m: &BandMatrix) -> Result<Self, BandError> {
        let n = m.n;
        let kl = m.kl;
        let ku = m.ku;
        let width = 2 * kl + ku + 1;
        let mut rows = vec![0.0; n * width];
        let at = |i: usize, j: usize| i * width + j + kl - i;
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                rows[at(i, j)] = m.get(i, j);
            }
        }
        let mut mult = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = rows[at(k, k)].abs();
            for r in k + 1..=last_row {
                let v = rows[at(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(BandError::Singular(k));
            }
            piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    rows.swap(at(k, j), at(p, j));
                }
            }
            let d = rows[at(k, k)];
            for r in k + 1..=last_row {
                let f = rows[at(r, k)] / d;
                mult[k * kl + (r - k - 1)] = f;
                rows[at(r, k)] = 0.0;
                if f != 0.0 {
                    for j in k + 1..=last_col {
                        rows[at(r, j)] -= f * rows[at(k, j)];
                    }
                }
            }
        }
        Ok(BandLu { n, kl, width, rows, mult, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, BandError> {
        let n = self.n;
        if b.len() != n {
            return Err(BandError::Dimension);
        }
        let kl = self.kl;
        let at = |i: usize, j: usize| i * self.width + j + kl - i;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for r in k + 1..(k + kl + 1).min(n) {
                x[r] -= self.mult[k * kl + (r - k - 1)] * xk;
            }
        }
        let ubw = self.width - kl - 1;
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..(k + ubw + 1).min(n) {
                s -= self.rows[at(k, j)] * x[j];
            }
            x[k] = s / self.rows[at(k, k)];
        }
        Ok(x)
    }
}
