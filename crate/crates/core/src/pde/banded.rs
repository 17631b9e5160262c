//! Banded LU without pivoting for the implicit step matrices.

use crate::error::{Error, Result};

/// Square matrix with equal lower and upper bandwidth `b`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, b: usize) -> Self {
        Self {
            n,
            b,
            data: vec![0.0; n * (2 * b + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.b >= i && j <= i + self.b);
        i * (2 * self.b + 1) + j + self.b - i
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.b < i || j > i + self.b {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.b);
                let hi = (i + self.b).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * v[j]).sum()
            })
            .collect()
    }

    /// In-place Doolittle factorization. Fails on a vanishing pivot.
    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, b) = (self.n, self.b);
        let mut scale = 0.0f64;
        for v in &self.data {
            scale = scale.max(v.abs());
        }
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if !(pivot.abs() > 1e-14 * scale) {
                return Err(Error::Numeric(format!("banded LU: pivot {pivot:e} at row {k}")));
            }
            let end = (k + b + 1).min(n);
            for i in k + 1..end {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                let row_k = self.idx(k, k);
                let row_i = self.idx(i, k);
                for d in 1..end - k {
                    self.data[row_i + d] -= l * self.data[row_k + d];
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
}

impl BandedLu {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b) = (self.m.n, self.m.b);
        let d = &self.m.data;
        let w = 2 * b + 1;
        for i in 1..n {
            let lo = i.saturating_sub(b);
            let row = i * w + b - i;
            let mut s = x[i];
            for j in lo..i {
                s -= d[row + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let row = i * w + b - i;
            let mut s = x[i];
            for j in i + 1..=hi {
                s -= d[row + j] * x[j];
            }
            x[i] = s / d[row + i];
        }
    }
}
