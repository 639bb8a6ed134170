//! Dense row-major f64 matrix. Small and allocation-honest; every network in
//! this project is a few hundred KB of parameters, so clarity and exact
//! reproducibility win over cleverness.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Tensor {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(mut self, k: f64) -> Tensor {
        for v in &mut self.data {
            *v *= k;
        }
        self
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Tensor { rows, cols, data }
    }

    pub fn row_vector(v: &[f64]) -> Tensor {
        Tensor { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    /// Gaussian init scaled by `std`.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(rows, cols);
        for v in &mut t.data {
            *v = crate::rng::normal(rng) * std;
        }
        t
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self @ other`, ikj loop order for cache-friendly accumulation.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dims");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T @ other`, used by backward passes without materializing
    /// transposes.
    pub fn t_matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.rows, other.rows, "t_matmul outer dims");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for p in 0..k {
            for i in 0..m {
                let a = self.data[p * m + i];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self @ other^T`.
    pub fn matmul_t(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.cols, "matmul_t inner dims");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (a, b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn argmax_row(&self, r: usize) -> usize {
        let row = self.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_manual() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let mut rng = crate::rng::rng_from(1, "tensor-test", 0);
        let a = Tensor::randn(4, 3, 1.0, &mut rng);
        let b = Tensor::randn(4, 5, 1.0, &mut rng);
        // a^T @ b via t_matmul vs explicit transpose.
        let mut at = Tensor::zeros(3, 4);
        for i in 0..4 {
            for j in 0..3 {
                *at.at_mut(j, i) = a.at(i, j);
            }
        }
        let want = at.matmul(&b);
        let got = a.t_matmul(&b);
        for (x, y) in want.data.iter().zip(&got.data) {
            assert!((x - y).abs() < 1e-12);
        }
        // x @ y^T via matmul_t vs explicit transpose.
        let x = Tensor::randn(3, 4, 1.0, &mut rng);
        let y = Tensor::randn(5, 4, 1.0, &mut rng);
        let mut yt = Tensor::zeros(4, 5);
        for i in 0..5 {
            for j in 0..4 {
                *yt.at_mut(j, i) = y.at(i, j);
            }
        }
        let want = x.matmul(&yt);
        let got = x.matmul_t(&y);
        for (a, b) in want.data.iter().zip(&got.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_row_picks_first_maximum() {
        let t = Tensor::from_vec(1, 4, vec![0.0, 3.0, 3.0, 1.0]);
        assert_eq!(t.argmax_row(0), 1);
    }
}
