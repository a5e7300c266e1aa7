//! Dense row-major tensors.
//!
//! All numerics in this crate are f64: desk-scale problem sizes make the
//! memory cost irrelevant and double precision keeps finite-difference
//! gradient checks tight.

use crate::error::{Error, Result};
use crate::numcore::rng::Rng;

/// A dense row-major tensor. Rank is 1 or 2 everywhere in this crate;
/// dimensions may be zero (an empty frame encodes as a 0 x d matrix).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default)]
    pub requires_grad: bool,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape matches the data length.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadShape {
                op: "Tensor::from_vec",
                shape,
                reason: "product of dimensions differs from data length",
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-0-like scalar stored as shape [1].
    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// 2-D tensor from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::BadShape {
                    op: "Tensor::from_rows",
                    shape: vec![n, r.len()],
                    reason: "ragged rows",
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::from_vec(vec![n, d], data)
    }

    /// Xavier-uniform initialized matrix [rows x cols].
    pub fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_in(-a, a)).collect();
        Tensor {
            shape: vec![rows, cols],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count for rank-2 tensors; rank-1 counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Column count: last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    /// Element accessor for rank-2 tensors.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Borrow one row of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let d = self.shape[1];
        &self.data[i * d..(i + 1) * d]
    }

    /// True if every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Plain triple-loop matrix product of row-major buffers.
/// a is [m x k], b is [k x n]; the result is [m x n].
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::BadShape { .. }));
    }

    #[test]
    fn zero_row_matrix_is_valid() {
        let t = Tensor::from_vec(vec![0, 8], vec![]).unwrap();
        assert_eq!(t.rows(), 0);
        assert_eq!(t.cols(), 8);
    }

    #[test]
    fn matmul_raw_known_product() {
        // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let out = matmul_raw(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1);
        assert_eq!(out, vec![17.0, 39.0]);
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = Rng::new(1);
        let t = Tensor::xavier(16, 16, &mut rng);
        let a = (6.0 / 32.0f64).sqrt();
        assert!(t.data.iter().all(|v| v.abs() <= a));
        assert!(t.data.iter().any(|v| v.abs() > 1e-4));
    }
}
