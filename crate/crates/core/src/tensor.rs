//! Dense row-major tensors. Storage only; differentiable operations live on
//! the tape.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::BadTensorData {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1×n row vector.
    pub fn row(values: Vec<S>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    /// m×n matrix from row slices; rows must have equal lengths.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::BadTensorData {
                    shape: vec![m, n],
                    expected: n,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Row count for a rank-2 tensor; a rank-1 tensor counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    /// Length of the last axis (1 for a rank-0-like scalar shape []).
    pub fn last_axis(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn scalar_value(&self) -> S {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn row_slice(&self, r: usize) -> &[S] {
        let n = self.last_axis();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inverse of concatenation along the last axis: slices this tensor into
    /// pieces with the given last-axis widths.
    pub fn split_last_axis(&self, widths: &[usize]) -> Result<Vec<Tensor<S>>> {
        let total: usize = widths.iter().sum();
        if total != self.last_axis() {
            return Err(Error::InvalidArgument(format!(
                "split widths sum to {total}, last axis is {}",
                self.last_axis()
            )));
        }
        let rows = self.numel() / self.last_axis().max(1);
        let mut parts = Vec::with_capacity(widths.len());
        let mut offset = 0;
        for &w in widths {
            let mut shape = self.shape.clone();
            *shape.last_mut().expect("non-empty shape") = w;
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                let row = self.row_slice(r);
                data.extend_from_slice(&row[offset..offset + w]);
            }
            parts.push(Tensor::new(shape, data)?);
            offset += w;
        }
        Ok(parts)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += other` for identically shaped tensors.
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn fill(&mut self, v: S) {
        self.data.fill(v);
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.numel())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn split_inverts_concat() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let parts = t.split_last_axis(&[1, 2]).unwrap();
        assert_eq!(parts[0].data(), &[1.0, 4.0]);
        assert_eq!(parts[1].data(), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(parts[1].shape(), &[2, 2]);
    }

    #[test]
    fn split_bad_widths_rejected() {
        let t = Tensor::<f64>::row(vec![1.0, 2.0]);
        assert!(t.split_last_axis(&[3]).is_err());
    }
}
