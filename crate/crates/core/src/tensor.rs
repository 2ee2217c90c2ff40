//! Dense row-major tensors over a scalar field.
//!
//! Derivative tensors are small at desk scale, so a flat `Vec` with explicit
//! shape bookkeeping is all that is needed. Multiplication counts are charged
//! by the evaluators, not here: this module provides storage and indexing
//! only, plus elementwise helpers that perform no multiplications.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// n-by-n identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.set(&[i, i], S::one());
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[k]);
            lin = lin * self.shape[k] + i;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> &S {
        &self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: S) {
        let lin = self.linear_index(idx);
        self.data[lin] = value;
    }

    /// Decodes a flat position back into a multi-index.
    pub fn unravel(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.shape.len()];
        for k in (0..self.shape.len()).rev() {
            idx[k] = lin % self.shape[k];
            lin /= self.shape[k];
        }
        idx
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    /// Elementwise sum; additions only.
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.add(b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "shape": self.shape,
            "data": self.data.iter().map(S::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidFormat(format!("tensor must be an object, got {v}")))?;
        let shape: Vec<usize> = obj
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("tensor missing `shape` array".into()))?
            .iter()
            .map(|x| {
                x.as_u64()
                    .map(|n| n as usize)
                    .ok_or_else(|| Error::InvalidFormat(format!("bad shape entry {x}")))
            })
            .collect::<Result<_>>()?;
        let data: Vec<S> = obj
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("tensor missing `data` array".into()))?
            .iter()
            .map(S::from_json)
            .collect::<Result<_>>()?;
        Tensor::from_vec(&shape, data)
    }
}

/// Iterates all multi-indices of `shape` in row-major order.
pub fn multi_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    if shape.iter().any(|&d| d == 0) {
        return out;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        out.push(idx.clone());
        let mut k = shape.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rat;

    #[test]
    fn indexing_round_trips() {
        let mut t: Tensor<Rat> = Tensor::zeros(&[2, 3, 4]);
        t.set(&[1, 2, 3], Rat::from_int(7));
        assert_eq!(*t.get(&[1, 2, 3]), Rat::from_int(7));
        assert_eq!(*t.get(&[0, 0, 0]), Rat::zero());
        let lin = 1 * 12 + 2 * 4 + 3;
        assert_eq!(t.unravel(lin), vec![1, 2, 3]);
    }

    #[test]
    fn identity_matrix() {
        let t: Tensor<Rat> = Tensor::identity(3);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { Rat::one() } else { Rat::zero() };
                assert_eq!(*t.get(&[i, j]), want);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let t = Tensor::from_vec(&[2, 2], vec![
            Rat::from_int(1),
            Rat::ratio(1, 2),
            Rat::from_int(0),
            Rat::from_int(-3),
        ])
        .unwrap();
        let v = t.to_json();
        let back: Tensor<Rat> = Tensor::from_json(&v).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn multi_index_enumeration() {
        let idxs = multi_indices(&[2, 2]);
        assert_eq!(
            idxs,
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        assert!(multi_indices(&[2, 0]).is_empty());
    }

    #[test]
    fn shape_checked_add() {
        let a: Tensor<Rat> = Tensor::identity(2);
        let b: Tensor<Rat> = Tensor::identity(2);
        let c = a.add(&b).unwrap();
        assert_eq!(*c.get(&[0, 0]), Rat::from_int(2));
        let d: Tensor<Rat> = Tensor::zeros(&[3, 2]);
        assert!(a.add(&d).is_err());
    }
}
