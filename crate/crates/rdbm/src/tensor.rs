//! Shaped arrays of f64 scalars in row-major order.
//!
//! Images are stored normalized to [0, 1]; the same container carries
//! clean data, degraded data, residual maps, noise draws and intermediate
//! states. No broadcasting: elementwise operations demand equal shapes.

use crate::error::{RdbmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorGrid {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(RdbmError::InvalidConfig(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(TensorGrid { shape, data })
    }

    pub fn from_scalar(v: f64) -> Self {
        TensorGrid { shape: vec![1], data: vec![v] }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorGrid { shape, data: vec![0.0; n] }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        TensorGrid { shape, data: vec![v; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &TensorGrid) -> Result<()> {
        if self.shape != other.shape {
            return Err(RdbmError::shape(&self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> TensorGrid {
        TensorGrid {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &TensorGrid, f: F) -> Result<TensorGrid> {
        self.same_shape(other)?;
        Ok(TensorGrid {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Standard-normal draws in this shape from the given stream.
    pub fn normal_like(&self, stream: &mut crate::rng::Stream) -> TensorGrid {
        let mut data = vec![0.0; self.data.len()];
        stream.fill_normal(&mut data);
        TensorGrid { shape: self.shape.clone(), data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(TensorGrid::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn zip_map_rejects_shape_mismatch() {
        let a = TensorGrid::zeros(vec![2, 2]);
        let b = TensorGrid::zeros(vec![4]);
        assert!(matches!(
            a.zip_map(&b, |x, y| x + y),
            Err(RdbmError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn map_preserves_shape() {
        let a = TensorGrid::full(vec![3, 2], 2.0);
        let b = a.map(|v| v * v);
        assert_eq!(b.shape(), &[3, 2]);
        assert!(b.data().iter().all(|&v| v == 4.0));
    }
}
