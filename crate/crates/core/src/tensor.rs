//! Dense 4-D tensor storage.
//!
//! Layout is always (N, C, H, W) row-major with N outermost. Values are
//! f32; gradients, when present, mirror the value buffer exactly.

use crate::error::TensorError;
use crate::rng::SplitMix64;
use std::fmt;

/// Extents of a 4-D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of (n, c, h, w).
    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    /// Shape of a per-channel vector (bias, norm gain/shift).
    pub fn per_channel(c: usize) -> Self {
        Shape::new(1, c, 1, 1)
    }

    /// Scalar shape used by loss nodes.
    pub fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// A named value buffer with optional gradient.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Shape,
    values: Vec<f32>,
    grad: Option<Vec<f32>>,
    trainable: bool,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            values: vec![0.0; shape.len()],
            grad: None,
            trainable: false,
        }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            values: vec![value; shape.len()],
            grad: None,
            trainable: false,
        }
    }

    pub fn from_vec(shape: Shape, values: Vec<f32>) -> Result<Self, TensorError> {
        if values.len() != shape.len() {
            return Err(TensorError::bad_config(
                "tensor",
                format!("{} values for shape {}", values.len(), shape),
            ));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
            trainable: false,
        })
    }

    /// Zero-mean Gaussian init with the given standard deviation.
    pub fn randn(shape: Shape, std: f32, rng: &mut SplitMix64) -> Self {
        let values = (0..shape.len())
            .map(|_| (rng.next_normal() * std as f64) as f32)
            .collect();
        Tensor {
            shape,
            values,
            grad: None,
            trainable: false,
        }
    }

    /// Marks the tensor trainable and allocates its gradient buffer.
    pub fn trainable(mut self) -> Self {
        self.trainable = true;
        self.grad = Some(vec![0.0; self.shape.len()]);
        self
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f32]> {
        self.grad.as_deref_mut()
    }

    /// Mutable values together with the (read-only) gradient.
    pub fn values_and_grad(&mut self) -> (&mut [f32], Option<&[f32]>) {
        (&mut self.values, self.grad.as_deref())
    }

    /// Adds `delta` into the gradient buffer (allocating it if needed).
    pub fn accumulate_grad(&mut self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.shape.len());
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.shape.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Adds a gradient of any scalar type, narrowing to f32.
    pub fn accumulate_grad_from<T: crate::kernels::Scalar>(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.shape.len());
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.shape.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d.to_f32();
        }
    }

    pub fn clear_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// NaN/Inf guard.
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_row_major_n_outermost() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.idx(0, 0, 0, 0), 0);
        assert_eq!(s.idx(0, 0, 0, 1), 1);
        assert_eq!(s.idx(0, 0, 1, 0), 5);
        assert_eq!(s.idx(0, 1, 0, 0), 20);
        assert_eq!(s.idx(1, 0, 0, 0), 60);
        assert_eq!(s.idx(1, 2, 3, 4), s.len() - 1);
    }

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]);
        assert!(err.is_err());
    }

    #[test]
    fn grad_accumulates_and_clears() {
        let mut t = Tensor::zeros(Shape::new(1, 1, 1, 3)).trainable();
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        t.clear_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_guard_detects_nan() {
        let mut t = Tensor::zeros(Shape::new(1, 1, 1, 2));
        assert!(t.all_finite());
        t.values_mut()[1] = f32::NAN;
        assert!(!t.all_finite());
    }
}
