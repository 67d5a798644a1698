//! Array kernels behind the tape ops.
//!
//! Every kernel is generic over [`Scalar`] so the same code runs the f32
//! training path and the f64 shadow path used by gradient checks. Kernels
//! take an [`Exec`] switch: `Par` splits work across rayon threads, `Seq`
//! runs in place. Both paths compute each output element with the same
//! sequential reduction, so results are bitwise identical regardless of
//! the switch or thread count.

pub mod conv;
pub mod elem;
pub mod norm;

use std::fmt::Debug;

/// Element type of a kernel. Implemented for f32 (training) and f64
/// (gradient-check shadow path).
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Send + Sync + Debug + Default + 'static
{
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Execution strategy for a kernel call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Seq,
    /// Rayon data-parallel. Falls back to `Seq` when the `parallel`
    /// feature is disabled.
    Par,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Par
        } else {
            Exec::Seq
        }
    }
}

/// Applies `f` to every `size`-sized chunk of `data`, parallel or not.
/// Chunks are disjoint, so both paths produce identical bytes.
pub(crate) fn for_chunks_mut<T, F>(exec: Exec, data: &mut [T], size: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Par {
        use rayon::prelude::*;
        data.par_chunks_mut(size).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    for (i, c) in data.chunks_mut(size).enumerate() {
        f(i, c);
    }
}

/// Like [`for_chunks_mut`] but collects one result per chunk, in chunk
/// order for either path.
pub(crate) fn map_chunks_mut<T, R, F>(exec: Exec, data: &mut [T], size: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Par {
        use rayon::prelude::*;
        return data
            .par_chunks_mut(size)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    let _ = exec;
    data.chunks_mut(size)
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

/// Dot product with a fixed 8-lane accumulation order.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let full = a.len() / 8 * 8;
    let mut i = 0;
    while i < full {
        let pa = &a[i..i + 8];
        let pb = &b[i..i + 8];
        for k in 0..8 {
            acc[k] = acc[k] + pa[k] * pb[k];
        }
        i += 8;
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for k in full..a.len() {
        s = s + a[k] * b[k];
    }
    s
}

/// y += alpha * x
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.3 - 2.0).collect();
        let b: Vec<f64> = (0..37).map(|i| (i * i) as f64 * 0.01).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn chunk_runner_matches_seq() {
        let mut a: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let mut b = a.clone();
        for_chunks_mut(Exec::Seq, &mut a, 8, |i, c| c.iter_mut().for_each(|v| *v += i as f32));
        for_chunks_mut(Exec::Par, &mut b, 8, |i, c| c.iter_mut().for_each(|v| *v += i as f32));
        assert_eq!(a, b);
    }
}
