//! Instance normalization and spatial mean pooling.
//!
//! Statistics are accumulated in f64 regardless of the element type so the
//! per-slice mean/variance stay accurate on large feature maps.

use super::{for_chunks_mut, map_chunks_mut, Exec, Scalar};
use crate::tensor::Shape;

/// Per-(sample, channel) standardization followed by the affine map
/// `gain * xhat + shift`. Returns the saved per-slice (mean, inv_std)
/// needed by the backward pass.
pub fn instance_norm_forward<T: Scalar>(
    exec: Exec,
    x: &[T],
    gain: &[T],
    shift: &[T],
    shape: Shape,
    eps: f64,
    y: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let slice = shape.h * shape.w;
    let c = shape.c;
    let stats = map_chunks_mut(exec, y, slice, |s, ys| {
        let ch = s % c;
        let xs = &x[s * slice..(s + 1) * slice];
        let mut sum = 0.0f64;
        for v in xs {
            sum += v.to_f64();
        }
        let mean = sum / slice as f64;
        let mut var = 0.0f64;
        for v in xs {
            let d = v.to_f64() - mean;
            var += d * d;
        }
        var /= slice as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let m = T::from_f64(mean);
        let is = T::from_f64(inv_std);
        let g = gain[ch];
        let b = shift[ch];
        for (yi, xi) in ys.iter_mut().zip(xs) {
            *yi = (*xi - m) * is * g + b;
        }
        (m, is)
    });
    stats.into_iter().unzip()
}

/// Accumulates gradients for input, gain, and shift.
pub fn instance_norm_backward<T: Scalar>(
    exec: Exec,
    x: &[T],
    gain: &[T],
    shape: Shape,
    mean: &[T],
    inv_std: &[T],
    gy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dshift: &mut [T],
) {
    let slice = shape.h * shape.w;
    let c = shape.c;
    let partials = map_chunks_mut(exec, dx, slice, |s, dxs| {
        let ch = s % c;
        let xs = &x[s * slice..(s + 1) * slice];
        let gys = &gy[s * slice..(s + 1) * slice];
        let m = mean[s];
        let is = inv_std[s];
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for (g, xi) in gys.iter().zip(xs) {
            let xhat = ((*xi - m) * is).to_f64();
            sum_g += g.to_f64();
            sum_gx += g.to_f64() * xhat;
        }
        let mg = T::from_f64(sum_g / slice as f64);
        let mgx = T::from_f64(sum_gx / slice as f64);
        let scale = gain[ch] * is;
        for ((d, g), xi) in dxs.iter_mut().zip(gys).zip(xs) {
            let xhat = (*xi - m) * is;
            *d = *d + scale * (*g - mg - xhat * mgx);
        }
        (sum_g, sum_gx)
    });
    for (s, (sum_g, sum_gx)) in partials.into_iter().enumerate() {
        let ch = s % c;
        dshift[ch] = dshift[ch] + T::from_f64(sum_g);
        dgain[ch] = dgain[ch] + T::from_f64(sum_gx);
    }
}

/// (N, C, H, W) -> (N, C, 1, 1) mean over the spatial extent.
pub fn mean_spatial_forward<T: Scalar>(exec: Exec, x: &[T], shape: Shape, y: &mut [T]) {
    let slice = shape.h * shape.w;
    for_chunks_mut(exec, y, 1, |s, ys| {
        let xs = &x[s * slice..(s + 1) * slice];
        let mut sum = 0.0f64;
        for v in xs {
            sum += v.to_f64();
        }
        ys[0] = T::from_f64(sum / slice as f64);
    });
}

pub fn mean_spatial_backward<T: Scalar>(exec: Exec, gy: &[T], shape: Shape, dx: &mut [T]) {
    let slice = shape.h * shape.w;
    let inv = T::from_f64(1.0 / slice as f64);
    for_chunks_mut(exec, dx, slice, |s, dxs| {
        let g = gy[s] * inv;
        for d in dxs.iter_mut() {
            *d = *d + g;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_slice_maps_to_shift() {
        // Zero variance: the eps floor keeps the output at the shift value.
        let shape = Shape::new(1, 1, 2, 2);
        let x = vec![5.0f32; 4];
        let mut y = vec![0.0f32; 4];
        instance_norm_forward(Exec::Seq, &x, &[1.0], &[0.0], shape, 1e-5, &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-3), "{y:?}");
    }

    #[test]
    fn standardizes_to_unit_population_std() {
        let shape = Shape::new(1, 1, 2, 2);
        let x = vec![1.0f32, 2.0, 3.0, 4.0];
        let mut y = vec![0.0f32; 4];
        instance_norm_forward(Exec::Seq, &x, &[1.0], &[0.0], shape, 1e-5, &mut y);
        let mean: f64 = y.iter().map(|v| *v as f64).sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-4);
        assert!((var.sqrt() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn zero_gain_annihilates() {
        let shape = Shape::new(1, 1, 2, 2);
        let x = vec![1.0f32, 2.0, 3.0, 4.0];
        let mut y = vec![0.0f32; 4];
        instance_norm_forward(Exec::Seq, &x, &[0.0], &[7.0], shape, 1e-5, &mut y);
        assert_eq!(y, vec![7.0; 4]);
    }

    #[test]
    fn mean_spatial_averages_each_plane() {
        let shape = Shape::new(1, 2, 2, 2);
        let x = vec![1.0f32, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0];
        let mut y = vec![0.0f32; 2];
        mean_spatial_forward(Exec::Seq, &x, shape, &mut y);
        assert_eq!(y, vec![2.5, 10.0]);
    }
}
