//! Elementwise activations, loss reductions, and softmax cross-entropy.

use super::{for_chunks_mut, Exec, Scalar};

/// Clamp bound for the log losses: inputs are pinned to
/// [EPS_LOG, 1 - EPS_LOG] before taking logs.
pub const EPS_LOG: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Negative slope 0.2.
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

const LEAKY_SLOPE: f64 = 0.2;

pub fn pointwise_forward<T: Scalar>(exec: Exec, x: &[T], kind: Activation, y: &mut [T]) {
    let slope = T::from_f64(LEAKY_SLOPE);
    let chunk = 1024.max(x.len() / 64);
    for_chunks_mut(exec, y, chunk, |i, ys| {
        let xs = &x[i * chunk..i * chunk + ys.len()];
        match kind {
            Activation::Relu => {
                for (yi, xi) in ys.iter_mut().zip(xs) {
                    *yi = if *xi > T::zero() { *xi } else { T::zero() };
                }
            }
            Activation::LeakyRelu => {
                for (yi, xi) in ys.iter_mut().zip(xs) {
                    *yi = if *xi > T::zero() { *xi } else { *xi * slope };
                }
            }
            Activation::Tanh => {
                for (yi, xi) in ys.iter_mut().zip(xs) {
                    *yi = xi.tanh();
                }
            }
            Activation::Sigmoid => {
                for (yi, xi) in ys.iter_mut().zip(xs) {
                    *yi = T::one() / (T::one() + (-*xi).exp());
                }
            }
        }
    });
}

/// dx += gy * act'(x). `y` is the saved forward output (used by tanh and
/// sigmoid, whose derivatives are cheapest in terms of the output).
pub fn pointwise_backward<T: Scalar>(
    exec: Exec,
    x: &[T],
    y: &[T],
    gy: &[T],
    kind: Activation,
    dx: &mut [T],
) {
    let slope = T::from_f64(LEAKY_SLOPE);
    let chunk = 1024.max(x.len() / 64);
    for_chunks_mut(exec, dx, chunk, |i, dxs| {
        let off = i * chunk;
        let xs = &x[off..off + dxs.len()];
        let ys = &y[off..off + dxs.len()];
        let gys = &gy[off..off + dxs.len()];
        match kind {
            Activation::Relu => {
                for ((d, xi), g) in dxs.iter_mut().zip(xs).zip(gys) {
                    if *xi > T::zero() {
                        *d = *d + *g;
                    }
                }
            }
            Activation::LeakyRelu => {
                for ((d, xi), g) in dxs.iter_mut().zip(xs).zip(gys) {
                    *d = *d + if *xi > T::zero() { *g } else { *g * slope };
                }
            }
            Activation::Tanh => {
                for ((d, yi), g) in dxs.iter_mut().zip(ys).zip(gys) {
                    *d = *d + *g * (T::one() - *yi * *yi);
                }
            }
            Activation::Sigmoid => {
                for ((d, yi), g) in dxs.iter_mut().zip(ys).zip(gys) {
                    *d = *d + *g * *yi * (T::one() - *yi);
                }
            }
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// mean(|x|)
    MeanAbs,
    /// mean(-ln(clamp(x)))
    MeanNegLog,
    /// mean(-ln(1 - clamp(x)))
    MeanNegLog1m,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::MeanAbs => "mean_abs",
            LossKind::MeanNegLog => "mean_neg_log",
            LossKind::MeanNegLog1m => "mean_neg_log1m",
        }
    }
}

pub fn reduce_forward<T: Scalar>(x: &[T], kind: LossKind) -> T {
    let mut acc = 0.0f64;
    match kind {
        LossKind::MeanAbs => {
            for v in x {
                acc += v.to_f64().abs();
            }
        }
        LossKind::MeanNegLog => {
            for v in x {
                acc -= v.to_f64().clamp(EPS_LOG, 1.0 - EPS_LOG).ln();
            }
        }
        LossKind::MeanNegLog1m => {
            for v in x {
                acc -= (1.0 - v.to_f64().clamp(EPS_LOG, 1.0 - EPS_LOG)).ln();
            }
        }
    }
    T::from_f64(acc / x.len() as f64)
}

/// dx += g * d(reduce)/dx. The clamp zeroes the gradient outside its range.
pub fn reduce_backward<T: Scalar>(x: &[T], kind: LossKind, g: T, dx: &mut [T]) {
    let inv_len = T::from_f64(1.0 / x.len() as f64);
    let scale = g * inv_len;
    let lo = T::from_f64(EPS_LOG);
    let hi = T::from_f64(1.0 - EPS_LOG);
    match kind {
        LossKind::MeanAbs => {
            for (d, v) in dx.iter_mut().zip(x) {
                if *v > T::zero() {
                    *d = *d + scale;
                } else if *v < T::zero() {
                    *d = *d - scale;
                }
            }
        }
        LossKind::MeanNegLog => {
            for (d, v) in dx.iter_mut().zip(x) {
                if *v >= lo && *v <= hi {
                    *d = *d - scale / *v;
                }
            }
        }
        LossKind::MeanNegLog1m => {
            for (d, v) in dx.iter_mut().zip(x) {
                if *v >= lo && *v <= hi {
                    *d = *d + scale / (T::one() - *v);
                }
            }
        }
    }
}

/// Mean cross-entropy over rows of `logits` (N rows of `classes` entries).
/// Returns the loss and the row-wise softmax needed by the backward pass.
pub fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &[T],
    classes: usize,
    labels: &[usize],
) -> (T, Vec<T>) {
    let n = labels.len();
    debug_assert_eq!(logits.len(), n * classes);
    let mut probs = vec![T::zero(); logits.len()];
    let mut loss = 0.0f64;
    for (row, &label) in labels.iter().enumerate() {
        let z = &logits[row * classes..(row + 1) * classes];
        let p = &mut probs[row * classes..(row + 1) * classes];
        let mut zmax = z[0];
        for v in z {
            if *v > zmax {
                zmax = *v;
            }
        }
        let mut denom = 0.0f64;
        for (pi, zi) in p.iter_mut().zip(z) {
            *pi = (*zi - zmax).exp();
            denom += pi.to_f64();
        }
        let inv = T::from_f64(1.0 / denom);
        for pi in p.iter_mut() {
            *pi = *pi * inv;
        }
        loss += denom.ln() - (z[label] - zmax).to_f64();
    }
    (T::from_f64(loss / n as f64), probs)
}

/// dlogits += g * (softmax - onehot) / N.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &[T],
    classes: usize,
    labels: &[usize],
    g: T,
    dlogits: &mut [T],
) {
    let scale = g * T::from_f64(1.0 / labels.len() as f64);
    for (row, &label) in labels.iter().enumerate() {
        let p = &probs[row * classes..(row + 1) * classes];
        let d = &mut dlogits[row * classes..(row + 1) * classes];
        for (k, (di, pi)) in d.iter_mut().zip(p).enumerate() {
            let target = if k == label { T::one() } else { T::zero() };
            *di = *di + scale * (*pi - target);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let x = vec![-1.0f32, 0.0, 2.0];
        let mut y = vec![0.0f32; 3];
        pointwise_forward(Exec::Seq, &x, Activation::Relu, &mut y);
        assert_eq!(y, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn leaky_relu_slope() {
        let x = vec![-10.0f32];
        let mut y = vec![0.0f32; 1];
        pointwise_forward(Exec::Seq, &x, Activation::LeakyRelu, &mut y);
        assert!((y[0] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn tanh_at_origin_has_unit_gradient() {
        let x = vec![0.0f32];
        let mut y = vec![9.0f32; 1];
        pointwise_forward(Exec::Seq, &x, Activation::Tanh, &mut y);
        assert_eq!(y[0], 0.0);
        let mut dx = vec![0.0f32; 1];
        pointwise_backward(Exec::Seq, &x, &y, &[1.0], Activation::Tanh, &mut dx);
        assert_eq!(dx[0], 1.0);
    }

    #[test]
    fn mean_neg_log_closed_form() {
        let loss: f32 = reduce_forward(&[0.5f32], LossKind::MeanNegLog);
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn mean_abs_hand_example() {
        // mean(|1|, |-3|) = 2
        let loss: f32 = reduce_forward(&[1.0f32, -3.0], LossKind::MeanAbs);
        assert_eq!(loss, 2.0);
    }

    #[test]
    fn log_losses_survive_saturated_inputs() {
        for kind in [LossKind::MeanNegLog, LossKind::MeanNegLog1m] {
            let loss: f32 = reduce_forward(&[0.0f32, 1.0], kind);
            assert!(loss.is_finite());
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let (loss, probs) = softmax_cross_entropy_forward(&[0.3f32, -1.0, 2.0, 0.0], 2, &[1, 0]);
        assert!(loss.is_finite());
        for row in probs.chunks(2) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}
