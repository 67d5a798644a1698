//! Adam optimizer and the flat-then-linear-decay learning rate schedule.

use crate::error::TensorError;
use crate::tensor::Tensor;

/// Bias-corrected Adam state for one parameter group. Moment buffers are
/// kept per slot in the same order the group's parameters are visited.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Step counter; increments by one per `step_group` call.
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update across a parameter group. Slots are created lazily on the
    /// first step and must keep their shapes afterwards.
    pub fn step_group<'a, I>(&mut self, params: I, rate: f32) -> Result<(), TensorError>
    where
        I: Iterator<Item = &'a mut Tensor>,
    {
        self.t += 1;
        let t = self.t;
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        for (slot, param) in params.enumerate() {
            let len = param.shape().len();
            if slot == self.m.len() {
                self.m.push(vec![0.0; len]);
                self.v.push(vec![0.0; len]);
            }
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            if m.len() != len {
                return Err(TensorError::bad_config(
                    "adam_step",
                    format!("moment slot {} has {} entries, param has {}", slot, m.len(), len),
                ));
            }
            let (values, grad) = param.values_and_grad();
            let grad = grad.ok_or_else(|| {
                TensorError::bad_config("adam_step", format!("param slot {} has no gradient", slot))
            })?;
            adam_step(values, grad, m, v, t, rate, beta1, beta2, eps)?;
        }
        Ok(())
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// Standard bias-corrected Adam update of a single parameter buffer.
/// `t` is the step count *including* this step.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    rate: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
) -> Result<(), TensorError> {
    if param.len() != grad.len() || param.len() != m.len() || param.len() != v.len() {
        return Err(TensorError::bad_config(
            "adam_step",
            format!(
                "length mismatch: param {} grad {} m {} v {}",
                param.len(),
                grad.len(),
                m.len(),
                v.len()
            ),
        ));
    }
    let bias1 = 1.0 - beta1.powi(t as i32);
    let bias2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        param[i] -= rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Constant rate for `flat_epochs`, then an affine decay to zero over
/// `decay_epochs`. Epochs past the end return zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_rate: f32,
    pub flat_epochs: u32,
    pub decay_epochs: u32,
}

impl LrSchedule {
    pub fn new(base_rate: f32, flat_epochs: u32, decay_epochs: u32) -> Self {
        LrSchedule {
            base_rate,
            flat_epochs,
            decay_epochs,
        }
    }

    pub fn total_epochs(&self) -> u32 {
        self.flat_epochs + self.decay_epochs
    }

    pub fn rate_at(&self, epoch: u32) -> f32 {
        if epoch < self.flat_epochs {
            self.base_rate
        } else if epoch < self.flat_epochs + self.decay_epochs {
            let into = (epoch - self.flat_epochs) as f32;
            self.base_rate * (1.0 - into / self.decay_epochs as f32)
        } else {
            0.0
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::new(2e-4, 100, 100)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_param(value: f32, grad: f32) -> Tensor {
        let mut t = Tensor::from_vec(Shape::scalar(), vec![value])
            .unwrap()
            .trainable();
        t.accumulate_grad(&[grad]);
        t
    }

    #[test]
    fn first_step_moves_by_about_rate() {
        // Closed form: m_hat = g, v_hat = g^2, so the first step is
        // rate * g / (|g| + eps) = rate for g = 1.
        let mut p = vec![1.0f32];
        let mut m = vec![0.0f32];
        let mut v = vec![0.0f32];
        adam_step(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn zero_rate_keeps_params_but_updates_moments() {
        let mut state = AdamState::new();
        let mut p = scalar_param(2.0, 1.5);
        state.step_group(std::iter::once(&mut p), 0.0).unwrap();
        assert_eq!(p.values()[0], 2.0);
        assert!(state.m[0][0] != 0.0);
        assert!(state.v[0][0] != 0.0);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn identical_sequences_are_bitwise_identical() {
        let run = || {
            let mut state = AdamState::new();
            let mut p = scalar_param(1.0, 0.0);
            for i in 0..20 {
                p.clear_grad();
                p.accumulate_grad(&[(i as f32 * 0.37).sin()]);
                state.step_group(std::iter::once(&mut p), 0.01).unwrap();
            }
            p.values()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x) = x^2 / 2, grad = x; |x| < 1e-2 within 500 steps from 1.0.
        let mut state = AdamState::new();
        let mut p = scalar_param(1.0, 0.0);
        for _ in 0..500 {
            let x = p.values()[0];
            p.clear_grad();
            p.accumulate_grad(&[x]);
            state.step_group(std::iter::once(&mut p), 0.05).unwrap();
        }
        assert!(p.values()[0].abs() < 1e-2, "{}", p.values()[0]);
    }

    #[test]
    fn schedule_matches_flat_then_decay() {
        let s = LrSchedule::default();
        assert_eq!(s.rate_at(0), 2e-4);
        assert_eq!(s.rate_at(50), 2e-4);
        assert_eq!(s.rate_at(99), 2e-4);
        assert!((s.rate_at(150) - 1e-4).abs() < 1e-9);
        assert_eq!(s.rate_at(200), 0.0);
        assert_eq!(s.rate_at(10_000), 0.0);
    }

    #[test]
    fn schedule_is_nonnegative_and_monotone_after_flat() {
        let s = LrSchedule::default();
        let mut prev = f32::INFINITY;
        for e in 0..250 {
            let r = s.rate_at(e);
            assert!(r >= 0.0);
            if e >= s.flat_epochs {
                assert!(r <= prev);
            }
            prev = r;
        }
    }
}
