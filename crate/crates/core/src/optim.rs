//! Adam with bias correction. Parameters live outside the tape (plain
//! buffers); per batch the caller uploads them as leaves, runs backward,
//! and feeds the leaf gradients back here.

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// Number of completed update steps.
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Defaults beta1=0.9, beta2=0.999, epsilon=1e-8; `sizes` are the
    /// element counts of the parameter buffers this optimizer will drive,
    /// in a fixed order.
    pub fn new(lr: T, sizes: &[usize]) -> Self {
        Self::with_hyper(
            lr,
            T::from_f64c(0.9),
            T::from_f64c(0.999),
            T::from_f64c(1e-8),
            sizes,
        )
    }

    pub fn with_hyper(lr: T, beta1: T, beta2: T, epsilon: T, sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.m.len()
    }

    /// Advance the step counter; call once per optimizer step, before
    /// applying the per-buffer updates of that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Apply the current step's update to one parameter buffer.
    pub fn apply(&mut self, slot: usize, param: &mut [T], grad: &[T]) -> Result<()> {
        if slot >= self.m.len() {
            return Err(Error::contract(
                "adam_step",
                format!("slot {} out of {}", slot, self.m.len()),
            ));
        }
        if param.len() != self.m[slot].len() || grad.len() != param.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "slot {}: param {} / grad {} / moment {}",
                    slot,
                    param.len(),
                    grad.len(),
                    self.m[slot].len()
                ),
            ));
        }
        debug_assert!(self.step >= 1, "begin_step before apply");
        let one = T::one();
        let t = self.step as i32;
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    /// One full Adam step over a parallel set of parameter/gradient slices.
    pub fn step_slices(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} params / {} grads vs {} slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        self.begin_step();
        for (slot, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            self.apply(slot, p, g)?;
        }
        Ok(())
    }

    /// Largest |first-moment| entry — used by tests to observe decay.
    pub fn max_abs_first_moment(&self) -> T {
        let mut m = T::zero();
        for buf in &self.m {
            for &x in buf {
                if x.abs() > m {
                    m = x.abs();
                }
            }
        }
        m
    }
}
