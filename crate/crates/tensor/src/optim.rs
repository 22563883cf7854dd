//! Adam optimizer over a [`ParamSet`].

use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct Adam<T> {
    beta1: T,
    beta2: T,
    eps: T,
    step_count: u64,
    // First/second moment estimates, lazily allocated per ParamId.
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// Apply one update to every trainable parameter, in insertion order.
    /// `grads` is indexed by ParamId; missing entries count as zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>], lr: T) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        if self.m.len() < params.len() {
            self.m.resize_with(params.len(), || None);
            self.v.resize_with(params.len(), || None);
        }
        let ids: Vec<ParamId> = params.trainable_ids().collect();
        for id in ids {
            let shape = params.get(id).shape().to_vec();
            let zero;
            let g = match grads.get(id.0).and_then(|g| g.as_ref()) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(&shape);
                    &zero
                }
            };
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
            let p = params.get_mut(id);
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_hand_computation() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.insert("w", Tensor::scalar(1.0), true);
        let mut opt = Adam::new();
        let grads = vec![Some(Tensor::scalar(0.5))];
        opt.step(&mut ps, &grads, 0.1);
        // t=1: mhat = g, vhat = g^2, update = lr * g / (|g| + eps) ~= lr
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((ps.get(id).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_first_step_leaves_param_unchanged() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.insert("w", Tensor::scalar(2.0), true);
        let mut opt = Adam::new();
        opt.step(&mut ps, &[None], 0.1);
        assert_eq!(ps.get(id).item(), 2.0);
    }
}
