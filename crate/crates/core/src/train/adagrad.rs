//! Adagrad: per-entry accumulation of squared gradients with an adaptive
//! step size.

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdagradState<S: Scalar> {
    accumulators: Vec<Tensor<S>>,
    pub learning_rate: S,
    pub epsilon: S,
}

impl<S: Scalar> AdagradState<S> {
    pub fn new(store: &ParamStore<S>, learning_rate: S, epsilon: S) -> Self {
        AdagradState {
            accumulators: store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape().to_vec()))
                .collect(),
            learning_rate,
            epsilon,
        }
    }

    /// Per entry: acc += g²; θ -= lr · g / (√acc + ε). Gradients are reset to
    /// zero afterwards.
    pub fn step(&mut self, store: &mut ParamStore<S>) {
        for (id, acc) in store.ids().collect::<Vec<_>>().into_iter().zip(&mut self.accumulators) {
            // Split borrow: read grad values first, then update the value.
            let grads: Vec<S> = store.grad(id).data().to_vec();
            {
                let value = store.value_mut(id).data_mut();
                for ((v, a), g) in value.iter_mut().zip(acc.data_mut()).zip(&grads) {
                    // zero gradient leaves both the entry and its accumulator
                    // untouched (avoids 0/0 when eps is 0)
                    if *g != S::zero() {
                        *a += *g * *g;
                        *v = *v - self.learning_rate * *g / (a.sqrt() + self.epsilon);
                    }
                }
            }
            store.grad_mut(id).fill(S::zero());
        }
    }

    pub fn accumulator(&self, index: usize) -> &Tensor<S> {
        &self.accumulators[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_by_hand() {
        // g = 2, acc 0, lr 1, eps 0: acc = 4, delta = -1
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![5.0]));
        let mut opt = AdagradState::new(&store, 1.0, 0.0);
        store.grad_mut(x).data_mut()[0] = 2.0;
        opt.step(&mut store);
        assert_eq!(opt.accumulator(0).data(), &[4.0]);
        assert_eq!(store.value(x).data(), &[4.0]);
        assert_eq!(store.grad(x).data(), &[0.0]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![5.0]));
        let mut opt = AdagradState::new(&store, 1.0, 0.0);
        opt.step(&mut store);
        assert_eq!(store.value(x).data(), &[5.0]);
        assert_eq!(opt.accumulator(0).data(), &[0.0]);
    }

    #[test]
    fn repeated_unit_gradients() {
        // two g = 1 steps at lr 1, eps 0: deltas -1 then -1/sqrt(2)
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![0.0]));
        let mut opt = AdagradState::new(&store, 1.0, 0.0);
        store.grad_mut(x).data_mut()[0] = 1.0;
        opt.step(&mut store);
        assert_eq!(store.value(x).data(), &[-1.0]);
        store.grad_mut(x).data_mut()[0] = 1.0;
        opt.step(&mut store);
        let expected = -1.0 - 1.0 / 2.0f64.sqrt();
        assert!((store.value(x).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn step_norms_nonincreasing_for_constant_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![0.0, 0.0]));
        let mut opt = AdagradState::new(&store, 0.5, 1e-8);
        let mut last = f64::INFINITY;
        let mut prev_value = store.value(x).data().to_vec();
        for _ in 0..20 {
            store.grad_mut(x).data_mut().copy_from_slice(&[0.3, -0.7]);
            opt.step(&mut store);
            let now = store.value(x).data().to_vec();
            let norm: f64 = now
                .iter()
                .zip(&prev_value)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(norm <= last + 1e-15, "{norm} > {last}");
            last = norm;
            prev_value = now;
        }
    }

    #[test]
    fn accumulators_never_decrease() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::row(vec![1.0, -1.0, 0.5]));
        let mut opt = AdagradState::new(&store, 0.1, 1e-8);
        let mut prev = vec![0.0; 3];
        for step in 0..10 {
            let g = [0.1 * step as f64, -0.2, 0.0];
            store.grad_mut(x).data_mut().copy_from_slice(&g);
            opt.step(&mut store);
            let acc = opt.accumulator(0).data().to_vec();
            for (a, p) in acc.iter().zip(&prev) {
                assert!(a >= p);
            }
            prev = acc;
        }
    }
}
