//! Bias-corrected Adam. Frozen parameters are skipped entirely, moments included.

use super::{Grads, Registry, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(registry: &Registry<F>, config: AdamConfig) -> Self {
        let first: Vec<Vec<F>> = registry.iter().map(|(_, p)| vec![F::zero(); p.value.len()]).collect();
        AdamState {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step(&mut self, registry: &mut Registry<F>, grads: &Grads<F>) -> Result<()> {
        if self.first.len() != registry.len() {
            return Err(Error::Invalid("optimizer state does not match registry".into()));
        }
        for (id, p) in registry.iter() {
            if p.trainable && grads.get(id).is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (F::of(beta1), F::of(beta2));
        let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
        let ids: Vec<_> = registry.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id).unwrap();
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            for (((x, &gi), mi), vi) in registry
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let mhat = mi.as_f64() / c1;
                let vhat = vi.as_f64() / c2;
                *x -= F::of(lr * mhat / (vhat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn registry() -> Registry<f64> {
        let mut r = Registry::new();
        r.add("a", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        r.add("b", Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap()).unwrap();
        r
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut r = registry();
        let before = r.clone();
        let mut st = AdamState::new(&r, AdamConfig::default());
        let g = r.zero_grads();
        st.step(&mut r, &g).unwrap();
        assert_eq!(r, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut r = registry();
        let before = r.clone();
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(&r, cfg);
        let mut g = r.zero_grads();
        let a = r.find("a").unwrap();
        let b = r.find("b").unwrap();
        g.set(a, Tensor::from_vec(&[3], vec![0.3, -2.0, 5.0]).unwrap());
        g.set(b, Tensor::from_vec(&[2], vec![-0.01, 1.0]).unwrap());
        st.step(&mut r, &g).unwrap();
        for id in [a, b] {
            for ((new, old), gi) in r.value(id).data().iter().zip(before.value(id).data()).zip(g.get(id).unwrap().data()) {
                assert!((new - old + cfg.lr * gi.signum()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn frozen_and_missing() {
        let mut r = registry();
        let a = r.find("a").unwrap();
        r.set_trainable(a, false);
        let before = r.value(a).clone();
        let mut st = AdamState::new(&r, AdamConfig::default());
        let mut g = r.zero_grads();
        g.set(a, Tensor::full(&[3], 1.0));
        g.set(r.find("b").unwrap(), Tensor::full(&[2], 1.0));
        for _ in 0..100 {
            st.step(&mut r, &g).unwrap();
        }
        assert_eq!(r.value(a), &before);

        g.clear(r.find("b").unwrap());
        assert!(matches!(st.step(&mut r, &g), Err(Error::MissingGrad(name)) if name == "b"));
        // frozen parameters may lack gradients
        g.set(r.find("b").unwrap(), Tensor::full(&[2], 1.0));
        g.clear(a);
        st.step(&mut r, &g).unwrap();
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut r = registry();
        let before = r.clone();
        let mut st = AdamState::new(&r, AdamConfig { lr: 0.0, ..AdamConfig::default() });
        let mut g = r.zero_grads();
        g.set(r.find("a").unwrap(), Tensor::full(&[3], 3.0));
        for _ in 0..5 {
            st.step(&mut r, &g).unwrap();
        }
        assert_eq!(r, before);
    }
}
