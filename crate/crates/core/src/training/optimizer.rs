use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::encoder::is_decay_exempt;
use crate::tensor::{Float, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWSettings {
    fn default() -> Self {
        AdamWSettings {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Parameters whose names end in `bias` or belong to a layer norm are not
/// decayed.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub settings: AdamWSettings,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    decays: Vec<bool>,
    step: u64,
}

impl<T: Float> AdamW<T> {
    pub fn new(store: &ParamStore<T>, settings: AdamWSettings) -> Self {
        AdamW {
            settings,
            first: store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect(),
            second: store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect(),
            decays: store.ids().map(|id| !is_decay_exempt(store.name(id))).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update at rate `lr` and clears the gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<(), TrainingError> {
        if !store.grads_ready() {
            return Err(TrainingError::NoGradients);
        }
        if store.len() != self.first.len() {
            return Err(TrainingError::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let s = self.settings;
        let t = self.step as i32;
        let c1 = 1.0 - s.beta1.powi(t);
        let c2 = 1.0 - s.beta2.powi(t);
        let f = T::from_f64_lossy;
        let (b1, b2, eps) = (f(s.beta1), f(s.beta2), f(s.eps));
        let (one_b1, one_b2) = (f(1.0 - s.beta1), f(1.0 - s.beta2));
        let step_size = f(lr / c1);
        let inv_sqrt_c2 = f(1.0 / c2.sqrt());
        let shrink = f(1.0 - lr * s.weight_decay);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let decay = self.decays[i] && s.weight_decay != 0.0;
            let (value, grad) = store.value_and_grad_mut(id);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                if decay {
                    *p *= shrink;
                }
                *p -= step_size * *m / ((*v).sqrt() * inv_sqrt_c2 + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn scalar_store(name: &str, w: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add(name, Tensor::from_vec(&[1], vec![w]).unwrap());
        let mut g = Graph::new();
        let x = g.param(&s, id);
        let l = g.scale(x, grad);
        let l = g.sum(l);
        g.backward(l, &mut s).unwrap();
        s
    }

    #[test]
    fn first_step_matches_hand_oracle() {
        let mut s = scalar_store("w", 0.5, 1.0);
        let mut opt = AdamW::new(&s, AdamWSettings::default());
        opt.step(&mut s, 0.1).unwrap();
        let m_hat = (0.1f64) / (1.0 - 0.9);
        let v_hat = (0.001f64) / (1.0 - 0.999);
        let oracle = 0.5 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        let got = s.value(s.ids().next().unwrap()).data()[0];
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        assert!((got - 0.4).abs() < 1e-6);
        assert!(!s.grads_ready());
        assert!(matches!(opt.step(&mut s, 0.1), Err(TrainingError::NoGradients)));
    }

    #[test]
    fn zero_gradient_cases() {
        let mut s = scalar_store("w", 2.0, 0.0);
        let mut opt = AdamW::new(&s, AdamWSettings::default());
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.value(s.ids().next().unwrap()).data()[0], 2.0);

        let mut s = scalar_store("w", 2.0, 0.0);
        let mut opt = AdamW::new(&s, AdamWSettings { weight_decay: 0.01, ..Default::default() });
        opt.step(&mut s, 0.1).unwrap();
        assert!((s.value(s.ids().next().unwrap()).data()[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);

        let mut s = scalar_store("layer.bias", 2.0, 0.0);
        let mut opt = AdamW::new(&s, AdamWSettings { weight_decay: 0.01, ..Default::default() });
        opt.step(&mut s, 0.1).unwrap();
        assert_eq!(s.value(s.ids().next().unwrap()).data()[0], 2.0);
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let mut s = scalar_store("w", -1.25, 3.0);
        let mut opt = AdamW::new(&s, AdamWSettings { weight_decay: 0.1, ..Default::default() });
        opt.step(&mut s, 0.0).unwrap();
        assert_eq!(s.value(s.ids().next().unwrap()).data()[0], -1.25);
    }
}
