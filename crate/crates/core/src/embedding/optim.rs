use serde::{Deserialize, Serialize};

use super::model::Params;
use super::EmbeddingError;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EmbeddingError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Params<T>,
    v: Params<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(like: &Params<T>) -> Self {
        let zero = |p: &Params<T>| {
            let mut z = p.clone();
            z.tensors_mut().into_iter().for_each(|t| t.fill(T::zero()));
            z
        };
        Self {
            m: zero(like),
            v: zero(like),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, cfg: &AdamConfig, params: &mut Params<T>, grad: &Params<T>) {
        self.step += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let one = T::one();
        let c1 = one - T::lit(cfg.beta1.powi(self.step as i32));
        let c2 = one - T::lit(cfg.beta2.powi(self.step as i32));
        let lr = T::lit(cfg.learning_rate);
        let eps = T::lit(cfg.epsilon);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((w, g), m), v) in tensors {
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ArchConfig;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let arch = ArchConfig::tiny();
        let mut p = Params::<f64>::zeros(&arch).unwrap();
        let mut g = p.clone();
        g.dense[1].bias[0] = 3.0;
        g.dense[1].bias[1] = -0.5;
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        s.update(&cfg, &mut p, &g);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
        assert!((p.dense[1].bias[0] + 1e-4).abs() < 1e-10);
        assert!((p.dense[1].bias[1] - 1e-4).abs() < 1e-10);
        assert_eq!(p.dense[1].bias[2], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_weights_unchanged() {
        let arch = ArchConfig::tiny();
        let mut p = Params::<f32>::zeros(&arch).unwrap();
        p.conv[0].weight.fill(0.25);
        let before = p.clone();
        let g = Params::<f32>::zeros(&arch).unwrap();
        let mut s = AdamState::new(&p);
        s.update(&AdamConfig::default(), &mut p, &g);
        assert_eq!(p, before);
    }
}
