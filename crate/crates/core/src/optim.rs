use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied to the parameters directly, not folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Adam optimizer state: one pair of moment accumulators per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Adam {
            config,
            step: 0,
            first: params.iter().map(Tensor::zeros_like).collect(),
            second: params.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, {} accumulators",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "parameter {i} has shape {:?} but gradient has {:?}",
                        p.shape(),
                        g.shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gd[i];
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= c.learning_rate * c.weight_decay * pd[i];
                pd[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut params = vec![Tensor::vector(vec![1.0, 1.0, 1.0])];
        let grads = vec![Tensor::vector(vec![0.3, -20.0, 1e-3])];
        let mut adam = Adam::new(no_decay(0.01), &params);
        adam.step(&mut params, &grads).unwrap();
        let d = params[0].data();
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] - 1.01).abs() < 1e-6);
        assert!((d[2] - 0.99).abs() < 1e-4);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::vector(vec![0.5, -2.0])];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[2])];
        let mut adam = Adam::new(no_decay(0.1), &params);
        for _ in 0..5 {
            adam.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let mut params = vec![Tensor::vector(vec![0.0])];
        let mut adam = Adam::new(no_decay(0.1), &params);
        for _ in 0..200 {
            let w = params[0].data()[0];
            let grads = vec![Tensor::vector(vec![2.0 * (w - 3.0)])];
            adam.step(&mut params, &grads).unwrap();
        }
        assert!((params[0].data()[0] - 3.0).abs() < 1e-2, "{:?}", params[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::vector(vec![0.0, 1.0])];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &[Tensor::zeros(&[3])]);
        assert!(err.is_err());
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient() {
        let mut params = vec![Tensor::vector(vec![2.0])];
        let cfg = AdamConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Tensor::zeros(&[1])]).unwrap();
        assert!((params[0].data()[0] - 1.9).abs() < 1e-12);
    }
}
