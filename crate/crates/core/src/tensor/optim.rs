use serde::{Deserialize, Serialize};

use super::{Element, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub kind: OptimizerKind,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            clip_norm: None,
        }
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            kind: OptimizerKind::Sgd { momentum },
            clip_norm: None,
        }
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }
}

/// Per-parameter optimizer state (moments are kept in f64).
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter and clears the gradients.
    pub fn step<T: Element>(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        if let Some(p) = params
            .iter()
            .find(|p| !p.grad.as_ref().is_some_and(|g| g.is_finite()))
        {
            return Err(Error::NonFinite {
                context: format!("gradient of `{}`", p.name),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = params
                    .iter()
                    .flat_map(|p| p.grad.as_ref().unwrap().data().iter())
                    .map(|g| g.as_f64() * g.as_f64())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.steps += 1;
        let lr = self.config.learning_rate;
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad.take().expect("checked above");
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            match self.config.kind {
                OptimizerKind::Sgd { momentum } => {
                    for ((w, &g), mi) in p.value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()) {
                        *mi = momentum * *mi + g.as_f64() * clip;
                        *w = T::from_f64(w.as_f64() - lr * *mi);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.steps as i32);
                    let bc2 = 1.0 - beta2.powi(self.steps as i32);
                    for (((w, &g), mi), vi) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let g = g.as_f64() * clip;
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w = T::from_f64(w.as_f64() - lr * mhat / (vhat.sqrt() + eps));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.7);
        s.iter_mut().next().unwrap().grad = Some(Tensor::scalar(0.0));
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
        opt.step(&mut s).unwrap();
        assert_eq!(s.get(0).value.data()[0], 0.7);
        assert!(s.get(0).grad.is_none());
    }

    #[test]
    fn plain_sgd_step() {
        let mut s = scalar_store(0.0);
        s.iter_mut().next().unwrap().grad = Some(Tensor::scalar(1.0));
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0));
        opt.step(&mut s).unwrap();
        assert!((s.get(0).value.data()[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(0.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0));
        match opt.step(&mut s) {
            Err(Error::MissingGradient(name)) => assert_eq!(name, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = x², df/dx = 2x; SGD with lr 0.1 contracts by 0.8 per step.
        for config in [OptimizerConfig::sgd(0.1, 0.0), OptimizerConfig::adam(0.1)] {
            let mut s = scalar_store(3.0);
            let mut opt = Optimizer::new(config);
            for _ in 0..200 {
                let mut tape = Tape::<f64>::new();
                let b = s.bind(&mut tape);
                let y = tape.mse_loss(b.get(0), &Tensor::scalar(0.0)).unwrap();
                tape.backward(y).unwrap();
                s.accumulate_grads(&tape, &b);
                opt.step(&mut s).unwrap();
            }
            assert!(s.get(0).value.data()[0].abs() < 1e-3, "{config:?}");
        }
    }
}
