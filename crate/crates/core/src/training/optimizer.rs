use serde::{Deserialize, Serialize};

use crate::model::Weights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Dense first-order optimizer over every trainable tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: Option<(Weights, Weights)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            moments: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut Weights, grad: &Weights) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => params.add_scaled(-self.lr, grad),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (grad.zeros_like(), grad.zeros_like()));
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let lr = self.lr;
                let grads = grad.tensors();
                let ms = m.tensors_mut();
                let vs = v.tensors_mut();
                for ((((_, p), (_, g)), (_, m)), (_, v)) in
                    params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs)
                {
                    for idx in 0..p.data.len() {
                        let gi = g.data[idx];
                        let mi = &mut m.data[idx];
                        let vi = &mut v.data[idx];
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        p.data[idx] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
