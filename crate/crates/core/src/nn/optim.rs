use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) or plain SGD over a fixed list of
/// tensors. Moment buffers are allocated on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, step: 0, moments: Vec::new() }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient lists differ");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.moments.is_empty() {
                    self.moments = grads.iter().map(|g| (vec![0.0; g.len()], vec![0.0; g.len()])).collect();
                }
                let t = self.step as i32;
                let c1 = 1.0 - Self::BETA1.powi(t);
                let c2 = 1.0 - Self::BETA2.powi(t);
                for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.moments.iter_mut()) {
                    for i in 0..p.len() {
                        m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                        v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}
