//! Adam optimizer over the model's parameter tensors.

use super::params::ModelParams;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(template: &ModelParams, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: template.zeroed(),
            v: template.zeroed(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::params::{init_params, ModelConfig};

    #[test]
    fn step_moves_against_gradient() {
        let cfg = ModelConfig {
            embed_dim: 3,
            hidden: 3,
            universal: 3,
            ..Default::default()
        };
        let mut p = init_params(&cfg, 2, 2, 0);
        let before = p.u[[0, 0]];
        let mut g = p.zeroed();
        g.u[[0, 0]] = 1.0;
        let mut opt = Adam::new(&p, 0.01);
        opt.step(&mut p, &g);
        assert!(p.u[[0, 0]] < before);
    }
}
