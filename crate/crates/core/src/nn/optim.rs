use crate::nn::params::ModelParams;
use crate::nn::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.tensor_list().into_iter().map(Tensor::zeros_like).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let grads = grads.tensor_list();
        for (k, (_, p)) in params.named_tensors_mut().into_iter().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (idx, w) in p.data_mut().iter_mut().enumerate() {
                m[idx] = self.beta1 * m[idx] + (1.0 - self.beta1) * g[idx];
                v[idx] = self.beta2 * v[idx] + (1.0 - self.beta2) * g[idx] * g[idx];
                let m_hat = m[idx] / bc1;
                let v_hat = v[idx] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ModelDims;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let dims = ModelDims { num_nodes: 2, d_mem: 2, d_time: 1, d_edge: 0, d_static: 0 };
        let mut p = ModelParams::zeros(dims);
        let mut g = ModelParams::zeros(dims);
        g.decoder.b2.data_mut()[0] = 3.0;
        g.gru.b_z.data_mut()[1] = -0.5;
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, 0.01);
        assert!((p.decoder.b2.data()[0] + 0.01).abs() < 1e-9);
        assert!((p.gru.b_z.data()[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.gru.b_z.data()[0], 0.0);
    }
}
