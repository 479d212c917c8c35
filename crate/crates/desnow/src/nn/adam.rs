//! Adam optimizer with bias correction. Deterministic: update order is the
//! caller's parameter order and nothing else.

use super::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the same parameter slice the optimizer was built
    /// with; reads accumulated gradients, writes values in place.
    pub fn step(&mut self, params: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter set changed size");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter().enumerate() {
            let g = p.grad();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            assert_eq!(g.len(), m.len(), "moment shape mismatch at parameter {i}");
            let mut values = p.values();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                values[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.set_values(&values);
        }
    }

    pub fn zero_grad(params: &[Tensor]) {
        for p in params {
            p.zero_grad();
        }
    }
}
