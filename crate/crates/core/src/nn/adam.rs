use super::graph::ParamStore;
use super::tensor::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Adam {
            cfg,
            step: 0,
            first: store.tensors().iter().map(zeros).collect(),
            second: store.tensors().iter().map(zeros).collect(),
        }
    }

    /// One update. Tensors without a gradient are treated as having a zero
    /// gradient, so their moments still decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Matrix>]) {
        assert_eq!(grads.len(), store.len(), "gradient/store length mismatch");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (idx, grad) in grads.iter().enumerate() {
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            let p = store.get_mut(idx).data_mut();
            for k in 0..p.len() {
                let g = grad.as_ref().map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                if m[k] == 0.0 {
                    continue;
                }
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
