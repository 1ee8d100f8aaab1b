//! Adam with decoupled weight decay.

use super::params::ParamEntry;

/// Optimizer state for one fixed set of parameter arrays.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[ParamEntry], weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: decoupled decay, then the bias-corrected Adam step.
    pub fn step(&mut self, params: &mut [ParamEntry], grads: &[ParamEntry], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.name, g.name);
            for i in 0..p.data.len() {
                let grad = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= lr * self.weight_decay * p.data[i];
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    /// Serializes moments as named entries (for checkpoints).
    pub fn export_state(&self, params: &[ParamEntry]) -> (Vec<ParamEntry>, Vec<ParamEntry>, u64) {
        let m = params
            .iter()
            .zip(&self.m)
            .map(|(p, m)| ParamEntry::new(p.name.clone(), p.shape.clone(), m.clone()))
            .collect();
        let v = params
            .iter()
            .zip(&self.v)
            .map(|(p, v)| ParamEntry::new(p.name.clone(), p.shape.clone(), v.clone()))
            .collect();
        (m, v, self.t)
    }

    /// Restores moments captured by [`AdamW::export_state`].
    pub fn import_state(&mut self, m: Vec<ParamEntry>, v: Vec<ParamEntry>, t: u64) {
        self.m = m.into_iter().map(|e| e.data).collect();
        self.v = v.into_iter().map(|e| e.data).collect();
        self.t = t;
    }
}
