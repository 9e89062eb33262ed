use serde::{Deserialize, Serialize};

/// Hyperparameters of one AdamW update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    /// Decoupled-decay update at 1-based step `t`:
    /// `θ ← θ·(1 − lr·wd) − lr·m̂ / (√v̂ + eps)`.
    pub fn update(&self, t: u64, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
        debug_assert!(t >= 1);
        let c1 = 1.0 - self.beta1.powf(t as f64);
        let c2 = 1.0 - self.beta2.powf(t as f64);
        let decay = 1.0 - self.lr * self.weight_decay;
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            param[i] = param[i] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// How gradients are limited before the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Rescale all gradients together when their global L2 norm exceeds the limit.
    #[default]
    Norm,
    /// Clamp every gradient entry to `[-limit, limit]`.
    Value,
}

/// Global L2 norm over all gradient buffers.
pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    grads.into_iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Clips in place; returns the global norm measured before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], mode: ClipMode, limit: f64) -> f64 {
    let norm = global_norm(grads.iter().map(|g| g.as_slice()));
    match mode {
        ClipMode::Norm => {
            if norm > limit {
                let s = limit / norm;
                for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
                    *v *= s;
                }
            }
        }
        ClipMode::Value => {
            for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
                *v = v.clamp(-limit, limit);
            }
        }
    }
    norm
}

/// Learning-rate schedule over the whole run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to zero over the planned steps.
    Cosine,
}

impl Schedule {
    pub fn lr(self, base: f64, step: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                if total == 0 {
                    return base;
                }
                let frac = (step.min(total) as f64) / total as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}
