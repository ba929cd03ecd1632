use super::{ParamStore, Real};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update using the gradients accumulated in `params`. Parameters
    /// without a gradient are left untouched.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (pi, t) in params.tensors_mut().iter_mut().enumerate() {
            let (data, grad) = t.parts_mut();
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for j in 0..data.len() {
                let g = grad[j].as_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                if lr == 0.0 {
                    continue;
                }
                let w = data[j].as_f64();
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let w = w - lr * self.weight_decay * w - lr * mhat / (vhat.sqrt() + self.eps);
                data[j] = T::from_f64(w);
            }
        }
    }
}

/// One-cycle learning rate: linear warmup from `max/div` to `max` over the
/// first `warmup` fraction of steps, then cosine decay to `max/(div*final_div)`.
#[derive(Debug, Clone, Copy)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup: f64,
    pub div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycle {
            max_lr,
            total_steps,
            warmup: 0.05,
            div: 25.0,
            final_div: 1e4,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warm = (self.warmup * total).max(1.0);
        let start = self.max_lr / self.div;
        let end = start / self.final_div;
        let s = step as f64;
        if s < warm {
            start + (self.max_lr - start) * s / warm
        } else {
            let t = ((s - warm) / (total - warm).max(1.0)).min(1.0);
            end + 0.5 * (self.max_lr - end) * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Rescales accumulated gradients so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter().map(|v| v.as_f64().powi(2)))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        params.scale_grads(T::from_f64(max_norm / norm));
    }
    norm
}
