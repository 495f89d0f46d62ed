use std::f64::consts::PI;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Cosine warm-up from 0 to `lr_init`, then exponential decay that reaches
/// `lr_final` on the last iteration.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub warmup_iters: f64,
    pub iterations: usize,
}

impl LrSchedule {
    pub fn new(lr_init: f64, lr_final: f64, warmup_frac: f64, iterations: usize) -> Self {
        LrSchedule {
            lr_init,
            lr_final,
            warmup_iters: warmup_frac * iterations as f64,
            iterations,
        }
    }

    /// Learning rate at zero-based iteration `t`.
    pub fn at(&self, t: usize) -> f64 {
        let t = t as f64;
        let tw = self.warmup_iters;
        if t < tw {
            return self.lr_init * 0.5 * (1.0 - (PI * t / tw).cos());
        }
        let span = self.iterations as f64 - 1.0 - tw;
        if span <= 0.0 {
            return self.lr_final;
        }
        let u = ((t - tw) / span).min(1.0);
        self.lr_init * (self.lr_final / self.lr_init).powf(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(2e-3, 2e-4, 0.2, 5000);
        assert_eq!(s.at(0), 0.0);
        assert!((s.at(1000) - 2e-3).abs() < 1e-9);
        assert!((s.at(4999) - 2e-4).abs() < 1e-9);
        assert!((s.at(500) - 1e-3).abs() < 1e-9);
        let mut prev = s.at(1000);
        for t in 1001..5000 {
            let lr = s.at(t);
            assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut a = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = [1.0f32, -1.0];
        a.step(&mut p, &[0.5, -2.0], 0.1);
        // first step has magnitude lr regardless of gradient size
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
