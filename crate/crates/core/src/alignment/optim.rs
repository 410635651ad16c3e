use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
///
/// Each step first shrinks decayed parameters by `1 - lr·wd`, then applies the
/// bias-corrected moment update.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `decay[i]` selects which tensors receive weight decay.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], decay: &[bool]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        assert_eq!(params.len(), decay.len(), "one decay flag per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let shrink = if decay[i] {
                1.0 - self.lr * self.weight_decay
            } else {
                1.0
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                *pv = *pv * shrink - self.lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::row_vector(vec![1.0, -1.0])];
        let g = vec![Tensor::row_vector(vec![0.5, -3.0])];
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut p, &g, &[true]);
        // bias-corrected first step is lr·sign(g) up to eps
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut p = vec![Tensor::scalar(2.0), Tensor::scalar(2.0)];
        let g = vec![Tensor::scalar(0.0), Tensor::scalar(0.0)];
        let mut opt = AdamW::new(0.1, 0.5);
        opt.step(&mut p, &g, &[true, false]);
        assert!((p[0].item() - 2.0 * 0.95).abs() < 1e-15);
        assert_eq!(p[1].item(), 2.0);
    }

    #[test]
    fn zero_lr_leaves_parameters_untouched() {
        let mut p = vec![Tensor::row_vector(vec![0.123456789, -7.5])];
        let before = p.clone();
        let mut opt = AdamW::new(0.0, 1e-5);
        for _ in 0..3 {
            opt.step(&mut p, &[Tensor::row_vector(vec![1.0, 2.0])], &[true]);
        }
        assert_eq!(p, before);
    }
}
