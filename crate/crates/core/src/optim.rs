// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adam over flat parameter slices.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected Adam update. `t` is the 1-based step count.
    pub fn update(&mut self, param: &mut [f64], grad: &[f64], lr: f64, t: u64, cfg: &AdamConfig) {
        debug_assert_eq!(param.len(), grad.len());
        debug_assert!(t >= 1);
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for (((p, &g), m), v) in param
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, -1.0, 0.5];
        let g = vec![0.3, -2.0, 0.0];
        let mut m = Moments::zeros(3);
        m.update(&mut p, &g, 0.1, 1, &AdamConfig::default());
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![3.0];
        let mut m = Moments::zeros(1);
        for t in 1..=2000 {
            let g = vec![2.0 * (p[0] - 1.0)];
            m.update(&mut p, &g, 0.05, t, &AdamConfig::default());
        }
        assert!((p[0] - 1.0).abs() < 1e-3, "{}", p[0]);
    }
}
