use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam with bias correction over a fixed, ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    states: Vec<AdamState>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        let states = params
            .iter()
            .map(|p| AdamState {
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            })
            .collect();
        Self {
            config,
            states,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// One Adam update. Shapes are validated before any parameter changes.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<(), AutodiffError> {
        if !(lr > 0.0) {
            return Err(AutodiffError::InvalidArgument {
                op: "adam_step",
                msg: format!("learning rate must be positive, got {lr}"),
            });
        }
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "adam_step",
                msg: format!(
                    "{} params and {} grads for {} optimizer slots",
                    params.len(),
                    grads.len(),
                    self.states.len()
                ),
            });
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.states) {
            if p.shape() != g.shape() || p.shape() != s.m.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            let pd = p.data_mut();
            let md = s.m.data_mut();
            let vd = s.v.data_mut();
            for (((pv, &gv), mv), vv) in pd.iter_mut().zip(g.data()).zip(md).zip(vd) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::full(&[2, 2], 0.5)];
        let grads = vec![Tensor::full(&[2, 2], 1.0)];
        let mut opt = Adam::new(&params, AdamConfig::default());
        opt.step(&mut params, &grads, 1e-3).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        for &v in params[0].data() {
            assert!((v - expected).abs() < 1e-15);
            assert!(((v - 0.5) + 1e-3).abs() < 1e-10);
        }
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let init = Tensor::from_rows(&[&[1.0, -2.0, 3.0]]);
        let mut params = vec![init.clone()];
        let mut opt = Adam::new(&params, AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut params, &[Tensor::zeros(&[1, 3])], 1e-3).unwrap();
        }
        assert_eq!(params[0], init);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut params = vec![Tensor::from_rows(&[&[0.1, 0.2], &[0.3, 0.4]])];
            let mut opt = Adam::new(&params, AdamConfig::default());
            for k in 0..10 {
                let g = Tensor::from_rows(&[&[k as f64 * 0.1, -0.3], &[0.7, 1e-3]]);
                opt.step(&mut params, &[g], 5e-4).unwrap();
            }
            params
        };
        let (a, b) = (run(), run());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a[0]), bits(&b[0]));
    }

    #[test]
    fn shape_mismatch_rejected_without_update() {
        let init = Tensor::zeros(&[2, 2]);
        let mut params = vec![init.clone()];
        let mut opt = Adam::new(&params, AdamConfig::default());
        assert!(opt
            .step(&mut params, &[Tensor::zeros(&[1, 4])], 1e-3)
            .is_err());
        assert_eq!(params[0], init);
        assert_eq!(opt.step_count(), 0);
        assert!(opt.step(&mut params, &[Tensor::zeros(&[2, 2])], 0.0).is_err());
    }
}
