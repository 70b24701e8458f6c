use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty, added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Adam with bias correction. One moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Argument(format!(
                "adam state tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != p.shape() {
                return Err(Error::Argument(format!(
                    "adam tensor {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let exp = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - beta1.powi(exp);
        let c2 = 1.0 - beta2.powi(exp);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let moments = m.data_mut().iter_mut().zip(v.data_mut());
            for ((pi, &gi), (mi, vi)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
                let gi = gi + weight_decay * *pi;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamConfig {
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![0.3, -1.2])];
        let mut st = AdamState::new(no_decay(), &p);
        st.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p[0].data(), &[0.3, -1.2]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_matches_bias_corrected_formula() {
        // t=1: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1, so p = -lr / (1 + eps).
        let mut p = vec![Tensor::vector(vec![0.0])];
        let mut st = AdamState::new(no_decay(), &p);
        st.step(&mut p, &[Tensor::vector(vec![1.0])]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!(
            (p[0].data()[0] - expected).abs() < 1e-18,
            "{}",
            p[0].data()[0]
        );
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(p) = (p - 3)^2
        let f = |p: f64| (p - 3.0) * (p - 3.0);
        let mut p = vec![Tensor::vector(vec![0.0])];
        let mut st = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..no_decay()
            },
            &p,
        );
        let mut last = f(0.0);
        for _ in 0..2 {
            let g = 2.0 * (p[0].data()[0] - 3.0);
            st.step(&mut p, &[Tensor::vector(vec![g])]).unwrap();
            let now = f(p[0].data()[0]);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(no_decay(), &p);
        assert!(st.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
        let mut two = vec![Tensor::zeros(&[2]), Tensor::zeros(&[2])];
        assert!(st
            .step(&mut two, &[Tensor::zeros(&[2]), Tensor::zeros(&[2])])
            .is_err());
    }

    #[test]
    fn coupled_weight_decay_pulls_toward_zero() {
        let mut p = vec![Tensor::vector(vec![2.0])];
        let mut st = AdamState::new(
            AdamConfig {
                weight_decay: 0.1,
                ..AdamConfig::default()
            },
            &p,
        );
        st.step(&mut p, &[Tensor::vector(vec![0.0])]).unwrap();
        assert!(p[0].data()[0] < 2.0);
    }
}
