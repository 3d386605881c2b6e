//! Adam optimizer with per-parameter first/second moment state.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Default recipe: lr 2e-4, betas (0.9, 0.999), eps 1e-8.
    pub fn default_recipe() -> Self {
        Adam::new(2e-4, (0.9, 0.999), 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update over `(name, param)` pairs with matching gradients.
    /// A non-finite gradient aborts the whole step, leaving parameters and
    /// state untouched.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &HashMap<String, Tensor>,
    ) -> Result<()> {
        for (name, p) in params.iter() {
            if let Some(grad) = grads.get(name) {
                assert_eq!(
                    grad.shape(),
                    p.shape(),
                    "gradient shape mismatch for `{name}`"
                );
                if !grad.all_finite() {
                    return Err(NnError::NonFiniteGradient(name.clone()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
