//! Bias-corrected Adam over an ordered list of parameter matrices.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the parameter list. Parameter order and shapes must
    /// stay fixed across calls (moments are positional). A `None` gradient
    /// leaves that parameter and its moments untouched.
    pub fn step(
        &mut self,
        params: &mut [&mut Matrix<F>],
        grads: &[Option<&Matrix<F>>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "adam: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: initialized for {} params, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let b1 = F::from_f64_lossy(self.beta1);
        let b2 = F::from_f64_lossy(self.beta2);
        let one = F::one();
        // bias corrections 1/(1−βᵗ)
        let c1 = F::from_f64_lossy(1.0 / (1.0 - self.beta1.powi(self.step as i32)));
        let c2 = F::from_f64_lossy(1.0 / (1.0 - self.beta2.powi(self.step as i32)));
        let lr = F::from_f64_lossy(self.lr);
        let eps = F::from_f64_lossy(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(g) = g else { continue };
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "adam: gradient {}x{} for parameter {}x{}",
                    g.rows(),
                    g.cols(),
                    p.rows(),
                    p.cols()
                )));
            }
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (one - b1) * *gv;
                *vv = b2 * *vv + (one - b2) * *gv * *gv;
                *pv = *pv - lr * (*mv * c1) / ((*vv * c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
