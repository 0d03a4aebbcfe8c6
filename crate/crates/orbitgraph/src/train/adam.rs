//! Adaptive-moment optimizer over the model's parameter matrices, plus
//! global-norm gradient clipping.

use crate::autodiff::{Gradients, Matrix};
use crate::error::{Error, Result};
use crate::model::EvolveGcnParams;

pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first_moment: Vec<Matrix<f64>>,
    second_moment: Vec<Matrix<f64>>,
}

impl Adam {
    pub fn new(params: &EvolveGcnParams<f64>, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let mut first_moment = Vec::with_capacity(params.param_count());
        params.for_each(|m| first_moment.push(Matrix::zeros(m.rows(), m.cols())));
        let second_moment = first_moment.clone();
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment,
            second_moment,
        }
    }

    /// One update over every parameter, in the canonical order.
    pub fn apply(&mut self, params: &mut EvolveGcnParams<f64>, grads: &Gradients<f64>) -> Result<()> {
        if grads.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, gradients carry {}",
                self.first_moment.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);

        let mut idx = 0;
        let mut shape_err = None;
        params.for_each_mut(|param| {
            let grad = grads.get(crate::autodiff::ParamId(idx));
            if grad.shape() != param.shape() {
                if shape_err.is_none() {
                    shape_err = Some((idx, param.shape(), grad.shape()));
                }
                idx += 1;
                return;
            }
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for e in 0..param.rows() * param.cols() {
                let g = grad.data()[e];
                m.data_mut()[e] = self.beta1 * m.data()[e] + (1.0 - self.beta1) * g;
                v.data_mut()[e] = self.beta2 * v.data()[e] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data()[e] / bias1;
                let v_hat = v.data()[e] / bias2;
                param.data_mut()[e] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            idx += 1;
        });
        if let Some((i, want, got)) = shape_err {
            return Err(Error::Contract(format!(
                "gradient {i} has shape {got:?}, parameter has {want:?}"
            )));
        }
        Ok(())
    }
}

/// Scale gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut Gradients<f64>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale_in_place(max_norm / norm);
    }
    norm
}
