use crate::error::{AdError, Result};
use crate::param::ParamTensor;
use crate::tensor::Tensor;

/// Per-parameter moment estimates for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub const BETA1: f32 = 0.9;
    pub const BETA2: f32 = 0.999;
    pub const EPSILON: f32 = 1e-8;

    /// Zeroed state matching `params`, with the usual defaults.
    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a ParamTensor>) -> Self {
        let zeros: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            epsilon: Self::EPSILON,
        }
    }
}

/// One bias-corrected Adam update. Gradients are read, never cleared.
///
/// Every parameter is validated before any is modified, so a failed call
/// leaves both parameters and state untouched.
pub fn adam_step(params: &mut [&mut ParamTensor], state: &mut AdamState, lr: f32) -> Result<()> {
    if params.len() != state.first_moment.len() || params.len() != state.second_moment.len() {
        return Err(AdError::StateMismatch(format!(
            "{} parameters vs {} moment buffers",
            params.len(),
            state.first_moment.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let Some(g) = &p.grad else {
            return Err(AdError::MissingGrad(p.name.clone()));
        };
        if g.shape() != p.shape()
            || state.first_moment[i].shape() != p.shape()
            || state.second_moment[i].shape() != p.shape()
        {
            return Err(AdError::StateMismatch(p.name.clone()));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bc1 = (1.0 - f64::from(b1).powi(t)) as f32;
    let bc2 = (1.0 - f64::from(b2).powi(t)) as f32;

    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad.as_ref().expect("validated above").data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let theta = p.value.data_mut();
        for j in 0..theta.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
