//! Finite-difference verification of analytic gradients.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Anything with an ordered list of trainable tensors.
pub trait Parameterized {
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

impl Parameterized for crate::Sequential {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        crate::Sequential::params_mut(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: (usize, usize),
}

/// Gradients smaller than this in magnitude are compared absolutely: entries
/// whose true gradient is zero only differ by finite-difference roundoff.
pub const GRAD_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_FLOOR)
}

/// Compares analytic gradients against central differences
/// `(f(θ + εe) - f(θ - εe)) / 2ε` for every parameter element.
///
/// `eval` must compute the loss and accumulate gradients into the model's
/// parameters. Gradients are zeroed before the analytic pass; perturbed passes
/// only read the returned loss.
pub fn grad_check<M, F>(model: &mut M, mut eval: F, epsilon: f64) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&mut M) -> Result<f64>,
{
    grad_check_strided(model, &mut eval, epsilon, 1)
}

/// Like [`grad_check`] but probes only every `stride`-th element of each tensor.
pub fn grad_check_strided<M, F>(
    model: &mut M,
    mut eval: F,
    epsilon: f64,
    stride: usize,
) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&mut M) -> Result<f64>,
{
    let stride = stride.max(1);
    model.params_mut().into_iter().for_each(Tensor::zero_grad);
    let base = eval(model)?;
    if !base.is_finite() {
        return Err(TensorError::NonFinite(format!("loss {base}")));
    }
    let analytic: Vec<Vec<f64>> = model
        .params_mut()
        .into_iter()
        .map(|p| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for ei in (0..grads.len()).step_by(stride) {
            let original = model.params_mut()[pi].data()[ei];
            model.params_mut()[pi].data_mut()[ei] = original + epsilon;
            let plus = eval(model)?;
            model.params_mut()[pi].data_mut()[ei] = original - epsilon;
            let minus = eval(model)?;
            model.params_mut()[pi].data_mut()[ei] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite(format!(
                    "loss at parameter {pi}[{ei}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(grads[ei], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, ei);
            }
            report.checked += 1;
        }
    }
    model.params_mut().into_iter().for_each(Tensor::zero_grad);
    Ok(report)
}
