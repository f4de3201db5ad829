use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(xs: &[Tensor], f: impl Fn(f64) -> f64) -> Vec<Tensor> {
    xs.iter()
        .map(|x| {
            let mut y = x.clone();
            y.data_mut().iter_mut().for_each(|v| *v = f(*v));
            y
        })
        .collect()
}

/// Elementwise product of upstream gradients with a derivative computed from
/// the forward output.
fn chain(outputs: &[Tensor], grads: &[Tensor], deriv: impl Fn(f64) -> f64) -> Result<Vec<Tensor>> {
    outputs
        .iter()
        .zip(grads)
        .map(|(y, g)| {
            if y.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    expected: y.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            let mut d = g.clone();
            for (dv, yv) in d.data_mut().iter_mut().zip(y.data()) {
                *dv *= deriv(*yv);
            }
            Ok(d)
        })
        .collect()
}

pub fn relu_forward(xs: &[Tensor]) -> Vec<Tensor> {
    map(xs, relu)
}

pub fn relu_backward(outputs: &[Tensor], grads: &[Tensor]) -> Result<Vec<Tensor>> {
    chain(outputs, grads, |y| if y > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid_forward(xs: &[Tensor]) -> Vec<Tensor> {
    map(xs, sigmoid)
}

pub fn sigmoid_backward(outputs: &[Tensor], grads: &[Tensor]) -> Result<Vec<Tensor>> {
    chain(outputs, grads, |y| y * (1.0 - y))
}
