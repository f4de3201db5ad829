use crate::error::{Result, TensorError};

const CLAMP: f64 = 1e-12;

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP, 1.0 - CLAMP)
}

fn check(pred: f64, target: f64) -> Result<()> {
    if !pred.is_finite() || !target.is_finite() {
        return Err(TensorError::NonFinite(format!("bce({pred}, {target})")));
    }
    Ok(())
}

/// Binary cross-entropy `-(t ln p + (1 - t) ln(1 - p))` with `p` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce(pred: f64, target: f64) -> Result<f64> {
    check(pred, target)?;
    let p = clamp(pred);
    Ok(-(target * p.ln() + (1.0 - target) * (1.0 - p).ln()))
}

/// Derivative of [`bce`] with respect to the prediction.
pub fn bce_grad(pred: f64, target: f64) -> Result<f64> {
    check(pred, target)?;
    let p = clamp(pred);
    Ok(-target / p + (1.0 - target) / (1.0 - p))
}
