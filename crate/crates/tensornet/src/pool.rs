//! Quadrant average pooling.
//!
//! Rows are split into `[0, ceil(H/2))` and `[floor(H/2), H)`, columns likewise.
//! For odd sizes the halves share the middle row/column, and for a size of 1 both
//! halves are the whole axis, so every quadrant is non-empty for any `H, W >= 1`.
//! The output for `C` channels has length `4C`, laid out quadrant-major in the
//! order top-left, top-right, bottom-left, bottom-right, each block holding one
//! mean per channel.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn halves(n: usize) -> [(usize, usize); 2] {
    [(0, n.div_ceil(2)), (n / 2, n)]
}

/// Row and column ranges of the four quadrants in TL, TR, BL, BR order.
pub fn quadrants(height: usize, width: usize) -> [((usize, usize), (usize, usize)); 4] {
    let [top, bottom] = halves(height);
    let [left, right] = halves(width);
    [(top, left), (top, right), (bottom, left), (bottom, right)]
}

fn dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::ShapeMismatch {
            expected: vec![x.channels(), 1, 1],
            actual: x.shape().to_vec(),
        }),
    }
}

pub fn quadrant_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims(x)?;
    let d = x.data();
    let mut out = vec![0.0; 4 * c];
    for (q, ((r0, r1), (c0, c1))) in quadrants(h, w).into_iter().enumerate() {
        let n = ((r1 - r0) * (c1 - c0)) as f64;
        for ch in 0..c {
            let mut sum = 0.0;
            for r in r0..r1 {
                let base = ch * h * w + r * w;
                sum += d[base + c0..base + c1].iter().sum::<f64>();
            }
            out[q * c + ch] = sum / n;
        }
    }
    Ok(Tensor::vector(out))
}

pub fn quadrant_pool_backward(input_shape: &[usize], grad: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match *input_shape {
        [c, h, w] => (c, h, w),
        _ => return Err(TensorError::MissingCache),
    };
    grad.expect_shape(&[4 * c])?;
    let g = grad.data();
    let mut dx = vec![0.0; c * h * w];
    for (q, ((r0, r1), (c0, c1))) in quadrants(h, w).into_iter().enumerate() {
        let n = ((r1 - r0) * (c1 - c0)) as f64;
        for ch in 0..c {
            let share = g[q * c + ch] / n;
            for r in r0..r1 {
                let base = ch * h * w + r * w;
                dx[base + c0..base + c1].iter_mut().for_each(|v| *v += share);
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}
