use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// Fully connected layer `y = W x + b` over rank-1 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out_dim, in_dim]`
    pub weight: Tensor,
    /// `[out_dim]`; absent when a normalization layer follows.
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Tensor::he_uniform(&[out_dim, in_dim], in_dim, rng),
            bias: Some(Tensor::param(&[out_dim], vec![0.0; out_dim])),
        }
    }

    pub fn without_bias<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            bias: None,
            ..Self::new(in_dim, out_dim, rng)
        }
    }

    pub fn from_parts(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let (out_dim, in_dim) = (weight.shape()[0], weight.inner_len());
        let mut weight = weight.reshape(vec![out_dim, in_dim])?;
        weight.grad_mut();
        let mut bias = bias;
        if let Some(b) = bias.as_mut() {
            b.expect_shape(&[out_dim])?;
            b.grad_mut();
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn forward(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        let w = self.weight.data();
        let b = self.bias.as_ref().map(Tensor::data);
        xs.iter()
            .map(|x| {
                x.expect_shape(&[self.in_dim])?;
                let x = x.data();
                let out = (0..self.out_dim)
                    .map(|o| {
                        let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                        b.map_or(0.0, |b| b[o]) + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                Ok(Tensor::vector(out))
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns input gradients.
    pub fn backward(&mut self, xs: &[Tensor], grads: &[Tensor]) -> Result<Vec<Tensor>> {
        let (in_dim, out_dim) = (self.in_dim, self.out_dim);
        let mut grad_in = Vec::with_capacity(xs.len());
        {
            let (w, gw) = self.weight.data_and_grad_mut();
            for (x, g) in xs.iter().zip(grads) {
                g.expect_shape(&[out_dim])?;
                let x = x.data();
                let mut dx = vec![0.0; in_dim];
                for (o, &go) in g.data().iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        grow[i] += go * x[i];
                        dx[i] += go * row[i];
                    }
                }
                grad_in.push(Tensor::vector(dx));
            }
        }
        let Some(bias) = self.bias.as_mut() else {
            return Ok(grad_in);
        };
        let gb = bias.grad_mut();
        for g in grads {
            for (acc, v) in gb.iter_mut().zip(g.data()) {
                *acc += v;
            }
        }
        Ok(grad_in)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.weight];
        out.extend(self.bias.as_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let layer = Linear::from_parts(
            Tensor::param(&[3, 3], w),
            Some(Tensor::param(&[3], vec![0.0; 3])),
        )
        .unwrap();
        let x = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let y = layer.forward(std::slice::from_ref(&x)).unwrap();
        assert_eq!(y[0].data(), x.data());
    }

    #[test]
    fn rejects_wrong_input_width() {
        let layer = Linear::from_parts(
            Tensor::param(&[2, 3], vec![0.0; 6]),
            None,
        )
        .unwrap();
        assert!(layer.forward(&[Tensor::vector(vec![1.0; 4])]).is_err());
    }
}
