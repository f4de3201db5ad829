use crate::error::{Result, TensorError};
use crate::tensor::Tensor;
use crate::Mode;

/// Per-channel batch normalization.
///
/// Samples have shape `[C, ...]`. Statistics for a channel are taken over every
/// value in that channel across all samples in the batch, so feature maps of
/// different spatial sizes can share one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    xhat: Vec<Tensor>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Tensor::param(&[channels], vec![1.0; channels]),
            beta: Tensor::param(&[channels], vec![0.0; channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn check(&self, xs: &[Tensor]) -> Result<()> {
        for x in xs {
            if x.channels() != self.channels {
                let mut expected = x.shape().to_vec();
                expected[0] = self.channels;
                return Err(TensorError::ShapeMismatch {
                    expected,
                    actual: x.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Per-channel (mean, biased variance, count) over the batch.
    fn batch_stats(&self, xs: &[Tensor]) -> (Vec<f64>, Vec<f64>, usize) {
        let c = self.channels;
        let count: usize = xs.iter().map(|x| x.inner_len()).sum();
        let mut mean = vec![0.0; c];
        for x in xs {
            let p = x.inner_len();
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += x.data()[ch * p..(ch + 1) * p].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; c];
        for x in xs {
            let p = x.inner_len();
            for ch in 0..c {
                var[ch] += x.data()[ch * p..(ch + 1) * p]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        (mean, var, count)
    }

    fn normalize(
        &self,
        xs: &[Tensor],
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Vec<Tensor>, Vec<Tensor>) {
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let mut outs = Vec::with_capacity(xs.len());
        let mut xhats = Vec::with_capacity(xs.len());
        for x in xs {
            let p = x.inner_len();
            let mut xhat = x.clone();
            let mut out = x.clone();
            for ch in 0..self.channels {
                for k in ch * p..(ch + 1) * p {
                    let h = (x.data()[k] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[k] = h;
                    out.data_mut()[k] = gamma[ch] * h + beta[ch];
                }
            }
            xhats.push(xhat);
            outs.push(out);
        }
        (outs, xhats)
    }

    /// Forward pass. Train mode normalizes with batch statistics and updates the
    /// running estimates; eval mode uses the running estimates only.
    pub fn forward(&mut self, xs: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, BatchNormCache)> {
        self.check(xs)?;
        match mode {
            Mode::Train => {
                let (mean, var, count) = self.batch_stats(xs);
                if count < 2 {
                    return Err(TensorError::BatchTooSmall(count));
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let (outs, xhat) = self.normalize(xs, &mean, &inv_std);
                let m = self.momentum;
                let unbias = count as f64 / (count - 1) as f64;
                for ch in 0..self.channels {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (1.0 - m) * *rm + m * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (1.0 - m) * *rv + m * var[ch] * unbias;
                }
                Ok((outs, BatchNormCache { mode, xhat, inv_std }))
            }
            Mode::Eval => {
                let (outs, cache) = self.forward_eval(xs)?;
                Ok((outs, cache))
            }
        }
    }

    fn forward_eval(&self, xs: &[Tensor]) -> Result<(Vec<Tensor>, BatchNormCache)> {
        self.check(xs)?;
        let inv_std: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let (outs, xhat) = self.normalize(xs, self.running_mean.data(), &inv_std);
        Ok((
            outs,
            BatchNormCache {
                mode: Mode::Eval,
                xhat,
                inv_std,
            },
        ))
    }

    /// Eval-mode forward without touching any state.
    pub fn infer(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(self.forward_eval(xs)?.0)
    }

    pub fn backward(&mut self, cache: &BatchNormCache, grads: &[Tensor]) -> Result<Vec<Tensor>> {
        let c = self.channels;
        let gamma = self.gamma.data().to_vec();
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (g, h) in grads.iter().zip(&cache.xhat) {
            if g.shape() != h.shape() {
                return Err(TensorError::ShapeMismatch {
                    expected: h.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            let p = g.inner_len();
            for ch in 0..c {
                for k in ch * p..(ch + 1) * p {
                    sum_dy[ch] += g.data()[k];
                    sum_dy_xhat[ch] += g.data()[k] * h.data()[k];
                }
            }
        }
        for (acc, v) in self.gamma.grad_mut().iter_mut().zip(&sum_dy_xhat) {
            *acc += v;
        }
        for (acc, v) in self.beta.grad_mut().iter_mut().zip(&sum_dy) {
            *acc += v;
        }

        let count: usize = grads.iter().map(|g| g.inner_len()).sum();
        let m = count as f64;
        let mut grad_in = Vec::with_capacity(grads.len());
        for (g, h) in grads.iter().zip(&cache.xhat) {
            let p = g.inner_len();
            let mut dx = g.clone();
            for ch in 0..c {
                let scale = gamma[ch] * cache.inv_std[ch];
                for k in ch * p..(ch + 1) * p {
                    dx.data_mut()[k] = match cache.mode {
                        Mode::Eval => scale * g.data()[k],
                        Mode::Train => {
                            scale / m
                                * (m * g.data()[k] - sum_dy[ch] - h.data()[k] * sum_dy_xhat[ch])
                        }
                    };
                }
            }
            grad_in.push(dx);
        }
        Ok(grad_in)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
