use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution. Pairs are (height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels >= 1
            && self.out_channels >= 1
            && self.kernel.0 >= 1
            && self.kernel.1 >= 1
            && self.stride.0 >= 1
            && self.stride.1 >= 1;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidConfig(format!("{self:?}")))
        }
    }

    /// `floor((n + 2p - k) / s) + 1`, or an error when that is not positive.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let axis = |name, n: usize, k: usize, s: usize, p: usize| {
            let padded = n + 2 * p;
            if padded < k {
                return Err(TensorError::NonPositiveOutput {
                    axis: name,
                    input: n,
                    kernel: k,
                    stride: s,
                    padding: p,
                });
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis("height", height, self.kernel.0, self.stride.0, self.padding.0)?,
            axis("width", width, self.kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}

/// 2-D convolution (cross-correlation, zero padding) over `[C, H, W]` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub spec: ConvSpec,
    /// `[out, in, kh, kw]`
    pub weight: Tensor,
    /// `[out]`; absent when a normalization layer follows.
    pub bias: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng>(spec: ConvSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (kh, kw) = spec.kernel;
        let fan_in = spec.in_channels * kh * kw;
        Ok(Self {
            spec,
            weight: Tensor::he_uniform(&[spec.out_channels, spec.in_channels, kh, kw], fan_in, rng),
            bias: Some(Tensor::param(&[spec.out_channels], vec![0.0; spec.out_channels])),
        })
    }

    pub fn without_bias<R: Rng>(spec: ConvSpec, rng: &mut R) -> Result<Self> {
        Ok(Self {
            bias: None,
            ..Self::new(spec, rng)?
        })
    }

    pub fn from_parts(spec: ConvSpec, weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        spec.validate()?;
        let (kh, kw) = spec.kernel;
        weight.expect_shape(&[spec.out_channels, spec.in_channels, kh, kw])?;
        let (mut weight, mut bias) = (weight, bias);
        weight.grad_mut();
        if let Some(b) = bias.as_mut() {
            b.expect_shape(&[spec.out_channels])?;
            b.grad_mut();
        }
        Ok(Self { spec, weight, bias })
    }

    fn input_dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 3 || s[0] != self.spec.in_channels {
            return Err(TensorError::ShapeMismatch {
                expected: vec![self.spec.in_channels, s.get(1).copied().unwrap_or(0), s.get(2).copied().unwrap_or(0)],
                actual: s.to_vec(),
            });
        }
        Ok((s[1], s[2]))
    }

    fn forward_one(&self, x: &Tensor) -> Result<Tensor> {
        let ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.spec;
        let (h, w) = self.input_dims(x)?;
        let (oh, ow) = self.spec.output_size(h, w)?;
        let xd = x.data();
        let wd = self.weight.data();
        let mut out = vec![0.0; cout * oh * ow];
        for o in 0..cout {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            let b = self.bias.as_ref().map_or(0.0, |b| b.data()[o]);
            plane.iter_mut().for_each(|v| *v = b);
            for i in 0..cin {
                let xin = &xd[i * h * w..(i + 1) * h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[((o * cin + i) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, ov) in orow.iter_mut().enumerate() {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix >= 0 && ix < w as isize {
                                    *ov += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![cout, oh, ow], out)
    }

    pub fn forward(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        xs.iter().map(|x| self.forward_one(x)).collect()
    }

    pub fn backward(&mut self, xs: &[Tensor], grads: &[Tensor]) -> Result<Vec<Tensor>> {
        let ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
        } = self.spec;
        let mut grad_in = Vec::with_capacity(xs.len());
        for (x, g) in xs.iter().zip(grads) {
            let (h, w) = self.input_dims(x)?;
            let (oh, ow) = self.spec.output_size(h, w)?;
            g.expect_shape(&[cout, oh, ow])?;
            let xd = x.data();
            let gd = g.data();
            let mut dx = vec![0.0; cin * h * w];
            {
                let (wd, gw) = self.weight.data_and_grad_mut();
                for o in 0..cout {
                    let gplane = &gd[o * oh * ow..(o + 1) * oh * ow];
                    for i in 0..cin {
                        let xin = &xd[i * h * w..(i + 1) * h * w];
                        let din = &mut dx[i * h * w..(i + 1) * h * w];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let widx = ((o * cin + i) * kh + ky) * kw + kx;
                                let wv = wd[widx];
                                let mut acc = 0.0;
                                for oy in 0..oh {
                                    let iy = (oy * sh + ky) as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let base = iy as usize * w;
                                    for ox in 0..ow {
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let gv = gplane[oy * ow + ox];
                                        acc += gv * xin[base + ix as usize];
                                        din[base + ix as usize] += gv * wv;
                                    }
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
            if let Some(bias) = self.bias.as_mut() {
                let gb = bias.grad_mut();
                for o in 0..cout {
                    gb[o] += gd[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
                }
            }
            grad_in.push(Tensor::new(vec![cin, h, w], dx)?);
        }
        Ok(grad_in)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.weight];
        out.extend(self.bias.as_mut());
        out
    }
}
