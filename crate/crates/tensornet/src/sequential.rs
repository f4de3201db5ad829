use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
use crate::batchnorm::{BatchNorm, BatchNormCache};
use crate::conv::Conv2d;
use crate::error::{Result, TensorError};
use crate::linear::Linear;
use crate::pool::{quadrant_pool, quadrant_pool_backward};
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    Sigmoid,
    QuadrantPool,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Input(Vec<Tensor>),
    Output(Vec<Tensor>),
    BatchNorm(BatchNormCache),
    Shapes(Vec<Vec<usize>>),
}

/// A stack of layers applied in order to a batch of samples.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
    cache: Vec<LayerCache>,
}

impl PartialEq for Sequential {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            cache: Vec::new(),
        }
    }

    /// Training forward pass; keeps what [`Sequential::backward`] needs.
    pub fn forward(&mut self, xs: &[Tensor], mode: Mode) -> Result<Vec<Tensor>> {
        self.cache.clear();
        let mut cur = xs.to_vec();
        for layer in &mut self.layers {
            let (next, cache) = match layer {
                Layer::Linear(l) => (l.forward(&cur)?, LayerCache::Input(cur)),
                Layer::Conv2d(c) => (c.forward(&cur)?, LayerCache::Input(cur)),
                Layer::BatchNorm(bn) => {
                    let (out, cache) = bn.forward(&cur, mode)?;
                    (out, LayerCache::BatchNorm(cache))
                }
                Layer::Relu => {
                    let out = relu_forward(&cur);
                    (out.clone(), LayerCache::Output(out))
                }
                Layer::Sigmoid => {
                    let out = sigmoid_forward(&cur);
                    (out.clone(), LayerCache::Output(out))
                }
                Layer::QuadrantPool => {
                    let shapes = cur.iter().map(|x| x.shape().to_vec()).collect();
                    let out = cur.iter().map(quadrant_pool).collect::<Result<_>>()?;
                    (out, LayerCache::Shapes(shapes))
                }
            };
            self.cache.push(cache);
            cur = next;
        }
        Ok(cur)
    }

    /// Backpropagates through the last forward pass, accumulating parameter
    /// gradients. Returns gradients with respect to the inputs.
    pub fn backward(&mut self, grads: &[Tensor]) -> Result<Vec<Tensor>> {
        if self.cache.len() != self.layers.len() {
            return Err(TensorError::MissingCache);
        }
        let mut cur = grads.to_vec();
        for (layer, cache) in self.layers.iter_mut().zip(&self.cache).rev() {
            cur = match (layer, cache) {
                (Layer::Linear(l), LayerCache::Input(xs)) => l.backward(xs, &cur)?,
                (Layer::Conv2d(c), LayerCache::Input(xs)) => c.backward(xs, &cur)?,
                (Layer::BatchNorm(bn), LayerCache::BatchNorm(bc)) => bn.backward(bc, &cur)?,
                (Layer::Relu, LayerCache::Output(ys)) => relu_backward(ys, &cur)?,
                (Layer::Sigmoid, LayerCache::Output(ys)) => sigmoid_backward(ys, &cur)?,
                (Layer::QuadrantPool, LayerCache::Shapes(shapes)) => shapes
                    .iter()
                    .zip(&cur)
                    .map(|(s, g)| quadrant_pool_backward(s, g))
                    .collect::<Result<_>>()?,
                _ => return Err(TensorError::MissingCache),
            };
        }
        Ok(cur)
    }

    /// Eval-mode forward pass that leaves the network untouched.
    pub fn infer(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut cur = xs.to_vec();
        for layer in &self.layers {
            cur = match layer {
                Layer::Linear(l) => l.forward(&cur)?,
                Layer::Conv2d(c) => c.forward(&cur)?,
                Layer::BatchNorm(bn) => bn.infer(&cur)?,
                Layer::Relu => relu_forward(&cur),
                Layer::Sigmoid => sigmoid_forward(&cur),
                Layer::QuadrantPool => cur.iter().map(quadrant_pool).collect::<Result<_>>()?,
            };
        }
        Ok(cur)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|layer| match layer {
                Layer::Linear(l) => l.params_mut(),
                Layer::Conv2d(c) => c.params_mut(),
                Layer::BatchNorm(bn) => bn.params_mut(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|t| t.len()).sum()
    }

    /// Named view of every stored tensor, including batch-norm running statistics.
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    out.push((format!("{i}.weight"), &l.weight));
                    if let Some(b) = &l.bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                Layer::Conv2d(c) => {
                    out.push((format!("{i}.weight"), &c.weight));
                    if let Some(b) = &c.bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{i}.gamma"), &bn.gamma));
                    out.push((format!("{i}.beta"), &bn.beta));
                    out.push((format!("{i}.running_mean"), &bn.running_mean));
                    out.push((format!("{i}.running_var"), &bn.running_var));
                }
                _ => {}
            }
        }
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    out.push((format!("{i}.weight"), &mut l.weight));
                    if let Some(b) = &mut l.bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                Layer::Conv2d(c) => {
                    out.push((format!("{i}.weight"), &mut c.weight));
                    if let Some(b) = &mut c.bias {
                        out.push((format!("{i}.bias"), b));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{i}.gamma"), &mut bn.gamma));
                    out.push((format!("{i}.beta"), &mut bn.beta));
                    out.push((format!("{i}.running_mean"), &mut bn.running_mean));
                    out.push((format!("{i}.running_var"), &mut bn.running_var));
                }
                _ => {}
            }
        }
        out
    }

    pub fn export(&self, prefix: &str, store: &mut ParamStore) {
        for (name, t) in self.named() {
            store.insert(format!("{prefix}.{name}"), StoredTensor::from(t));
        }
    }

    /// Overwrites every tensor from `store`; shapes must match the architecture.
    pub fn import(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        for (name, t) in self.named_mut() {
            let key = format!("{prefix}.{name}");
            let stored = store
                .get(&key)
                .ok_or_else(|| TensorError::MissingParameter(key.clone()))?;
            t.expect_shape(&stored.shape)?;
            if stored.data.len() != t.len() {
                return Err(TensorError::DataLength {
                    shape: stored.shape.clone(),
                    len: stored.data.len(),
                });
            }
            t.data_mut().copy_from_slice(&stored.data);
        }
        Ok(())
    }
}

/// Serializable tensor record used in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&Tensor> for StoredTensor {
    fn from(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

/// Named tensors keyed by dotted path, ordered for byte-stable serialization.
pub type ParamStore = BTreeMap<String, StoredTensor>;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mlp(seed: u64) -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sequential::new(vec![
            Layer::Linear(Linear::new(3, 4, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(4)),
            Layer::Relu,
            Layer::Linear(Linear::new(4, 1, &mut rng)),
            Layer::Sigmoid,
        ])
    }

    #[test]
    fn export_import_round_trip() {
        let a = mlp(1);
        let mut b = mlp(2);
        assert_ne!(a, b);
        let mut store = ParamStore::new();
        a.export("head", &mut store);
        b.import("head", &store).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn import_reports_missing_names() {
        let mut b = mlp(2);
        let err = b.import("head", &ParamStore::new()).unwrap_err();
        assert_eq!(err, TensorError::MissingParameter("head.0.weight".into()));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = mlp(0);
        assert_eq!(
            net.backward(&[Tensor::vector(vec![1.0])]).unwrap_err(),
            TensorError::MissingCache
        );
    }

    #[test]
    fn infer_matches_eval_forward() {
        let mut net = mlp(5);
        let xs = vec![Tensor::vector(vec![0.1, 0.2, -0.3])];
        let a = net.infer(&xs).unwrap();
        let b = net.forward(&xs, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }
}
