use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensornet::{
    bce, bce_grad, concat, BatchNorm, Conv2d, Layer, Linear, Mode, ParamStore, Parameterized,
    Sequential, Tensor,
};

use super::config::{ConvEncoderConfig, JointConfig};
use super::data::QuestionBatch;
use crate::error::{Error, Result};

/// Conv layers (bias dropped where batch norm follows), ReLU after all but
/// the last, then quadrant pooling.
pub fn build_encoder(config: &ConvEncoderConfig, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    config.validate()?;
    let specs = config.conv_specs();
    let last = specs.len() - 1;
    let mut layers = Vec::new();
    for (i, (spec, l)) in specs.into_iter().zip(&config.layers).enumerate() {
        if l.batch_norm {
            layers.push(Layer::Conv2d(Conv2d::without_bias(spec, rng)?));
            layers.push(Layer::BatchNorm(BatchNorm::new(spec.out_channels)));
        } else {
            layers.push(Layer::Conv2d(Conv2d::new(spec, rng)?));
        }
        if i < last {
            layers.push(Layer::Relu);
        }
    }
    layers.push(Layer::QuadrantPool);
    Ok(Sequential::new(layers))
}

/// `Linear -> BatchNorm -> ReLU` per hidden width, then `Linear -> Sigmoid`.
pub fn build_head(widths: &[usize], rng: &mut ChaCha8Rng) -> Sequential {
    let mut layers = Vec::new();
    let n = widths.len() - 1;
    for (k, w) in widths.windows(2).enumerate() {
        if k + 1 < n {
            layers.push(Layer::Linear(Linear::without_bias(w[0], w[1], rng)));
            layers.push(Layer::BatchNorm(BatchNorm::new(w[1])));
            layers.push(Layer::Relu);
        } else {
            layers.push(Layer::Linear(Linear::new(w[0], w[1], rng)));
            layers.push(Layer::Sigmoid);
        }
    }
    Sequential::new(layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Sum of filter BCE terms.
    pub filter: f64,
    /// Sum of pair BCE terms, before weighting.
    pub pair: f64,
    /// `filter + alpha * pair`.
    pub total: f64,
    pub filter_terms: usize,
    pub pair_terms: usize,
}

/// Per-instance head outputs for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// `filter[k][m]`: instance `k`, its `m`-th candidate.
    pub filter: Vec<Vec<f64>>,
    /// `pair[k][m][n]`, diagonal unused.
    pub pair: Vec<Vec<Vec<f64>>>,
}

/// Conv encoder plus filtering and pairwise heads.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub config: JointConfig,
    pub encoder: Sequential,
    pub filter: Sequential,
    pub pair: Sequential,
}

impl Parameterized for JointModel {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        JointModel::params_mut(self)
    }
}

fn head_mode(mode: Mode, batch: usize) -> Mode {
    if batch < 2 {
        Mode::Eval
    } else {
        mode
    }
}

fn scalar_outputs(ys: &[Tensor]) -> Vec<f64> {
    ys.iter().map(|y| y.data()[0]).collect()
}

impl JointModel {
    pub fn new(config: JointConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_encoder(&config.encoder, &mut rng)?;
        let filter = build_head(&config.heads.filter, &mut rng);
        let pair = build_head(&config.heads.pair, &mut rng);
        Ok(Self {
            config,
            encoder,
            filter,
            pair,
        })
    }

    /// Encoder, filter head and pair head parameters, in that order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.filter.params_mut());
        out.extend(self.pair.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.filter.zero_grad();
        self.pair.zero_grad();
    }

    pub fn export(&self) -> ParamStore {
        let mut store = ParamStore::new();
        self.encoder.export("encoder", &mut store);
        self.filter.export("filter", &mut store);
        self.pair.export("pair", &mut store);
        store
    }

    pub fn import(&mut self, store: &ParamStore) -> Result<()> {
        self.encoder.import("encoder", store)?;
        self.filter.import("filter", store)?;
        self.pair.import("pair", store)?;
        Ok(())
    }

    /// Shape-only check of a batch against the configured widths.
    fn check(&self, batch: &QuestionBatch) -> Result<()> {
        let c = &self.config;
        for inst in &batch.instances {
            if inst.rqe.len() != c.rqe_dim {
                return Err(Error::Dimension(format!("RQE part has length {}", inst.rqe.len())));
            }
            if inst.maps.len() != inst.candidates.len() || inst.meta.len() != inst.candidates.len() {
                return Err(Error::Dimension("instance tensors do not match its candidates".into()));
            }
            if let Some(m) = inst.meta.iter().find(|m| m.len() != c.meta_dim) {
                return Err(Error::Dimension(format!("metadata has length {}", m.len())));
            }
            if let Some(&i) = inst.candidates.iter().find(|&&i| i >= batch.answer_ids.len()) {
                return Err(Error::Dimension(format!("candidate index {i} out of range")));
            }
        }
        Ok(())
    }

    fn joints(&self, batch: &QuestionBatch, nli: &[Tensor]) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(nli.len());
        let mut it = nli.iter();
        for inst in &batch.instances {
            let rqe = Tensor::vector(inst.rqe.clone());
            for meta in &inst.meta {
                let n = it.next().expect("one NLI embedding per map");
                out.push(concat(&[n, &rqe, &Tensor::vector(meta.clone())]));
            }
        }
        out
    }

    /// Ordered `(instance, m, n, flat_m, flat_n)` with `m != n`.
    fn pair_index(batch: &QuestionBatch) -> Vec<(usize, usize, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut base = 0;
        for (k, inst) in batch.instances.iter().enumerate() {
            let c = inst.candidates.len();
            for m in 0..c {
                for n in 0..c {
                    if m != n {
                        out.push((k, m, n, base + m, base + n));
                    }
                }
            }
            base += c;
        }
        out
    }

    /// Loss of one question and its parameter gradients (accumulated, not
    /// zeroed). Every candidate needs a label and a reference rank. Head
    /// batches of a single row use running statistics.
    pub fn loss_and_backward(&mut self, batch: &QuestionBatch, alpha: f64, mode: Mode) -> Result<LossBreakdown> {
        self.check(batch)?;
        let err = |m: &str| Error::InvalidQuestion {
            question_id: batch.question_id.clone(),
            message: m.to_string(),
        };
        let maps: Vec<Tensor> = batch.instances.iter().flat_map(|i| i.maps.iter().cloned()).collect();
        if maps.is_empty() {
            return Ok(LossBreakdown::default());
        }
        let nli = self.encoder.forward(&maps, mode)?;
        let joints = self.joints(batch, &nli);
        let joint_dim = self.config.joint_dim();

        let mut targets = Vec::with_capacity(joints.len());
        let mut ranks = Vec::with_capacity(joints.len());
        for inst in &batch.instances {
            for &i in &inst.candidates {
                let y = batch.labels[i].ok_or_else(|| err("candidate without a reference score"))?;
                targets.push(if y { 1.0 } else { 0.0 });
                ranks.push(batch.reference_ranks[i].ok_or_else(|| err("candidate without a reference rank"))?);
            }
        }

        let mut out = LossBreakdown::default();
        let fs = self.filter.forward(&joints, head_mode(mode, joints.len()))?;
        let mut joint_grads = Vec::with_capacity(joints.len());
        for (f, &t) in scalar_outputs(&fs).into_iter().zip(&targets) {
            out.filter += bce(f, t)?;
            joint_grads.push(Tensor::vector(vec![bce_grad(f, t)?]));
        }
        out.filter_terms = joints.len();
        let mut joint_grads = self.filter.backward(&joint_grads)?;

        let pairs = Self::pair_index(batch);
        if !pairs.is_empty() {
            let inputs: Vec<Tensor> = pairs
                .iter()
                .map(|&(_, _, _, a, b)| concat(&[&joints[a], &joints[b]]))
                .collect();
            let ps = self.pair.forward(&inputs, head_mode(mode, inputs.len()))?;
            let mut grads = Vec::with_capacity(ps.len());
            for (p, &(_, _, _, a, b)) in scalar_outputs(&ps).into_iter().zip(&pairs) {
                let t = if ranks[a] < ranks[b] { 1.0 } else { 0.0 };
                out.pair += bce(p, t)?;
                grads.push(Tensor::vector(vec![alpha * bce_grad(p, t)?]));
            }
            out.pair_terms = pairs.len();
            let input_grads = self.pair.backward(&grads)?;
            for (g, &(_, _, _, a, b)) in input_grads.iter().zip(&pairs) {
                let (first, second) = g.data().split_at(joint_dim);
                add_into(&mut joint_grads[a], first);
                add_into(&mut joint_grads[b], second);
            }
        }

        let nli_dim = self.config.encoder.pooled_dim();
        let nli_grads: Vec<Tensor> = joint_grads
            .iter()
            .map(|g| Tensor::vector(g.data()[..nli_dim].to_vec()))
            .collect();
        self.encoder.backward(&nli_grads)?;
        out.total = out.filter + alpha * out.pair;
        Ok(out)
    }

    /// Eval-mode head outputs. Read-only.
    pub fn score(&self, batch: &QuestionBatch) -> Result<HeadOutputs> {
        self.check(batch)?;
        let maps: Vec<Tensor> = batch.instances.iter().flat_map(|i| i.maps.iter().cloned()).collect();
        let nli = self.encoder.infer(&maps)?;
        let joints = self.joints(batch, &nli);
        let fs = scalar_outputs(&self.filter.infer(&joints)?);
        let pairs = Self::pair_index(batch);
        let inputs: Vec<Tensor> = pairs
            .iter()
            .map(|&(_, _, _, a, b)| concat(&[&joints[a], &joints[b]]))
            .collect();
        let ps = scalar_outputs(&self.pair.infer(&inputs)?);

        let mut filter = Vec::with_capacity(batch.instances.len());
        let mut pair = Vec::with_capacity(batch.instances.len());
        let mut base = 0;
        for inst in &batch.instances {
            let c = inst.candidates.len();
            filter.push(fs[base..base + c].to_vec());
            pair.push(vec![vec![0.0; c]; c]);
            base += c;
        }
        for (p, &(k, m, n, _, _)) in ps.into_iter().zip(&pairs) {
            pair[k][m][n] = p;
        }
        Ok(HeadOutputs { filter, pair })
    }
}

fn add_into(t: &mut Tensor, values: &[f64]) {
    t.data_mut().iter_mut().zip(values).for_each(|(a, b)| *a += b);
}
