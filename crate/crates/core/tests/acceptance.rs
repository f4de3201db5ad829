//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{adam, random_batch, scaled_pipeline, synth};
use medrank::baseline::{anli_from_scores, BaselineRanker, LogRegConfig};
use medrank::corpus::{derive_label, CandidateAnswer, Dataset, QuestionRecord, Split};
use medrank::evalkit::{evaluate, spearman, spearman_per_question, Prediction};
use medrank::joint::{predict_batch, Checkpoint, JointConfig, JointModel, QuestionBatch};
use medrank::pipeline::{
    extract_features, fit_baseline_features, fit_joint_inputs, joint_gradcheck, joint_inference_batches,
    predict_baseline, predict_joint, train_baseline, train_joint,
};
use medrank::retrieval::RetrievalConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensornet::{
    bce, bce_grad, grad_check, BatchNorm, Conv2d, ConvSpec, Layer, Linear, Mode, Sequential, Tensor,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn criterion_1() -> Outcome {
    let cfg = JointConfig::default();
    ensure!(cfg.joint_dim() == 3824, "joint width {}", cfg.joint_dim());
    ensure!(cfg.heads.filter[0] == 3824, "filter head input {}", cfg.heads.filter[0]);
    ensure!(cfg.heads.pair[0] == 7648, "pair head input {}", cfg.heads.pair[0]);
    ensure!(cfg.encoder.pooled_dim() == 1024, "pooled width {}", cfg.encoder.pooled_dim());

    let scaled = JointModel::new(JointConfig::scaled_down(), 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for a in 1..=50 {
        for c in 1..=50 {
            let trace = cfg.encoder.spatial_trace(a, c).map_err(|e| format!("({a},{c}): {e}"))?;
            ensure!(trace.iter().all(|&(h, w)| h > 0 && w > 0), "({a},{c}) trace {trace:?}");
            let x = Tensor::new(vec![8, a, c], random_vec(&mut rng, 8 * a * c)).unwrap();
            let y = scaled.encoder.infer(&[x]).map_err(|e| format!("({a},{c}): {e}"))?;
            ensure!(y[0].len() == 16, "scaled ({a},{c}) gave {}", y[0].len());
        }
    }

    let full = JointModel::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
    for (a, c) in [(1, 1), (3, 4)] {
        let x = Tensor::new(vec![768, a, c], random_vec(&mut rng, 768 * a * c)).unwrap();
        let y = full.encoder.infer(&[x]).map_err(|e| e.to_string())?;
        ensure!(y[0].len() == 1024, "full-width ({a},{c}) gave {}", y[0].len());
    }
    let joint = Tensor::vector(random_vec(&mut rng, 3824));
    let f = full.filter.infer(std::slice::from_ref(&joint)).map_err(|e| e.to_string())?;
    let pair = tensornet::concat(&[&joint, &joint]);
    let p = full.pair.infer(&[pair]).map_err(|e| e.to_string())?;
    ensure!(f[0].len() == 1 && p[0].len() == 1, "head outputs {} {}", f[0].len(), p[0].len());
    Ok("joint 3824, pair input 7648, 2500 shapes swept, full-width encoder 1024".into())
}

fn bce_eval(net: &mut Sequential, xs: &[Tensor], targets: &[f64], mode: Mode) -> tensornet::Result<f64> {
    let ys = net.forward(xs, mode)?;
    let mut loss = 0.0;
    let mut grads = Vec::new();
    for (y, &t) in ys.iter().zip(targets) {
        loss += bce(y.data()[0], t)?;
        grads.push(Tensor::vector(vec![bce_grad(y.data()[0], t)?]));
    }
    net.backward(&grads)?;
    Ok(loss)
}

fn weighted_eval(net: &mut Sequential, xs: &[Tensor], weights: &[Vec<f64>], mode: Mode) -> tensornet::Result<f64> {
    let ys = net.forward(xs, mode)?;
    let mut loss = 0.0;
    let mut grads = Vec::new();
    for (y, w) in ys.iter().zip(weights) {
        loss += y.data().iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        grads.push(Tensor::new(y.shape().to_vec(), w[..y.len()].to_vec())?);
    }
    net.backward(&grads)?;
    Ok(loss)
}

fn criterion_2() -> Outcome {
    const TOL: f64 = 1e-4;
    const EPS: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = Vec::new();

    let mut linear = Sequential::new(vec![Layer::Linear(Linear::new(5, 1, &mut rng)), Layer::Sigmoid]);
    let xs: Vec<Tensor> = (0..6).map(|_| Tensor::vector(random_vec(&mut rng, 5))).collect();
    let targets = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let r = grad_check(&mut linear, |n| bce_eval(n, &xs, &targets, Mode::Train), EPS).map_err(|e| e.to_string())?;
    worst.push(("linear", r.max_rel_error));

    let spec = ConvSpec {
        in_channels: 3,
        out_channels: 2,
        kernel: (3, 2),
        stride: (2, 1),
        padding: (1, 1),
    };
    let mut conv = Sequential::new(vec![Layer::Conv2d(Conv2d::new(spec, &mut rng).unwrap())]);
    let xs = vec![Tensor::new(vec![3, 4, 5], random_vec(&mut rng, 60)).unwrap()];
    let weights = vec![random_vec(&mut rng, 64)];
    let r = grad_check(&mut conv, |n| weighted_eval(n, &xs, &weights, Mode::Train), EPS).map_err(|e| e.to_string())?;
    worst.push(("conv2d", r.max_rel_error));

    for mode in [Mode::Train, Mode::Eval] {
        let mut bn = BatchNorm::new(3);
        bn.gamma.data_mut().copy_from_slice(&[1.2, -0.6, 0.9]);
        bn.beta.data_mut().copy_from_slice(&[0.1, 0.0, -0.3]);
        bn.running_var.data_mut().copy_from_slice(&[0.8, 1.4, 2.0]);
        let mut net = Sequential::new(vec![Layer::BatchNorm(bn), Layer::Sigmoid]);
        let xs: Vec<Tensor> = (0..5).map(|_| Tensor::vector(random_vec(&mut rng, 3))).collect();
        let weights: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 3)).collect();
        let r = grad_check(&mut net, |n| weighted_eval(n, &xs, &weights, mode), EPS).map_err(|e| e.to_string())?;
        worst.push((if mode == Mode::Train { "batchnorm/train" } else { "batchnorm/eval" }, r.max_rel_error));
    }

    let mut encoder = JointModel::new(JointConfig::scaled_down(), 3).map_err(|e| e.to_string())?.encoder;
    let xs: Vec<Tensor> = [(2, 3), (1, 1), (4, 2)]
        .iter()
        .map(|&(a, c)| Tensor::new(vec![8, a, c], random_vec(&mut rng, 8 * a * c)).unwrap())
        .collect();
    let weights: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 16)).collect();
    let r = grad_check(&mut encoder, |n| weighted_eval(n, &xs, &weights, Mode::Train), EPS).map_err(|e| e.to_string())?;
    worst.push(("encoder", r.max_rel_error));

    let r = joint_gradcheck(1, 2.0, EPS).map_err(|e| e.to_string())?;
    worst.push(("encoder+heads", r.max_rel_error));

    let summary = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(worst.iter().all(|&(_, e)| e <= TOL), "{summary}");
    Ok(summary)
}

fn naive_conv(spec: &ConvSpec, weight: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let mut out = vec![0.0; spec.out_channels * oh * ow];
    for o in 0..spec.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for i in 0..spec.in_channels {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (iy, ix) = ((oy * sh + ky) as isize - ph as isize, (ox * sw + kx) as isize - pw as isize);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += weight[((o * spec.in_channels + i) * kh + ky) * kw + kx]
                                    * x[(i * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0;
    let mut conv_err: f64 = 0.0;
    while cases < 100 {
        let spec = ConvSpec {
            in_channels: rng.gen_range(1..=8),
            out_channels: rng.gen_range(1..=8),
            kernel: (rng.gen_range(1..=5), rng.gen_range(1..=5)),
            stride: (rng.gen_range(1..=3), rng.gen_range(1..=3)),
            padding: (rng.gen_range(0..=2), rng.gen_range(0..=2)),
        };
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        if spec.output_size(h, w).is_err() {
            continue;
        }
        let conv = Conv2d::without_bias(spec, &mut rng).unwrap();
        let x = random_vec(&mut rng, spec.in_channels * h * w);
        let got = conv.forward(&[Tensor::new(vec![spec.in_channels, h, w], x.clone()).unwrap()]).unwrap();
        let want = naive_conv(&spec, conv.weight.data(), &x, h, w);
        ensure!(got[0].len() == want.len(), "{spec:?}: length {} vs {}", got[0].len(), want.len());
        for (a, b) in got[0].data().iter().zip(&want) {
            conv_err = conv_err.max((a - b).abs());
        }
        cases += 1;
    }
    ensure!(conv_err <= 1e-12, "conv max error {conv_err:e}");

    let mut anli_err: f64 = 0.0;
    for _ in 0..500 {
        let (s, p) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let m: Vec<Vec<f64>> = (0..s).map(|_| (0..p).map(|_| rng.gen::<f64>()).collect()).collect();
        let mut total = 0.0;
        for row in &m {
            let mut best = row[0];
            for &v in row {
                if v > best {
                    best = v;
                }
            }
            total += best;
        }
        let got = anli_from_scores(&m).map_err(|e| e.to_string())?;
        anli_err = anli_err.max((got - total / s as f64).abs());
    }
    ensure!(anli_err <= 1e-12, "ANLI max error {anli_err:e}");

    let mut rho_err: f64 = 0.0;
    let mut perms = 0;
    for n in 2..=5 {
        let x: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        for p in permutations(n) {
            let y: Vec<f64> = p.iter().map(|&v| (v + 1) as f64).collect();
            let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            let nf = n as f64;
            let closed = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
            rho_err = rho_err.max((spearman(&x, &y) - closed).abs());
            perms += 1;
        }
    }
    ensure!(rho_err <= 1e-12, "Spearman max error {rho_err:e}");
    Ok(format!(
        "conv 100 cases {conv_err:.1e}, ANLI 500 matrices {anli_err:.1e}, Spearman {perms} permutations {rho_err:.1e}"
    ))
}

fn candidate(id: &str, rank: u32, score: i64) -> CandidateAnswer {
    CandidateAnswer {
        answer_id: id.into(),
        text: format!("Answer {id}."),
        source: "s".into(),
        system_rank: rank,
        reference_rank: Some(rank),
        reference_score: Some(score),
    }
}

fn criterion_4() -> Outcome {
    let ranks: HashMap<String, u32> = [("a".to_string(), 1), ("b".to_string(), 2)].into();
    let reversed = spearman_per_question(&["b", "a"], &ranks);
    ensure!(reversed == -1.0, "reversed pair rho {reversed}");
    let right = spearman_per_question(&["a", "b"], &ranks);
    ensure!(right == 1.0, "ordered pair rho {right}");

    let q = QuestionRecord {
        question_id: "q1".into(),
        text: "Question?".into(),
        candidates: vec![candidate("a", 1, 4), candidate("b", 2, 1), candidate("c", 3, 2)],
    };
    let ds = Dataset::new(Split::Test, vec![q]).map_err(|e| e.to_string())?;
    let pred = Prediction {
        question_id: "q1".into(),
        ranking: vec!["b".into(), "c".into(), "a".into()],
        relevant: vec!["a".into()],
        scores: BTreeMap::new(),
    };
    let report = evaluate(&[pred], &ds).map_err(|e| e.to_string())?;
    ensure!(report.per_question[0].rho == 0.0, "single valid answer rho {}", report.per_question[0].rho);

    let labels: Vec<bool> = (1..=4).map(|s| derive_label(s).unwrap()).collect();
    ensure!(labels == [false, false, true, true], "labels {labels:?}");
    ensure!(derive_label(0).is_err() && derive_label(5).is_err(), "out-of-range scores accepted");
    Ok("reversed pair -1, single valid answer 0, 3/4 -> relevant and 1/2 -> not".into())
}

fn criterion_5() -> Outcome {
    let data = synth(80, 5);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let mut queries: Vec<String> = data
        .train
        .questions
        .iter()
        .chain(&data.test.questions)
        .map(|q| p.pre.question(&q.text))
        .collect();
    // partial topic overlap lands between the two thresholds
    queries.extend((0..40).map(|q| format!("What about t{q:03}w0 t{q:03}w1 n{q:03}x?")));
    queries.extend(["Unrelated words entirely?".to_string(), "zzz".to_string(), "What about it?".to_string()]);
    let cfg = |t: f64| RetrievalConfig {
        max_candidates: 3,
        threshold: t,
    };
    for q in &queries {
        for t in [0.0, 0.5, 0.9, 1.0] {
            let hits = p.index.retrieve(q, &cfg(t)).map_err(|e| e.to_string())?;
            ensure!(!hits.is_empty(), "empty retrieval for `{q}` at T={t}");
        }
    }
    let low = p.index.coverage(&queries, &cfg(0.5)).map_err(|e| e.to_string())?;
    let high = p.index.coverage(&queries, &cfg(0.9)).map_err(|e| e.to_string())?;
    ensure!(high <= low, "coverage rose from {low} to {high}");
    Ok(format!("{} queries never empty; coverage T=0.5 {low:.3} >= T=0.9 {high:.3}", queries.len()))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let data = synth(200, 7);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let (ckpt, _) = train_joint(&p, &data.train, &JointConfig::scaled_down(), &adam(30, 7), |_| {})
        .map_err(|e| e.to_string())?;
    let joint = evaluate(&predict_joint(&p, &ckpt, &data.test).map_err(|e| e.to_string())?, &data.test)
        .map_err(|e| e.to_string())?;

    let features = fit_baseline_features(&p, &data.train, 16);
    let tfidf = p.fit_tfidf(16).map_err(|e| e.to_string())?;
    let rows = extract_features(&p, &data.train, &tfidf, &features).map_err(|e| e.to_string())?;
    let model = train_baseline(&rows, features.clone(), tfidf.clone(), &LogRegConfig::default(), None)
        .map_err(|e| e.to_string())?;
    let test_rows = extract_features(&p, &data.test, &tfidf, &features).map_err(|e| e.to_string())?;
    let base = evaluate(
        &predict_baseline(&model, &test_rows, BaselineRanker::Logistic).map_err(|e| e.to_string())?,
        &data.test,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let summary = format!(
        "joint acc {:.3} rho {:.3}; logistic acc {:.3} rho {:.3}; {:.1}s",
        joint.accuracy,
        joint.mean_rho,
        base.accuracy,
        base.mean_rho,
        elapsed.as_secs_f64()
    );
    ensure!(joint.accuracy >= 0.90, "{summary}");
    ensure!(joint.mean_rho >= 0.80, "{summary}");
    ensure!(base.accuracy >= 0.80, "{summary}");
    ensure!(joint.mean_rho >= base.mean_rho, "{summary}");
    ensure!(elapsed < Duration::from_secs(600), "{summary}");
    Ok(summary)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn criterion_7() -> Outcome {
    let batch = random_batch(&[true, false, true, false], 2, 3);
    let mut model = JointModel::new(JointConfig::scaled_down(), 1).map_err(|e| e.to_string())?;
    model.zero_grad();
    model.loss_and_backward(&batch, 0.0, Mode::Train).map_err(|e| e.to_string())?;
    let nonzero = model
        .pair
        .params_mut()
        .iter()
        .flat_map(|p| p.grad().unwrap_or(&[]).to_vec())
        .filter(|&g| g != 0.0)
        .count();
    ensure!(nonzero == 0, "{nonzero} nonzero pair-head gradients at alpha 0");

    let single = random_batch(&[true], 2, 4);
    model.zero_grad();
    let l = model.loss_and_backward(&single, 2.0, Mode::Train).map_err(|e| e.to_string())?;
    ensure!(l.pair_terms == 0 && l.pair == 0.0 && l.total == l.filter, "single candidate: {l:?}");

    let two = random_batch(&[true, false], 1, 9);
    let (bf, bp, alpha) = (0.4, -1.1, 2.0);
    for (head, b) in [(&mut model.filter, bf), (&mut model.pair, bp)] {
        let mut params = head.params_mut();
        let n = params.len();
        params[n - 2].data_mut().fill(0.0);
        params[n - 1].data_mut()[0] = b;
    }
    let l = model.loss_and_backward(&two, alpha, Mode::Eval).map_err(|e| e.to_string())?;
    let (f, p) = (sigmoid(bf), sigmoid(bp));
    let hand = -f.ln() - (1.0 - f).ln() + alpha * (-p.ln() - (1.0 - p).ln());
    let err = (l.total - hand).abs();
    ensure!(err <= 1e-9, "L_total {} vs hand {hand} ({err:e})", l.total);
    Ok(format!("alpha 0 pair grads zero, single candidate 0 pair terms, frozen fixture error {err:.1e}"))
}

fn duplicate_all(batch: &QuestionBatch) -> QuestionBatch {
    (0..batch.instances.len()).fold(batch.clone(), |b, k| b.with_duplicate(k))
}

fn criterion_8() -> Outcome {
    let data = synth(60, 8);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let config = JointConfig::scaled_down();
    let inputs = fit_joint_inputs(&p, &data.train, &config).map_err(|e| e.to_string())?;
    let mut batches = joint_inference_batches(&p, &p.prepare(&data.train).map_err(|e| e.to_string())?, &config, &inputs)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    batches.shuffle(&mut rng);
    for seed in 0..3 {
        batches.push(random_batch(&[true, false, true, false, true], 1 + seed as usize, seed));
    }
    let model = JointModel::new(config, 8).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for b in &batches {
        let base = predict_batch(&model, b).map_err(|e| e.to_string())?;
        let mut variants = vec![duplicate_all(b)];
        if b.instances.len() == 1 {
            variants.push(b.with_duplicate(0));
        }
        for v in &variants {
            let d = predict_batch(&model, v).map_err(|e| e.to_string())?;
            ensure!(d.ranking == base.ranking, "{}: ranking changed", b.question_id);
            ensure!(d.relevant == base.relevant, "{}: decisions changed", b.question_id);
            checked += 1;
        }
    }
    Ok(format!("{checked} duplicated batches over {} questions", batches.len()))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut synth_bytes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("synth_{run}"));
        synth(200, 11).write(&out).map_err(|e| e.to_string())?;
        let files: Vec<Vec<u8>> = ["train.jsonl", "test.jsonl", "corpus.jsonl"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        synth_bytes.push(files);
    }
    ensure!(synth_bytes[0] == synth_bytes[1], "synth files differ");

    let data = synth(30, 12);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let (ckpt, _) = train_joint(&p, &data.train, &JointConfig::scaled_down(), &adam(3, 12), |_| {})
            .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("ckpt_{run}.json"));
        ckpt.save(&path).map_err(|e| e.to_string())?;
        ckpts.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure!(ckpts[0] == ckpts[1], "checkpoints differ");
    Checkpoint::load(&dir.path().join("ckpt_a.json")).map_err(|e| e.to_string())?;
    Ok(format!("synth files and {}-byte checkpoints identical", ckpts[0].len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "dimension audit", criterion_1),
        (2, "gradient verification", criterion_2),
        (3, "oracle equivalence", criterion_3),
        (4, "metric conventions", criterion_4),
        (5, "retrieval contract", criterion_5),
        (6, "end-to-end synthetic learning", criterion_6),
        (7, "loss structure", criterion_7),
        (8, "ensemble invariance", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n}: {name} ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n}: {name} ({detail}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
