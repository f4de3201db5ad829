mod common;

use common::{adam, random_batch, scaled_pipeline, synth};
use medrank::evalkit::Prediction;
use medrank::joint::{predict_batch, train, Checkpoint, JointConfig, JointModel, QuestionBatch, TrainConfig};
use medrank::pipeline::{
    fit_joint_inputs, joint_gradcheck, joint_inference_batches, joint_training_batches, predict_joint, train_joint,
};
use medrank::retrieval::RetrievalConfig;
use tensornet::{grad_check_strided, Mode, OptimizerConfig};

fn bce(p: f64, t: f64) -> f64 {
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let report = joint_gradcheck(2, 2.0, 1e-5).unwrap();
    assert!(report.checked > 9000);
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn strided_check_on_hand_built_batch() {
    let batch = random_batch(&[true, false, true], 2, 11);
    let mut model = JointModel::new(JointConfig::scaled_down(), 5).unwrap();
    let report = grad_check_strided(
        &mut model,
        |m| {
            m.loss_and_backward(&batch, 0.7, Mode::Train)
                .map(|l| l.total)
                .map_err(|e| tensornet::TensorError::NonFinite(e.to_string()))
        },
        1e-5,
        3,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn alpha_zero_leaves_pair_head_untouched() {
    let batch = random_batch(&[true, false, true, false], 2, 3);
    let mut model = JointModel::new(JointConfig::scaled_down(), 1).unwrap();
    model.zero_grad();
    let l = model.loss_and_backward(&batch, 0.0, Mode::Train).unwrap();
    assert!(l.pair > 0.0);
    assert_eq!(l.total, l.filter);
    for p in model.pair.params_mut() {
        assert!(p.grad().unwrap().iter().all(|&g| g == 0.0));
    }
    assert!(model.filter.params_mut().iter().any(|p| p.grad().unwrap().iter().any(|&g| g != 0.0)));
}

#[test]
fn single_candidate_has_no_pair_terms() {
    let batch = random_batch(&[true], 3, 4);
    let mut model = JointModel::new(JointConfig::scaled_down(), 1).unwrap();
    model.zero_grad();
    let l = model.loss_and_backward(&batch, 2.0, Mode::Train).unwrap();
    assert_eq!(l.pair_terms, 0);
    assert_eq!(l.pair, 0.0);
    assert_eq!(l.filter_terms, 3);
    assert_eq!(l.total, l.filter);
}

#[test]
fn frozen_two_candidate_loss_by_hand() {
    let batch = random_batch(&[true, false], 1, 9);
    let mut model = JointModel::new(JointConfig::scaled_down(), 2).unwrap();
    let (bf, bp, alpha) = (0.3, -0.7, 2.0);
    for (head, b) in [(&mut model.filter, bf), (&mut model.pair, bp)] {
        let mut params = head.params_mut();
        let n = params.len();
        params[n - 2].data_mut().fill(0.0);
        params[n - 1].data_mut()[0] = b;
    }
    let l = model.loss_and_backward(&batch, alpha, Mode::Eval).unwrap();
    let (f, p) = (sigmoid(bf), sigmoid(bp));
    // filter: labels (1, 0); pairs: (0, 1) target 1, (1, 0) target 0
    let expect = -f.ln() - (1.0 - f).ln() + alpha * (-p.ln() - (1.0 - p).ln());
    assert!((l.total - expect).abs() < 1e-9, "{} vs {expect}", l.total);
    assert_eq!((l.filter_terms, l.pair_terms), (2, 2));
}

#[test]
fn eval_loss_matches_scored_outputs() {
    let batch = random_batch(&[true, false, false], 2, 21);
    let mut model = JointModel::new(JointConfig::scaled_down(), 8).unwrap();
    let alpha = 1.5;
    let out = model.score(&batch).unwrap();
    let mut expect = 0.0;
    for k in 0..2 {
        for m in 0..3 {
            expect += bce(out.filter[k][m], if m == 0 { 1.0 } else { 0.0 });
            for n in 0..3 {
                if m != n {
                    expect += alpha * bce(out.pair[k][m][n], if m < n { 1.0 } else { 0.0 });
                }
            }
        }
    }
    let l = model.loss_and_backward(&batch, alpha, Mode::Eval).unwrap();
    assert!((l.total - expect).abs() < 1e-9);
}

fn duplicated(batch: &QuestionBatch) -> QuestionBatch {
    (0..batch.instances.len()).fold(batch.clone(), |b, k| b.with_duplicate(k))
}

fn same_decisions(a: &Prediction, b: &Prediction) {
    assert_eq!(a.ranking, b.ranking);
    assert_eq!(a.relevant, b.relevant);
}

#[test]
fn duplicating_entailed_answers_changes_nothing() {
    let model = JointModel::new(JointConfig::scaled_down(), 3).unwrap();
    for (labels, instances, seed) in [(&[true, false, true][..], 1, 1), (&[false, true, true, false][..], 3, 2)] {
        let batch = random_batch(labels, instances, seed);
        let base = predict_batch(&model, &batch).unwrap();
        same_decisions(&base, &predict_batch(&model, &duplicated(&batch)).unwrap());
        if instances == 1 {
            same_decisions(&base, &predict_batch(&model, &batch.with_duplicate(0)).unwrap());
        }
    }
}

#[test]
fn checkpoint_round_trip_and_determinism() {
    let data = synth(12, 4);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let cfg = adam(2, 9);
    let (a, trace) = train_joint(&p, &data.train, &JointConfig::scaled_down(), &cfg, |_| {}).unwrap();
    let (b, _) = train_joint(&p, &data.train, &JointConfig::scaled_down(), &cfg, |_| {}).unwrap();
    assert_eq!(trace.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.json"), dir.path().join("b.json"));
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

    let loaded = Checkpoint::load(&pa).unwrap();
    assert_eq!(loaded, a);
    let before = predict_joint(&p, &a, &data.test).unwrap();
    let after = predict_joint(&p, &loaded, &data.test).unwrap();
    assert_eq!(before, after);

    let other = adam(2, 10);
    let (c, _) = train_joint(&p, &data.train, &JointConfig::scaled_down(), &other, |_| {}).unwrap();
    assert_ne!(c.params, a.params);
}

#[test]
fn sgd_loss_settles_after_first_epoch() {
    let data = synth(30, 2);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let config = JointConfig::scaled_down();
    let inputs = fit_joint_inputs(&p, &data.train, &config).unwrap();
    let prepared = p.prepare(&data.train).unwrap();
    let batches = joint_training_batches(&p, &prepared, &config, &inputs, true).unwrap();
    let mut model = JointModel::new(config, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 8,
        seed: 1,
        optimizer: OptimizerConfig::Sgd {
            lr: 1e-3,
            weight_decay: 0.0,
        },
        ..TrainConfig::default()
    };
    let trace = train(&mut model, &batches, &cfg, |_| {}).unwrap();
    for w in trace[1..].windows(2) {
        assert!(w[1].loss <= 1.05 * w[0].loss, "{:?}", trace);
    }
    assert!(trace.last().unwrap().loss < trace[0].loss);
}

#[test]
fn inference_is_repeatable() {
    let data = synth(10, 6);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let config = JointConfig::scaled_down();
    let inputs = fit_joint_inputs(&p, &data.train, &config).unwrap();
    let batches = joint_inference_batches(&p, &p.prepare(&data.test).unwrap(), &config, &inputs).unwrap();
    let model = JointModel::new(config, 4).unwrap();
    for b in &batches {
        let x = model.score(b).unwrap();
        let y = model.score(b).unwrap();
        assert_eq!(x, y);
        assert!(x.filter.iter().flatten().all(|&f| f > 0.0 && f < 1.0));
    }
}
