mod common;

use common::{scaled_pipeline, synth};
use medrank::baseline::{BaselineRanker, HingeConfig, LogRegConfig};
use medrank::evalkit::evaluate;
use medrank::pipeline::{extract_features, fit_baseline_features, predict_baseline, train_baseline};
use medrank::retrieval::RetrievalConfig;

#[test]
fn every_synthetic_question_has_an_entailing_pair() {
    let data = synth(200, 7);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    for q in data.train.questions.iter().chain(&data.test.questions) {
        let scores = p.index.score_all(&p.pre.question(&q.text)).unwrap();
        let best = scores.iter().cloned().fold(f64::MIN, f64::max);
        assert!(best > 0.5, "{} best {best}", q.question_id);
    }
}

#[test]
fn coverage_never_grows_with_threshold() {
    let data = synth(60, 3);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let queries: Vec<String> = data.train.questions.iter().map(|q| p.pre.question(&q.text)).collect();
    let mut last = f64::INFINITY;
    for t in [0.0, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0] {
        let cfg = RetrievalConfig {
            max_candidates: 3,
            threshold: t,
        };
        let c = p.index.coverage(&queries, &cfg).unwrap();
        assert!(c <= last, "T={t}: {c} > {last}");
        if t == 0.0 {
            assert_eq!(c, 1.0);
        }
        for q in &queries {
            let hits = p.index.retrieve(q, &cfg).unwrap();
            assert!(!hits.is_empty() && hits.len() <= 3);
        }
        last = c;
    }
}

#[test]
fn baseline_beats_chance_on_synthetic_data() {
    let data = synth(80, 5);
    let p = scaled_pipeline(&data, RetrievalConfig::default());
    let features = fit_baseline_features(&p, &data.train, 16);
    let tfidf = p.fit_tfidf(16).unwrap();
    let rows = extract_features(&p, &data.train, &tfidf, &features).unwrap();
    assert!(rows.iter().all(|r| r.features.len() == features.len()));
    let model = train_baseline(&rows, features.clone(), tfidf.clone(), &LogRegConfig::default(), Some(&HingeConfig::default())).unwrap();
    let test_rows = extract_features(&p, &data.test, &tfidf, &features).unwrap();
    let majority = {
        let labels: Vec<bool> = data
            .test
            .questions
            .iter()
            .flat_map(|q| q.candidates.iter().filter_map(|c| c.label()))
            .collect();
        let pos = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        pos.max(1.0 - pos)
    };
    for ranker in [BaselineRanker::Logistic, BaselineRanker::Hinge] {
        let report = evaluate(&predict_baseline(&model, &test_rows, ranker).unwrap(), &data.test).unwrap();
        assert!(report.accuracy > majority, "{ranker:?}: {} vs {majority}", report.accuracy);
        assert!(report.mean_full_rho > 0.0);
    }
}
