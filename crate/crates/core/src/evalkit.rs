//! Filtering and ranking metrics plus the error-analysis tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, QuestionRecord};
use crate::error::{io_err, Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::preprocess::split_sentences;

/// One question's system output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    /// Every answer id, best first.
    pub ranking: Vec<String>,
    /// Answer ids judged relevant, in ranking order.
    pub relevant: Vec<String>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
}

/// `(accuracy, precision)` of binary predictions; precision is 0 when nothing
/// is predicted positive.
pub fn accuracy_precision(predicted: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("label list"));
    }
    let matches = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let tp = predicted.iter().zip(truth).filter(|(&p, &t)| p && t).count();
    let positives = predicted.iter().filter(|&&p| p).count();
    let precision = if positives == 0 {
        0.0
    } else {
        tp as f64 / positives as f64
    };
    Ok((matches as f64 / predicted.len() as f64, precision))
}

/// `1 / position` of the first relevant id in `ranking`, 0 if there is none.
pub fn reciprocal_rank<S: AsRef<str>>(ranking: &[S], relevant: &HashSet<&str>) -> f64 {
    ranking
        .iter()
        .position(|id| relevant.contains(id.as_ref()))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Mean reciprocal rank over `(ranking, labels)` pairs, one per question.
pub fn mrr(questions: &[(Vec<String>, HashMap<String, bool>)]) -> Result<f64> {
    if questions.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (ranking, labels) in questions {
        if let Some(id) = ranking.iter().find(|id| !labels.contains_key(*id)) {
            return Err(Error::InvalidRecord(format!("ranking contains unknown answer {id}")));
        }
        let relevant: HashSet<&str> = labels
            .iter()
            .filter(|(_, &l)| l)
            .map(|(id, _)| id.as_str())
            .collect();
        total += reciprocal_rank(ranking, &relevant);
    }
    Ok(total / questions.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks. Returns 0 for fewer
/// than two points or when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return 0.0;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Rho between predicted position and reference rank over the answers in
/// `order` (best first) that carry a reference rank.
pub fn spearman_per_question<S: AsRef<str>>(order: &[S], reference_ranks: &HashMap<String, u32>) -> f64 {
    let (pos, refr): (Vec<f64>, Vec<f64>) = order
        .iter()
        .filter_map(|id| reference_ranks.get(id.as_ref()))
        .enumerate()
        .map(|(i, &r)| ((i + 1) as f64, r as f64))
        .unzip();
    spearman(&pos, &refr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_id: String,
    /// Over the answers predicted relevant.
    pub rho: f64,
    /// Over every candidate.
    pub full_rho: f64,
    pub reciprocal_rank: f64,
    pub n_valid: usize,
    pub n_candidates: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub count: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidCountRow {
    pub n_valid: usize,
    pub count: usize,
    pub accuracy: f64,
    pub mean_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Analysis {
    /// Share of valid answers kept by the filter, per reference rank.
    pub recall_by_reference_rank: Vec<BucketRow>,
    /// Filtering accuracy per answer length in sentences.
    pub accuracy_by_sentence_count: Vec<BucketRow>,
    pub by_valid_answers: Vec<ValidCountRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub mrr: f64,
    pub mean_rho: f64,
    pub mean_full_rho: f64,
    pub per_question: Vec<QuestionMetrics>,
    pub buckets: Analysis,
}

struct Joined<'a> {
    question: &'a QuestionRecord,
    prediction: &'a Prediction,
    relevant: HashSet<&'a str>,
    labels: HashMap<String, bool>,
}

fn join<'a>(predictions: &'a [Prediction], dataset: &'a Dataset) -> Result<Vec<Joined<'a>>> {
    let by_id: HashMap<&str, &Prediction> = predictions
        .iter()
        .map(|p| (p.question_id.as_str(), p))
        .collect();
    dataset
        .questions
        .iter()
        .map(|q| {
            let prediction = by_id
                .get(q.question_id.as_str())
                .ok_or_else(|| Error::MissingKey(format!("no prediction for question {}", q.question_id)))?;
            let mut labels = HashMap::new();
            for c in &q.candidates {
                let l = c.label().ok_or_else(|| Error::InvalidQuestion {
                    question_id: q.question_id.clone(),
                    message: format!("answer {} has no reference score", c.answer_id),
                })?;
                labels.insert(c.answer_id.clone(), l);
            }
            let mut seen = HashSet::new();
            for id in &prediction.ranking {
                if !labels.contains_key(id) || !seen.insert(id.as_str()) {
                    return Err(Error::InvalidQuestion {
                        question_id: q.question_id.clone(),
                        message: format!("ranking has unknown or repeated answer {id}"),
                    });
                }
            }
            if seen.len() != labels.len() {
                return Err(Error::InvalidQuestion {
                    question_id: q.question_id.clone(),
                    message: "ranking is not a permutation of the candidates".into(),
                });
            }
            let relevant: HashSet<&str> = prediction.relevant.iter().map(String::as_str).collect();
            if let Some(id) = relevant.iter().find(|id| !labels.contains_key(**id)) {
                return Err(Error::InvalidQuestion {
                    question_id: q.question_id.clone(),
                    message: format!("relevant list has unknown answer {id}"),
                });
            }
            Ok(Joined {
                question: q,
                prediction,
                relevant,
                labels,
            })
        })
        .collect()
}

fn question_metrics(j: &Joined) -> QuestionMetrics {
    let reference: HashMap<String, u32> = j
        .question
        .candidates
        .iter()
        .filter_map(|c| c.reference_rank.map(|r| (c.answer_id.clone(), r)))
        .collect();
    let kept: Vec<&String> = j
        .prediction
        .ranking
        .iter()
        .filter(|id| j.relevant.contains(id.as_str()))
        .collect();
    let truly: HashSet<&str> = j
        .labels
        .iter()
        .filter(|(_, &l)| l)
        .map(|(id, _)| id.as_str())
        .collect();
    let correct = j
        .labels
        .iter()
        .filter(|(id, &l)| j.relevant.contains(id.as_str()) == l)
        .count();
    QuestionMetrics {
        question_id: j.question.question_id.clone(),
        rho: spearman_per_question(&kept, &reference),
        full_rho: spearman_per_question(&j.prediction.ranking, &reference),
        reciprocal_rank: reciprocal_rank(&j.prediction.ranking, &truly),
        n_valid: truly.len(),
        n_candidates: j.labels.len(),
        correct,
    }
}

/// Sentence-count bucket label: `1-10`, `11-20`, ..., `71-80`, `80+`.
pub fn length_bucket(sentences: usize) -> String {
    if sentences > 80 {
        "80+".into()
    } else {
        let lo = sentences.saturating_sub(1) / 10 * 10 + 1;
        format!("{lo}-{}", lo + 9)
    }
}

fn length_bucket_order(label: &str) -> usize {
    label
        .split('-')
        .next()
        .and_then(|s| s.trim_end_matches('+').parse().ok())
        .unwrap_or(usize::MAX)
}

fn analysis(joined: &[Joined], metrics: &[QuestionMetrics]) -> Analysis {
    let mut recall: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut length: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut valid: BTreeMap<usize, (usize, usize, usize, f64)> = BTreeMap::new();
    for (j, m) in joined.iter().zip(metrics) {
        for c in &j.question.candidates {
            let label = j.labels[&c.answer_id];
            let kept = j.relevant.contains(c.answer_id.as_str());
            if let (true, Some(r)) = (label, c.reference_rank) {
                let e = recall.entry(r).or_default();
                e.0 += 1;
                e.1 += kept as usize;
            }
            let e = length.entry(length_bucket(split_sentences(&c.text).len())).or_default();
            e.0 += 1;
            e.1 += (kept == label) as usize;
        }
        let e = valid.entry(m.n_valid).or_default();
        e.0 += 1;
        e.1 += m.n_candidates;
        e.2 += m.correct;
        e.3 += m.rho;
    }
    let mut accuracy_by_sentence_count: Vec<BucketRow> = length
        .into_iter()
        .map(|(bucket, (n, ok))| BucketRow {
            bucket,
            count: n,
            value: ok as f64 / n as f64,
        })
        .collect();
    accuracy_by_sentence_count.sort_by_key(|r| length_bucket_order(&r.bucket));
    Analysis {
        recall_by_reference_rank: recall
            .into_iter()
            .map(|(r, (n, kept))| BucketRow {
                bucket: r.to_string(),
                count: n,
                value: kept as f64 / n as f64,
            })
            .collect(),
        accuracy_by_sentence_count,
        by_valid_answers: valid
            .into_iter()
            .map(|(n_valid, (qs, cands, ok, rho))| ValidCountRow {
                n_valid,
                count: qs,
                accuracy: ok as f64 / cands as f64,
                mean_rho: rho / qs as f64,
            })
            .collect(),
    }
}

/// Error-analysis tables for predictions on a labeled dataset.
pub fn analyze(predictions: &[Prediction], dataset: &Dataset) -> Result<Analysis> {
    let joined = join(predictions, dataset)?;
    let metrics: Vec<QuestionMetrics> = joined.iter().map(question_metrics).collect();
    Ok(analysis(&joined, &metrics))
}

/// Pooled filtering metrics, per-question ranking metrics and analysis tables.
pub fn evaluate(predictions: &[Prediction], dataset: &Dataset) -> Result<EvalReport> {
    let joined = join(predictions, dataset)?;
    if joined.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let (mut predicted, mut truth) = (Vec::new(), Vec::new());
    for j in &joined {
        for c in &j.question.candidates {
            predicted.push(j.relevant.contains(c.answer_id.as_str()));
            truth.push(j.labels[&c.answer_id]);
        }
    }
    let (accuracy, precision) = accuracy_precision(&predicted, &truth)?;
    let per_question: Vec<QuestionMetrics> = joined.iter().map(question_metrics).collect();
    let n = per_question.len() as f64;
    Ok(EvalReport {
        accuracy,
        precision,
        mrr: per_question.iter().map(|m| m.reciprocal_rank).sum::<f64>() / n,
        mean_rho: per_question.iter().map(|m| m.rho).sum::<f64>() / n,
        mean_full_rho: per_question.iter().map(|m| m.full_rho).sum::<f64>() / n,
        buckets: analysis(&joined, &per_question),
        per_question,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn save_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_jsonl(path, predictions)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, p)| p).collect())
}

/// Writes one CSV per analysis table into `dir`.
pub fn write_analysis_csv(dir: &Path, analysis: &Analysis) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join("recall_by_reference_rank.csv"), &analysis.recall_by_reference_rank)?;
    write_csv(&dir.join("accuracy_by_sentence_count.csv"), &analysis.accuracy_by_sentence_count)?;
    write_csv(&dir.join("by_valid_answers.csv"), &analysis.by_valid_answers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CandidateAnswer, Split};
    use proptest::prelude::*;

    #[test]
    fn accuracy_precision_cases() {
        assert_eq!(accuracy_precision(&[true, false], &[true, false]).unwrap(), (1.0, 1.0));
        assert_eq!(accuracy_precision(&[false, false], &[true, false]).unwrap().1, 0.0);
        // TP=3, FP=1, TN=3, FN=1
        let p = [true, true, true, true, false, false, false, false];
        let t = [true, true, true, false, false, false, false, true];
        assert_eq!(accuracy_precision(&p, &t).unwrap(), (0.75, 0.75));
        assert!(accuracy_precision(&[true], &[]).is_err());
    }

    fn labels(pairs: &[(&str, bool)]) -> HashMap<String, bool> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mrr_fixture() {
        let qs = vec![
            (ids(&["a", "b"]), labels(&[("a", true), ("b", false)])),
            (ids(&["a", "b"]), labels(&[("a", false), ("b", true)])),
            (ids(&["a", "b"]), labels(&[("a", false), ("b", false)])),
        ];
        assert!((mrr(&qs).unwrap() - 0.5).abs() < 1e-15);
        let bad = vec![(ids(&["z"]), labels(&[("a", true)]))];
        assert!(mrr(&bad).is_err());
    }

    #[test]
    fn spearman_conventions() {
        let r: HashMap<String, u32> = [("a".to_string(), 1), ("b".to_string(), 2)].into();
        assert_eq!(spearman_per_question(&["a", "b"], &r), 1.0);
        assert_eq!(spearman_per_question(&["b", "a"], &r), -1.0);
        assert_eq!(spearman_per_question(&["a"], &r), 0.0);
        assert_eq!(spearman_per_question::<&str>(&[], &r), 0.0);
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), [2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn length_buckets() {
        assert_eq!(length_bucket(0), "1-10");
        assert_eq!(length_bucket(1), "1-10");
        assert_eq!(length_bucket(10), "1-10");
        assert_eq!(length_bucket(11), "11-20");
        assert_eq!(length_bucket(80), "71-80");
        assert_eq!(length_bucket(81), "80+");
    }

    fn cand(id: &str, rank: u32, score: i64, sentences: usize) -> CandidateAnswer {
        CandidateAnswer {
            answer_id: id.into(),
            text: vec!["Word here."; sentences].join(" "),
            source: "s".into(),
            system_rank: rank,
            reference_rank: Some(rank),
            reference_score: Some(score),
        }
    }

    fn question(id: &str, cands: Vec<CandidateAnswer>) -> QuestionRecord {
        QuestionRecord {
            question_id: id.into(),
            text: "q".into(),
            candidates: cands,
        }
    }

    fn pred(qid: &str, ranking: &[&str], relevant: &[&str]) -> Prediction {
        Prediction {
            question_id: qid.into(),
            ranking: ids(ranking),
            relevant: ids(relevant),
            scores: BTreeMap::new(),
        }
    }

    /// Four questions tallied by hand below.
    fn fixture() -> (Dataset, Vec<Prediction>) {
        let ds = Dataset::new(
            Split::Test,
            vec![
                question("q1", vec![cand("a", 1, 4, 3), cand("b", 2, 3, 12), cand("c", 3, 1, 3)]),
                question("q2", vec![cand("a", 1, 4, 85), cand("b", 2, 2, 3)]),
                question("q3", vec![cand("a", 1, 3, 3), cand("b", 2, 3, 3)]),
                question("q4", vec![cand("a", 1, 1, 3), cand("b", 2, 2, 3)]),
            ],
        )
        .unwrap();
        let preds = vec![
            // keeps a, b (correct), drops c (correct); order right: rho 1
            pred("q1", &["a", "b", "c"], &["a", "b"]),
            // keeps only b (both wrong): rho 0, rr 1/2
            pred("q2", &["b", "a"], &["b"]),
            // keeps both, reversed: rho -1
            pred("q3", &["b", "a"], &["a", "b"]),
            // keeps a (wrong)
            pred("q4", &["a", "b"], &["a"]),
        ];
        (ds, preds)
    }

    #[test]
    fn hand_tallied_report() {
        let (ds, preds) = fixture();
        let r = evaluate(&preds, &ds).unwrap();
        // 9 candidates; wrong: q2 a, q2 b, q4 a
        assert!((r.accuracy - 6.0 / 9.0).abs() < 1e-12);
        // predicted positive: q1 a b, q2 b, q3 a b, q4 a -> 6, true: 4
        assert!((r.precision - 4.0 / 6.0).abs() < 1e-12);
        // rr: 1, 1/2, 1, 0
        assert!((r.mrr - 2.5 / 4.0).abs() < 1e-12);
        assert!((r.mean_rho - 0.0).abs() < 1e-12);

        let a = &r.buckets;
        assert_eq!(
            a.recall_by_reference_rank,
            vec![
                BucketRow { bucket: "1".into(), count: 3, value: 2.0 / 3.0 },
                BucketRow { bucket: "2".into(), count: 2, value: 1.0 },
            ]
        );
        assert_eq!(a.accuracy_by_sentence_count[0].bucket, "1-10");
        assert_eq!(a.accuracy_by_sentence_count[0].count, 7);
        assert_eq!(a.accuracy_by_sentence_count[1].bucket, "11-20");
        assert_eq!(a.accuracy_by_sentence_count[2].bucket, "80+");
        assert_eq!(a.accuracy_by_sentence_count[2].value, 0.0);
        let total: usize = a.accuracy_by_sentence_count.iter().map(|r| r.count).sum();
        assert_eq!(total, 9);

        let v = &a.by_valid_answers;
        assert_eq!(v.iter().map(|r| (r.n_valid, r.count)).collect::<Vec<_>>(), [(0, 1), (1, 1), (2, 2)]);
        // single valid answer: rho 0 by convention
        assert_eq!(v[1].mean_rho, 0.0);
        assert_eq!(v[2].mean_rho, 0.0);
        assert!((v[2].accuracy - 5.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn all_correct_predictions() {
        let (ds, _) = fixture();
        let preds: Vec<Prediction> = ds
            .questions
            .iter()
            .map(|q| {
                let ranking: Vec<&str> = q.candidates.iter().map(|c| c.answer_id.as_str()).collect();
                let relevant: Vec<&str> = q
                    .candidates
                    .iter()
                    .filter(|c| c.label() == Some(true))
                    .map(|c| c.answer_id.as_str())
                    .collect();
                pred(&q.question_id, &ranking, &relevant)
            })
            .collect();
        let a = analyze(&preds, &ds).unwrap();
        assert!(a.recall_by_reference_rank.iter().all(|r| r.value == 1.0));
        assert!(a.accuracy_by_sentence_count.iter().all(|r| r.value == 1.0));
        assert_eq!(a.recall_by_reference_rank.iter().map(|r| r.count).sum::<usize>(), 5);
    }

    #[test]
    fn rejects_non_permutation() {
        let (ds, mut preds) = fixture();
        preds[0].ranking.pop();
        assert!(evaluate(&preds, &ds).is_err());
    }

    #[test]
    fn writes_csv_tables() {
        let (ds, preds) = fixture();
        let a = analyze(&preds, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_analysis_csv(dir.path(), &a).unwrap();
        let text = std::fs::read_to_string(dir.path().join("by_valid_answers.csv")).unwrap();
        assert!(text.starts_with("n_valid,count,accuracy,mean_rho\n"));
    }

    proptest! {
        #[test]
        fn reversal_negates(perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
            let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
            let y: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
            let rev: Vec<f64> = x.iter().rev().copied().collect();
            prop_assert!((spearman(&rev, &y) + spearman(&x, &y)).abs() < 1e-12);
        }

        #[test]
        fn mrr_is_order_invariant(pos in proptest::collection::vec(0usize..4, 1..6), shift in 0usize..6) {
            let qs: Vec<_> = pos
                .iter()
                .map(|&p| {
                    let r = ids(&["a", "b", "c", "d"]);
                    let l = r.iter().enumerate().map(|(i, id)| (id.clone(), i == p)).collect();
                    (r, l)
                })
                .collect();
            let mut rotated = qs.clone();
            rotated.rotate_left(shift % qs.len());
            prop_assert!((mrr(&qs).unwrap() - mrr(&rotated).unwrap()).abs() < 1e-12);
        }
    }
}
