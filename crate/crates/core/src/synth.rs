//! Seeded synthetic datasets whose relevance and ranks follow from topic
//! overlap with a planted corpus answer.

use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_qa_corpus, CandidateAnswer, Dataset, QAPair, QuestionRecord, Split};
use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub questions: usize,
    pub seed: u64,
    pub min_candidates: usize,
    pub max_candidates: usize,
    /// Topic tokens planted per question.
    pub topic_tokens: usize,
    /// Content tokens per candidate sentence (topic plus noise).
    pub sentence_tokens: usize,
    /// Corpus pairs about topics no question asks about.
    pub distractor_pairs: usize,
    pub noise_pool: usize,
    /// Probability that a candidate gets an extra filler sentence.
    pub filler_probability: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            questions: 200,
            seed: 0,
            min_candidates: 3,
            max_candidates: 6,
            topic_tokens: 6,
            sentence_tokens: 8,
            distractor_pairs: 50,
            noise_pool: 300,
            filler_probability: 0.3,
            test_fraction: 0.2,
        }
    }
}

pub const CANDIDATE_SOURCES: [&str; 3] = ["healthsite", "medlib", "clinicnet"];
pub const CORPUS_SOURCES: [&str; 2] = ["faqbank", "askdoc"];

const FILLERS: [&str; 6] = [
    "Please consult a physician for advice.",
    "More information is available online.",
    "Symptoms can vary between patients.",
    "Treatment depends on the individual case.",
    "Ask your pharmacist about interactions.",
    "Follow up if the problem persists.",
];

/// Relevance grade from the number of shared topic tokens.
pub fn score_for_overlap(overlap: usize) -> i64 {
    match overlap {
        0 => 1,
        1 | 2 => 2,
        3 | 4 => 3,
        _ => 4,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub train: Dataset,
    pub test: Dataset,
    pub corpus: Vec<QAPair>,
}

fn capitalized(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        s.replace_range(..1, &first.to_uppercase());
    }
    s
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.questions < 2 {
            return bad("synth needs at least two questions");
        }
        if self.min_candidates < 2 || self.min_candidates > self.max_candidates || self.max_candidates > 10 {
            return bad("candidate counts must satisfy 2 <= min <= max <= 10");
        }
        if self.topic_tokens < 3 || self.max_candidates > self.topic_tokens + 1 {
            return bad("need at least 3 topic tokens and one distinct overlap per candidate");
        }
        if self.sentence_tokens < self.topic_tokens || self.noise_pool < self.sentence_tokens {
            return bad("sentence length must fit every topic token and the noise pool must fill a sentence");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SynthOutput> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise: Vec<String> = (0..self.noise_pool).map(|i| format!("n{i:03}x")).collect();
        let mut corpus = Vec::new();
        let mut questions = Vec::new();
        let topic = |q: usize, t: usize| format!("t{q:03}w{t}");

        for d in 0..self.distractor_pairs {
            let words: Vec<String> = noise.choose_multiple(&mut rng, self.topic_tokens).cloned().collect();
            corpus.push(QAPair {
                pair_id: format!("d{d:03}"),
                question_text: format!("What about {}?", words.join(" ")),
                answer_text: format!("{} are described here.", capitalized(&words)),
                source: CORPUS_SOURCES[rng.gen_range(0..CORPUS_SOURCES.len())].into(),
            });
        }

        for q in 0..self.questions {
            let topics: Vec<String> = (0..self.topic_tokens).map(|t| topic(q, t)).collect();
            let half = self.topic_tokens / 2;
            corpus.push(QAPair {
                pair_id: format!("p{q:03}"),
                question_text: format!("What about {}?", topics.join(" ")),
                answer_text: format!("{} are described here.", capitalized(&topics)),
                source: CORPUS_SOURCES[rng.gen_range(0..CORPUS_SOURCES.len())].into(),
            });

            let n = rng.gen_range(self.min_candidates..=self.max_candidates);
            // two relevant overlaps (>= 3), the rest from what remains
            let mut high: Vec<usize> = (3..=self.topic_tokens).collect();
            high.shuffle(&mut rng);
            let mut overlaps: Vec<usize> = high[..2].to_vec();
            let rest: Vec<usize> = (0..=self.topic_tokens).filter(|k| !overlaps.contains(k)).collect();
            overlaps.extend(rest.into_iter().choose_multiple(&mut rng, n - 2));
            overlaps.sort_unstable_by(|a, b| b.cmp(a));

            // system rank: reference order perturbed by noise
            let mut noisy: Vec<(f64, usize)> = (0..n).map(|i| (i as f64 + rng.gen_range(-1.5..1.5), i)).collect();
            noisy.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut system_rank = vec![0u32; n];
            for (pos, &(_, i)) in noisy.iter().enumerate() {
                system_rank[i] = pos as u32 + 1;
            }

            let mut candidates = Vec::with_capacity(n);
            for (i, &k) in overlaps.iter().enumerate() {
                let mut words: Vec<String> = topics.choose_multiple(&mut rng, k).cloned().collect();
                words.extend(noise.choose_multiple(&mut rng, self.sentence_tokens - k).cloned());
                words.shuffle(&mut rng);
                let mut text = format!("{}.", capitalized(&words));
                if rng.gen_bool(self.filler_probability) {
                    text.push(' ');
                    text.push_str(FILLERS[rng.gen_range(0..FILLERS.len())]);
                }
                candidates.push(CandidateAnswer {
                    answer_id: format!("q{q:03}a{i}"),
                    text,
                    source: CANDIDATE_SOURCES[rng.gen_range(0..CANDIDATE_SOURCES.len())].into(),
                    system_rank: system_rank[i],
                    reference_rank: Some(i as u32 + 1),
                    reference_score: Some(score_for_overlap(k)),
                });
            }
            candidates.sort_by_key(|c| c.system_rank);
            questions.push(QuestionRecord {
                question_id: format!("q{q:03}"),
                text: format!(
                    "How is {} related to {}?",
                    topics[..half].join(" "),
                    topics[half..].join(" ")
                ),
                candidates,
            });
        }
        corpus.shuffle(&mut rng);

        let n_test = ((self.questions as f64) * self.test_fraction).round() as usize;
        let test = questions.split_off(self.questions - n_test);
        Ok(SynthOutput {
            train: Dataset::new(Split::Train, questions)?,
            test: Dataset::new(Split::Test, test)?,
            corpus,
        })
    }
}

impl SynthOutput {
    /// Writes `train.jsonl`, `test.jsonl` and `corpus.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.train.save(&dir.join("train.jsonl"))?;
        self.test.save(&dir.join("test.jsonl"))?;
        save_qa_corpus(&dir.join("corpus.jsonl"), &self.corpus)
    }
}
