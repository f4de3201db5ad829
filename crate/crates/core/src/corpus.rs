//! Ranked-answer datasets, the supporting QA corpus, and relevance labels.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};

pub const MAX_CANDIDATES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub answer_id: String,
    pub text: String,
    /// Site the answer was taken from.
    pub source: String,
    /// Position assigned by the upstream QA system.
    pub system_rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_rank: Option<u32>,
    /// Manual judgment, 1 (incorrect) to 4 (excellent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_score: Option<i64>,
}

impl CandidateAnswer {
    /// Binary relevance, when a reference score is present.
    pub fn label(&self) -> Option<bool> {
        self.reference_score.and_then(|s| derive_label(s).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub text: String,
    pub candidates: Vec<CandidateAnswer>,
}

impl QuestionRecord {
    pub fn validate(&self, require_references: bool) -> Result<()> {
        let fail = |message: String| Error::InvalidQuestion {
            question_id: self.question_id.clone(),
            message,
        };
        if self.candidates.is_empty() {
            return Err(fail("candidate list is empty".into()));
        }
        if self.candidates.len() > MAX_CANDIDATES {
            return Err(fail(format!(
                "{} candidates, at most {MAX_CANDIDATES} allowed",
                self.candidates.len()
            )));
        }
        let mut ids = HashSet::new();
        let mut ranks = HashSet::new();
        for c in &self.candidates {
            if !ids.insert(c.answer_id.as_str()) {
                return Err(fail(format!("duplicate answer_id {}", c.answer_id)));
            }
            if c.system_rank < 1 {
                return Err(fail(format!("answer {}: system_rank must be >= 1", c.answer_id)));
            }
            if let Some(score) = c.reference_score {
                derive_label(score).map_err(|_| {
                    fail(format!(
                        "answer {}: reference_score {score} outside 1..=4",
                        c.answer_id
                    ))
                })?;
            }
            if let Some(rank) = c.reference_rank {
                if rank < 1 {
                    return Err(fail(format!("answer {}: reference_rank must be >= 1", c.answer_id)));
                }
                if !ranks.insert(rank) {
                    return Err(fail(format!("reference_rank {rank} is tied")));
                }
            }
            if require_references && (c.reference_rank.is_none() || c.reference_score.is_none()) {
                return Err(fail(format!(
                    "answer {} lacks reference_rank or reference_score",
                    c.answer_id
                )));
            }
        }
        Ok(())
    }

    pub fn candidate(&self, answer_id: &str) -> Option<&CandidateAnswer> {
        self.candidates.iter().find(|c| c.answer_id == answer_id)
    }

    /// True when every candidate carries a reference rank.
    pub fn is_ranked(&self) -> bool {
        self.candidates.iter().all(|c| c.reference_rank.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub pair_id: String,
    pub question_text: String,
    pub answer_text: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    /// Train and validation questions must carry reference ranks and scores.
    pub fn requires_references(self) -> bool {
        !matches!(self, Split::Test)
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: Split,
    pub questions: Vec<QuestionRecord>,
}

impl Dataset {
    pub fn new(split: Split, questions: Vec<QuestionRecord>) -> Result<Self> {
        let mut ids = HashSet::new();
        for q in &questions {
            if !ids.insert(q.question_id.as_str()) {
                return Err(Error::InvalidQuestion {
                    question_id: q.question_id.clone(),
                    message: "duplicate question_id".into(),
                });
            }
            q.validate(split.requires_references())?;
        }
        Ok(Self { split, questions })
    }

    pub fn question(&self, question_id: &str) -> Option<&QuestionRecord> {
        self.questions.iter().find(|q| q.question_id == question_id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.questions)
    }
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let records: Vec<(usize, QuestionRecord)> = read_jsonl(path)?;
    Dataset::new(split, records.into_iter().map(|(_, q)| q).collect())
}

/// Loads the QA corpus. File order is kept; retrieval breaks ties by it.
pub fn load_qa_corpus(path: &Path) -> Result<Vec<QAPair>> {
    #[derive(Deserialize)]
    struct RawPair {
        pair_id: Option<String>,
        question_text: Option<String>,
        answer_text: Option<String>,
        #[serde(default)]
        source: String,
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in read_jsonl::<RawPair>(path)? {
        let invalid = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let pair_id = raw.pair_id.ok_or_else(|| invalid("missing pair_id".into()))?;
        let question_text = raw
            .question_text
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| invalid(format!("pair {pair_id}: missing question_text")))?;
        let answer_text = raw
            .answer_text
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| invalid(format!("pair {pair_id}: missing answer_text")))?;
        if !seen.insert(pair_id.clone()) {
            return Err(invalid(format!("duplicate pair_id {pair_id}")));
        }
        out.push(QAPair {
            pair_id,
            question_text,
            answer_text,
            source: raw.source,
        });
    }
    Ok(out)
}

pub fn save_qa_corpus(path: &Path, pairs: &[QAPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// Scores 3 (correct but incomplete) and 4 (excellent) are relevant; 1 and 2 are not.
pub fn derive_label(reference_score: i64) -> Result<bool> {
    match reference_score {
        1 | 2 => Ok(false),
        3 | 4 => Ok(true),
        other => Err(Error::ScoreOutOfRange(other)),
    }
}
