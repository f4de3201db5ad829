//! Per-question inputs shared by the baseline and the joint model.

use crate::corpus::{CandidateAnswer, QuestionRecord};
use crate::error::{Error, Result};
use crate::preprocess::{split_sentences, Preprocessor, SentenceList};
use crate::retrieval::{EntailedCandidate, EntailmentIndex, RetrievalConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCandidate {
    pub answer: CandidateAnswer,
    pub sentences: SentenceList,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEntailed {
    pub hit: EntailedCandidate,
    pub sentences: SentenceList,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuestion {
    pub question_id: String,
    /// Normalized question text used as the retrieval query.
    pub text: String,
    pub candidates: Vec<PreparedCandidate>,
    /// Retrieved pairs, best first. Never empty.
    pub entailed: Vec<PreparedEntailed>,
}

/// Preprocessed answer sentences; an answer that is nothing but a trailer
/// keeps its raw sentences.
pub fn answer_sentences(pre: &Preprocessor, text: &str) -> SentenceList {
    let s = pre.answer(text);
    if s.is_empty() {
        split_sentences(text)
    } else {
        s
    }
}

pub fn prepare_question(
    question: &QuestionRecord,
    pre: &Preprocessor,
    index: &EntailmentIndex,
    retrieval: &RetrievalConfig,
) -> Result<PreparedQuestion> {
    let text = pre.question(&question.text);
    let candidates = question
        .candidates
        .iter()
        .map(|c| {
            let sentences = answer_sentences(pre, &c.text);
            if sentences.is_empty() {
                return Err(Error::InvalidQuestion {
                    question_id: question.question_id.clone(),
                    message: format!("answer {} has no text", c.answer_id),
                });
            }
            Ok(PreparedCandidate {
                answer: c.clone(),
                sentences,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let entailed = index
        .retrieve(&text, retrieval)?
        .into_iter()
        .map(|hit| {
            let sentences = answer_sentences(pre, &hit.pair.answer_text);
            if sentences.is_empty() {
                return Err(Error::InvalidRecord(format!("corpus pair {} has no answer text", hit.pair.pair_id)));
            }
            Ok(PreparedEntailed { hit, sentences })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedQuestion {
        question_id: question.question_id.clone(),
        text,
        candidates,
        entailed,
    })
}
