//! Dataset schema, tokenizer, example encoding, synthetic corpora and
//! JSONL persistence.

mod encode;
mod jsonl;
mod split;
mod synthetic;
mod text;

pub use encode::{encode_example, EncodeOptions, EncodedExample, InputPair};
pub use jsonl::{load_jsonl, save_jsonl};
pub use split::{split_examples, SplitManifest, Splits};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use text::{normalize_answer, tokenize, tokenize_with_offsets, Token, Vocab, CLS, PAD, SEP, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six review domains of the subjective corpus.
pub const REVIEW_DOMAINS: [&str; 6] = ["books", "electronics", "grocery", "movies", "restaurants", "tripadvisor"];

/// Domain of every squad-like example; appended as the seventh class.
pub const WIKIPEDIA: &str = "wikipedia";

/// Likert scores strictly below this are subjective.
pub const DEFAULT_LIKERT_THRESHOLD: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetSource {
    #[serde(rename = "subj-like")]
    SubjLike,
    #[serde(rename = "squad-like")]
    SquadLike,
}

impl DatasetSource {
    pub fn index(self) -> usize {
        match self {
            DatasetSource::SubjLike => 0,
            DatasetSource::SquadLike => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answer: String,
    /// Character (not byte) offset of `answer` in `context`, −1 when unanswerable.
    pub answer_char_start: i64,
    pub is_answerable: bool,
    pub subj_question: u8,
    pub subj_answer: u8,
    pub domain: String,
    pub dataset_source: DatasetSource,
}

impl QAExample {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Validation {
                id: self.id.clone(),
                message,
            })
        };
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        if self.domain.is_empty() {
            return fail("empty domain".into());
        }
        for (field, v) in [("subj_question", self.subj_question), ("subj_answer", self.subj_answer)] {
            if !(1..=5).contains(&v) {
                return fail(format!("{field} = {v} is not a Likert score in 1..=5"));
            }
        }
        if self.is_answerable {
            if self.answer.is_empty() || self.answer_char_start < 0 {
                return fail("answerable example without an answer".into());
            }
            let start = self.answer_char_start as usize;
            let n = self.answer.chars().count();
            let found: String = self.context.chars().skip(start).take(n).collect();
            if found != self.answer {
                return fail(format!(
                    "answer not found at char offset {start}: context has {found:?}"
                ));
            }
        } else if !self.answer.is_empty() || self.answer_char_start != -1 {
            return fail("unanswerable example must have an empty answer at offset -1".into());
        }
        Ok(())
    }

    pub fn question_subjective(&self, threshold: u8) -> bool {
        self.subj_question < threshold
    }

    pub fn answer_subjective(&self, threshold: u8) -> bool {
        self.subj_answer < threshold
    }

    /// First question token, the grouping key for per-interrogative reports.
    pub fn interrogative(&self) -> String {
        tokenize(&self.question).into_iter().next().unwrap_or_default()
    }
}

/// Domain label set for a collection: the review domains in canonical
/// order, with `wikipedia` appended when any squad-like example is present,
/// followed by any other domain names in sorted order.
pub fn domain_labels(examples: &[QAExample]) -> Vec<String> {
    let mut labels: Vec<String> = REVIEW_DOMAINS.iter().map(|s| s.to_string()).collect();
    if examples.iter().any(|e| e.dataset_source == DatasetSource::SquadLike || e.domain == WIKIPEDIA) {
        labels.push(WIKIPEDIA.to_string());
    }
    let mut extra: Vec<String> = examples
        .iter()
        .map(|e| e.domain.clone())
        .filter(|d| !labels.contains(d))
        .collect();
    extra.sort();
    extra.dedup();
    labels.extend(extra);
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> QAExample {
        QAExample {
            id: "books-00000".into(),
            question: "How was the end?".into(),
            context: "I read it twice. The end was truly moving.".into(),
            answer: "truly moving".into(),
            answer_char_start: 29,
            is_answerable: true,
            subj_question: 2,
            subj_answer: 1,
            domain: "books".into(),
            dataset_source: DatasetSource::SubjLike,
        }
    }

    #[test]
    fn offset_invariant() {
        let ex = sample();
        assert!(ex.validate().is_ok());
        let bad = QAExample {
            answer_char_start: 3,
            ..sample()
        };
        assert!(matches!(bad.validate(), Err(Error::Validation { ref id, .. }) if id == "books-00000"));
        let unans = QAExample {
            answer: String::new(),
            answer_char_start: -1,
            is_answerable: false,
            ..sample()
        };
        assert!(unans.validate().is_ok());
        let likert = QAExample {
            subj_question: 0,
            ..sample()
        };
        assert!(likert.validate().is_err());
    }

    #[test]
    fn char_offsets_count_characters_not_bytes() {
        let ex = QAExample {
            context: "Café crème is rich.".into(),
            answer: "crème".into(),
            answer_char_start: 5,
            ..sample()
        };
        assert!(ex.validate().is_ok());
    }

    #[test]
    fn likert_boundary_is_objective() {
        let ex = sample();
        assert!(ex.question_subjective(DEFAULT_LIKERT_THRESHOLD));
        let three = QAExample {
            subj_question: 3,
            ..sample()
        };
        assert!(!three.question_subjective(DEFAULT_LIKERT_THRESHOLD));
    }

    #[test]
    fn interrogative_word() {
        let ex = QAExample {
            question: "How good is the camera in low light?".into(),
            ..sample()
        };
        assert_eq!(ex.interrogative(), "how");
    }

    #[test]
    fn wikipedia_becomes_seventh_label() {
        let mut exs = vec![sample()];
        assert_eq!(domain_labels(&exs).len(), 6);
        exs.push(QAExample {
            domain: WIKIPEDIA.into(),
            dataset_source: DatasetSource::SquadLike,
            ..sample()
        });
        let labels = domain_labels(&exs);
        assert_eq!(labels.len(), 7);
        assert_eq!(labels[6], WIKIPEDIA);
    }
}
