//! `[CLS] q [SEP] x [SEP]` encoding with answer offsets mapped to tokens.

use serde::{Deserialize, Serialize};

use super::text::{tokenize, tokenize_with_offsets, Vocab, CLS, PAD, SEP};
use super::{QAExample, DEFAULT_LIKERT_THRESHOLD};
use crate::error::{Error, Result};

/// Second segment of the input pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPair {
    #[default]
    QuestionContext,
    QuestionAnswer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeOptions {
    pub max_len: usize,
    pub likert_threshold: u8,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            max_len: 128,
            likert_threshold: DEFAULT_LIKERT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub token_ids: Vec<usize>,
    /// Token strings aligned with `token_ids` (`[CLS]`/`[SEP]` included).
    pub tokens: Vec<String>,
    pub mask: Vec<bool>,
    pub gold_start: usize,
    pub gold_end: usize,
    /// Index of the first token of the second segment.
    pub segment_start: usize,
    pub subj_question: bool,
    pub subj_answer: bool,
    /// Second segment lost tokens to the length limit.
    pub truncated: bool,
    /// Truncation removed part of the gold span, so the target became (0, 0).
    pub span_lost: bool,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Pads ids with `[PAD]` and the mask with `false` up to `len`.
    pub fn padded(&self, len: usize) -> (Vec<usize>, Vec<bool>) {
        let mut ids = self.token_ids.clone();
        let mut mask = self.mask.clone();
        ids.resize(len.max(ids.len()), PAD);
        mask.resize(ids.len(), false);
        (ids, mask)
    }

    /// Surface text of tokens `start..=end`, empty for the `[CLS]` span.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        if start == 0 && end == 0 {
            return String::new();
        }
        self.tokens[start..=end.min(self.tokens.len() - 1)].join(" ")
    }
}

/// Encodes one example. Unanswerable examples target `(0, 0)`. When the
/// sequence exceeds `max_len` the second segment loses its tail; the
/// question is never shortened.
pub fn encode_example(
    ex: &QAExample,
    pair: InputPair,
    vocab: &Vocab,
    opts: &EncodeOptions,
) -> Result<EncodedExample> {
    let q = tokenize(&ex.question);
    let budget = opts.max_len.checked_sub(q.len() + 3).ok_or_else(|| Error::Validation {
        id: ex.id.clone(),
        message: format!(
            "question of {} tokens does not fit max_len {}",
            q.len(),
            opts.max_len
        ),
    })?;
    let seg_start = q.len() + 2;

    let (mut seg, span) = match pair {
        InputPair::QuestionContext => {
            let toks = tokenize_with_offsets(&ex.context);
            let span = if ex.is_answerable {
                let a = ex.answer_char_start as usize;
                let b = a + ex.answer.chars().count();
                let hit: Vec<usize> = toks
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.start < b && t.end > a)
                    .map(|(i, _)| i)
                    .collect();
                match (hit.first(), hit.last()) {
                    (Some(&s), Some(&e)) => Some((s, e)),
                    _ => {
                        return Err(Error::Validation {
                            id: ex.id.clone(),
                            message: format!("answer at char {a} covers no context token"),
                        })
                    }
                }
            } else {
                None
            };
            (toks.into_iter().map(|t| t.text).collect::<Vec<_>>(), span)
        }
        InputPair::QuestionAnswer => (tokenize(&ex.answer), None),
    };

    let truncated = seg.len() > budget;
    seg.truncate(budget);
    let (mut gold_start, mut gold_end, mut span_lost) = (0, 0, false);
    if let Some((s, e)) = span {
        if e < seg.len() {
            gold_start = seg_start + s;
            gold_end = seg_start + e;
        } else {
            span_lost = true;
        }
    }

    let mut tokens = Vec::with_capacity(q.len() + seg.len() + 3);
    tokens.push("[CLS]".to_string());
    tokens.extend(q);
    tokens.push("[SEP]".to_string());
    tokens.extend(seg);
    tokens.push("[SEP]".to_string());
    let token_ids: Vec<usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| match t.as_str() {
            "[CLS]" if i == 0 => CLS,
            "[SEP]" if i == seg_start - 1 || i == tokens.len() - 1 => SEP,
            _ => vocab.id(t),
        })
        .collect();
    Ok(EncodedExample {
        mask: vec![true; token_ids.len()],
        token_ids,
        tokens,
        gold_start,
        gold_end,
        segment_start: seg_start,
        subj_question: ex.question_subjective(opts.likert_threshold),
        subj_answer: ex.answer_subjective(opts.likert_threshold),
        truncated,
        span_lost,
    })
}
