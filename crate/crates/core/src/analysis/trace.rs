//! Per-layer hidden-state capture with token roles.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::Result;
use crate::metrics::exact_match;
use crate::model::{Model, Sample};
use crate::nn::Mode;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenRole {
    Cls,
    Question,
    Sep,
    Context,
    Answer,
}

/// Hidden states of one input at every encoder layer, padding removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenTrace {
    pub id: String,
    /// `layers[l]` is the `T'×D` output of layer `l + 1`.
    pub layers: Vec<Vec<Vec<f64>>>,
    pub roles: Vec<TokenRole>,
    /// Inclusive gold token span; `(0, 0)` when unanswerable.
    pub answer_span: (usize, usize),
    /// Predicted span is an exact match of the gold answer.
    pub correct: bool,
    /// First question token (the interrogative word).
    pub question_type: String,
    pub domain: usize,
    pub dataset: usize,
    pub subj_question: bool,
    pub subj_answer: bool,
}

impl HiddenTrace {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn is_answerable(&self) -> bool {
        self.answer_span != (0, 0)
    }

    pub fn answer_len(&self) -> usize {
        self.answer_span.1 - self.answer_span.0 + 1
    }
}

/// Role of every position of an encoded `[CLS] q [SEP] x [SEP]` input; the
/// gold span overrides, so an unanswerable input has its answer at 0.
pub fn token_roles(len: usize, segment_start: usize, span: (usize, usize)) -> Vec<TokenRole> {
    let mut roles: Vec<TokenRole> = (0..len)
        .map(|i| {
            if i == 0 {
                TokenRole::Cls
            } else if i + 1 == segment_start || i + 1 == len {
                TokenRole::Sep
            } else if i < segment_start {
                TokenRole::Question
            } else {
                TokenRole::Context
            }
        })
        .collect();
    for r in &mut roles[span.0..=span.1] {
        *r = TokenRole::Answer;
    }
    roles
}

/// Eval-mode forward pass per sample recording every encoder block output
/// (the embedding output is not included).
pub fn capture_traces<S: Scalar>(model: &Model<S>, samples: &[Sample]) -> Result<Vec<HiddenTrace>> {
    samples.iter().map(|s| capture_one(model, s)).collect()
}

fn capture_one<S: Scalar>(model: &Model<S>, s: &Sample) -> Result<HiddenTrace> {
    let mut g = Graph::new();
    let (seq, _) = model.shared(&mut g, &s.enc, &mut Mode::Eval)?;
    let keep: Vec<usize> = (0..s.enc.len()).filter(|&i| s.enc.mask[i]).collect();
    let layers = seq
        .states(&g)
        .iter()
        .skip(1)
        .map(|t| keep.iter().map(|&i| t.row(i).iter().map(|v| v.as_f64()).collect()).collect())
        .collect();
    let pred = model.predict(s)?;
    let span = (s.enc.gold_start, s.enc.gold_end);
    Ok(HiddenTrace {
        id: s.id.clone(),
        layers,
        roles: token_roles(keep.len(), s.enc.segment_start, span),
        answer_span: span,
        correct: exact_match(&s.enc.span_text(pred.start, pred.end), &s.answer) == 1.0,
        question_type: s.enc.tokens.get(1).cloned().unwrap_or_default(),
        domain: s.domain,
        dataset: s.dataset,
        subj_question: s.enc.subj_question,
        subj_answer: s.enc.subj_answer,
    })
}
