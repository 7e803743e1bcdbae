//! Hard parameter sharing: one encoder (plus optional post-encoder) feeding
//! every task head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{encode_example, EncodeOptions, EncodedExample, InputPair, QAExample, Vocab};
use crate::encoder::{encode, init_params as init_encoder, EncodedSequence, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{
    domain_loss, grl_apply, init_head, predict_span, qa_forward, qa_loss, reverse_loss, subjectivity_loss,
    Adversarial, QaLogits, DATASET_HEAD, DOM_HEAD, MAX_ANSWER_LEN, SBJ_A_HEAD, SBJ_Q_HEAD,
};
use crate::nn::{linear, Mode};
use crate::params::Params;
use crate::post::PostEncoder;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qa,
    Sbj,
    Dom,
    Dataset,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::Sbj => "sbj",
            Task::Dom => "dom",
            Task::Dataset => "dataset",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s.trim() {
            "qa" => Ok(Task::Qa),
            "sbj" => Ok(Task::Sbj),
            "dom" => Ok(Task::Dom),
            "dataset" => Ok(Task::Dataset),
            other => Err(Error::config("tasks", format!("unknown task `{other}`"))),
        }
    }

    pub fn is_auxiliary(self) -> bool {
        self != Task::Qa
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub post: PostEncoder,
    pub tasks: Vec<Task>,
    pub num_domains: usize,
    pub adversarial: Adversarial,
    pub grl_lambda: f64,
    /// Width of the auxiliary probability vector appended to every token
    /// row before the QA head (0 disables it).
    pub soft_target_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            encoder: EncoderConfig::default(),
            post: PostEncoder::Identity,
            tasks: vec![Task::Qa],
            num_domains: 6,
            adversarial: Adversarial::None,
            grl_lambda: 1.0,
            soft_target_dim: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !self.tasks.contains(&Task::Qa) {
            return Err(Error::config("tasks", "qa is the main task and must be present"));
        }
        let mut sorted = self.tasks.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.tasks.len() {
            return Err(Error::config("tasks", "duplicate task"));
        }
        if self.adversarial != Adversarial::None && !self.tasks.iter().any(|t| t.is_auxiliary()) {
            return Err(Error::config("adversarial", "adversarial training needs an auxiliary task"));
        }
        if self.num_domains == 0 {
            return Err(Error::config("num_domains", "must be at least 1"));
        }
        if !self.grl_lambda.is_finite() || self.grl_lambda < 0.0 {
            return Err(Error::config("grl_lambda", "must be a non-negative number"));
        }
        Ok(())
    }

    pub fn has(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }

    pub fn qa_input_dim(&self) -> usize {
        self.encoder.hidden_size + self.soft_target_dim
    }
}

/// One encoded input with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Gold answer text, empty when unanswerable.
    pub answer: String,
    pub enc: EncodedExample,
    pub domain: usize,
    pub dataset: usize,
    /// Auxiliary probability vector used when `soft_target_dim > 0`.
    pub soft: Option<Vec<f64>>,
}

/// Per-run loss constants for the auxiliary heads.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub domain: Vec<f64>,
    pub sbj_pos: (f64, f64),
    pub dataset_pos: f64,
}

impl LossWeights {
    pub fn uniform(num_domains: usize) -> Self {
        LossWeights {
            domain: vec![1.0; num_domains],
            sbj_pos: (1.0, 1.0),
            dataset_pos: 1.0,
        }
    }
}

/// Sigmoid and softmax outputs of the auxiliary heads for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxProbs {
    pub sbj: [f64; 2],
    pub dom: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S: Scalar> {
    pub spec: ModelSpec,
    pub params: Params<S>,
}

impl Sample {
    /// Encodes `ex` with its domain index looked up in `domains`.
    pub fn from_example(
        ex: &QAExample,
        pair: InputPair,
        vocab: &Vocab,
        domains: &[String],
        opts: &EncodeOptions,
    ) -> Result<Sample> {
        let domain = domains.iter().position(|d| *d == ex.domain).ok_or_else(|| Error::Validation {
            id: ex.id.clone(),
            message: format!("domain `{}` is not among the {} model domains", ex.domain, domains.len()),
        })?;
        Ok(Sample {
            id: ex.id.clone(),
            answer: ex.answer.clone(),
            enc: encode_example(ex, pair, vocab, opts)?,
            domain,
            dataset: ex.dataset_source.index(),
            soft: None,
        })
    }
}

/// Loss actually minimised (negated under loss reversal) and the plain
/// task loss for logging.
#[derive(Clone, Copy, Debug)]
pub struct TaskLoss {
    pub objective: Var,
    pub raw: Var,
}

impl<S: Scalar> Model<S> {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.encoder.seed);
        let mut params = Params::new();
        init_encoder(&spec.encoder, &mut params, &mut rng);
        let d = spec.encoder.hidden_size;
        spec.post.init_params(d, &mut params, &mut rng);
        init_head(crate::heads::QA_HEAD, spec.qa_input_dim(), 2, &mut params, &mut rng);
        if spec.has(Task::Sbj) {
            init_head(SBJ_Q_HEAD, d, 1, &mut params, &mut rng);
            init_head(SBJ_A_HEAD, d, 1, &mut params, &mut rng);
        }
        if spec.has(Task::Dom) {
            init_head(DOM_HEAD, d, spec.num_domains, &mut params, &mut rng);
        }
        if spec.has(Task::Dataset) {
            init_head(DATASET_HEAD, d, 1, &mut params, &mut rng);
        }
        Ok(Model { spec, params })
    }

    /// Names of parameters shared by every task.
    pub fn is_shared(name: &str) -> bool {
        name.starts_with("enc.") || name.starts_with("post.")
    }

    /// Encoder plus post-encoder output for one input.
    pub fn shared(
        &self,
        g: &mut Graph<S>,
        enc: &EncodedExample,
        mode: &mut Mode,
    ) -> Result<(EncodedSequence, Var)> {
        let seq = encode(g, &self.params, &self.spec.encoder, &enc.token_ids, &enc.mask, mode)?;
        let states = self.spec.post.apply(g, &self.params, seq.last(), &enc.mask, mode)?;
        Ok((seq, states))
    }

    fn qa_states(&self, g: &mut Graph<S>, sample: &Sample, states: Var) -> Result<Var> {
        let k = self.spec.soft_target_dim;
        if k == 0 {
            return Ok(states);
        }
        let p = sample
            .soft
            .as_ref()
            .ok_or_else(|| Error::contract("QA input needs a soft-target vector for this model"))?;
        if p.len() != k {
            return Err(Error::dim(format!("soft target of length {} for width {k}", p.len())));
        }
        let (t, _) = g.value(states).dims2();
        let rows: Vec<f64> = (0..t).flat_map(|_| p.iter().copied()).collect();
        let c = g.constant(Tensor::from_f64(&[t, k], &rows)?);
        g.concat_cols(&[states, c])
    }

    pub fn qa_logits(&self, g: &mut Graph<S>, sample: &Sample, mode: &mut Mode) -> Result<QaLogits> {
        let (_, states) = self.shared(g, &sample.enc, mode)?;
        let x = self.qa_states(g, sample, states)?;
        qa_forward(g, &self.params, x, &sample.enc.mask)
    }

    /// Stacked classification vectors (n×D) of a batch, behind a GRL when
    /// that adversarial mode is active.
    fn class_inputs(&self, g: &mut Graph<S>, batch: &[&Sample], mode: &mut Mode) -> Result<Var> {
        let mut rows = Vec::with_capacity(batch.len());
        for s in batch {
            let (_, states) = self.shared(g, &s.enc, mode)?;
            rows.push(self.spec.post.class_vector(g, states, &s.enc.mask)?);
        }
        let x = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        Ok(match self.spec.adversarial {
            Adversarial::Grl => grl_apply(g, x, self.spec.grl_lambda),
            _ => x,
        })
    }

    /// Mean loss of `task` over `batch`. Auxiliary losses follow the
    /// configured adversarial mode; QA never does.
    pub fn task_loss(
        &self,
        g: &mut Graph<S>,
        task: Task,
        batch: &[&Sample],
        weights: &LossWeights,
        mode: &mut Mode,
    ) -> Result<TaskLoss> {
        if batch.is_empty() {
            return Err(Error::contract("task_loss: empty batch"));
        }
        if !self.spec.has(task) {
            return Err(Error::contract(format!("task `{}` has no head in this model", task.name())));
        }
        if task == Task::Qa {
            let mut total: Option<Var> = None;
            for s in batch {
                let logits = self.qa_logits(g, s, mode)?;
                let l = qa_loss(g, logits, s.enc.gold_start, s.enc.gold_end)?;
                total = Some(match total {
                    Some(t) => g.add(t, l)?,
                    None => l,
                });
            }
            let total = total.expect("non-empty batch");
            let l = g.scale(total, S::of(1.0 / batch.len() as f64));
            return Ok(TaskLoss { objective: l, raw: l });
        }
        let x = self.class_inputs(g, batch, mode)?;
        let loss = match task {
            Task::Sbj => {
                let zq = linear(g, &self.params, SBJ_Q_HEAD, x)?;
                let za = linear(g, &self.params, SBJ_A_HEAD, x)?;
                let yq: Vec<S> = batch.iter().map(|s| bool_label(s.enc.subj_question)).collect();
                let ya: Vec<S> = batch.iter().map(|s| bool_label(s.enc.subj_answer)).collect();
                let pw = (S::of(weights.sbj_pos.0), S::of(weights.sbj_pos.1));
                subjectivity_loss(g, zq, za, &yq, &ya, pw)?
            }
            Task::Dom => {
                let z = linear(g, &self.params, DOM_HEAD, x)?;
                let y: Vec<usize> = batch.iter().map(|s| s.domain).collect();
                let w: Vec<S> = weights.domain.iter().map(|&v| S::of(v)).collect();
                domain_loss(g, z, &y, &w)?
            }
            Task::Dataset => {
                let z = linear(g, &self.params, DATASET_HEAD, x)?;
                let y: Vec<S> = batch.iter().map(|s| S::of(s.dataset as f64)).collect();
                g.bce_with_logits(z, &y, S::of(weights.dataset_pos))?
            }
            Task::Qa => unreachable!(),
        };
        let objective = match self.spec.adversarial {
            Adversarial::Simple => reverse_loss(g, loss),
            _ => loss,
        };
        Ok(TaskLoss { objective, raw: loss })
    }

    /// Eval-mode span prediction and QA loss for one sample.
    pub fn predict(&self, sample: &Sample) -> Result<Prediction> {
        let mut g = Graph::new();
        let logits = self.qa_logits(&mut g, sample, &mut Mode::Eval)?;
        let (s, e) = predict_span(g.value(logits.start).data(), g.value(logits.end).data(), MAX_ANSWER_LEN);
        let loss = qa_loss(&mut g, logits, sample.enc.gold_start, sample.enc.gold_end)?;
        Ok(Prediction {
            start: s,
            end: e,
            loss: g.value(loss).item().as_f64(),
        })
    }

    /// Subjectivity probabilities (question, answer) and the domain
    /// distribution for one input, in eval mode.
    pub fn aux_probs(&self, enc: &EncodedExample) -> Result<AuxProbs> {
        let mut g = Graph::new();
        let (_, states) = self.shared(&mut g, enc, &mut Mode::Eval)?;
        let x = self.spec.post.class_vector(&mut g, states, &enc.mask)?;
        let mut sbj = [0.5, 0.5];
        if self.spec.has(Task::Sbj) {
            for (slot, head) in sbj.iter_mut().zip([SBJ_Q_HEAD, SBJ_A_HEAD]) {
                let z = linear(&mut g, &self.params, head, x)?;
                let p = g.sigmoid(z);
                *slot = g.value(p).item().as_f64();
            }
        }
        let dom = if self.spec.has(Task::Dom) {
            let z = linear(&mut g, &self.params, DOM_HEAD, x)?;
            let p = g.softmax(z, 1)?;
            g.value(p).to_f64_vec()
        } else {
            vec![1.0 / self.spec.num_domains as f64; self.spec.num_domains]
        };
        Ok(AuxProbs { sbj, dom })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }
}

fn bool_label<S: Scalar>(b: bool) -> S {
    if b {
        S::one()
    } else {
        S::zero()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub start: usize,
    pub end: usize,
    pub loss: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use crate::data::DatasetSource;

    pub(crate) fn tiny_spec(post: PostEncoder, tasks: Vec<Task>) -> ModelSpec {
        ModelSpec {
            encoder: EncoderConfig {
                vocab_size: 40,
                max_seq_len: 16,
                hidden_size: 8,
                num_layers: 2,
                num_heads: 2,
                ffn_size: 8,
                dropout_rate: 0.0,
                seed: 3,
            },
            post,
            tasks,
            num_domains: 3,
            ..ModelSpec::default()
        }
    }

    fn sample() -> Sample {
        let ex = QAExample {
            id: "x".into(),
            question: "How is it?".into(),
            context: "Great sound overall.".into(),
            answer: "Great sound".into(),
            answer_char_start: 0,
            is_answerable: true,
            subj_question: 1,
            subj_answer: 4,
            domain: "electronics".into(),
            dataset_source: DatasetSource::SubjLike,
        };
        let v = Vocab::build([ex.question.as_str(), ex.context.as_str()], None);
        let enc = encode_example(&ex, InputPair::QuestionContext, &v, &EncodeOptions::default()).unwrap();
        assert_eq!(enc.len(), 4 + 4 + 3);
        Sample {
            id: ex.id.clone(),
            answer: ex.answer.clone(),
            enc,
            domain: 1,
            dataset: 0,
            soft: None,
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = tiny_spec(PostEncoder::Identity, vec![Task::Sbj]);
        assert!(matches!(s.validate(), Err(Error::Config { ref field, .. }) if field == "tasks"));
        s.tasks = vec![Task::Qa];
        s.adversarial = Adversarial::Grl;
        assert!(matches!(s.validate(), Err(Error::Config { ref field, .. }) if field == "adversarial"));
        s.tasks.push(Task::Dom);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn full_composition_gradients() {
        let s = sample();
        for post in [PostEncoder::Identity, PostEncoder::Highway, PostEncoder::Bilstm] {
            let model: Model<f64> = Model::new(tiny_spec(post, vec![Task::Qa, Task::Sbj, Task::Dom])).unwrap();
            let w = LossWeights {
                domain: vec![0.2, 0.5, 0.3],
                sbj_pos: (2.0, 0.5),
                dataset_pos: 1.0,
            };
            for task in [Task::Qa, Task::Sbj, Task::Dom] {
                let m = Model {
                    spec: model.spec.clone(),
                    params: model.params.clone(),
                };
                let report = grad_check_params(&model.params, |g, p| {
                    let mm = Model {
                        spec: m.spec.clone(),
                        params: p.clone(),
                    };
                    Ok(mm.task_loss(g, task, &[&s, &s], &w, &mut Mode::Eval)?.objective)
                })
                .unwrap();
                assert!(report.max_rel_err < 1e-3, "{post:?} {task:?} {report:?}");
            }
        }
    }

    #[test]
    fn soft_targets_widen_qa_input() {
        let mut spec = tiny_spec(PostEncoder::Identity, vec![Task::Qa]);
        spec.soft_target_dim = 5;
        let model: Model<f32> = Model::new(spec).unwrap();
        assert_eq!(model.params.get("head.qa.w").unwrap().shape(), &[13, 2]);
        let mut s = sample();
        assert!(matches!(model.predict(&s), Err(Error::Contract(_))));
        s.soft = Some(vec![1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(model.predict(&s).is_ok());
    }

    #[test]
    fn aux_probabilities_are_well_formed() {
        let model: Model<f32> = Model::new(tiny_spec(PostEncoder::Bilstm, vec![Task::Qa, Task::Sbj, Task::Dom])).unwrap();
        let p = model.aux_probs(&sample().enc).unwrap();
        assert!(p.sbj.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((p.dom.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
