//! Fine-tuning loop: task sampling with batch alternation, AdamW with a
//! warm-up schedule, periodic evaluation, early stopping and best-model
//! tracking.

mod early_stop;
mod optim;
mod sampler;
mod transfer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use early_stop::{early_stop_check, save_best, Cadence, SaveOutcome, StopDecision};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState, AdamW};
pub use sampler::{make_batches, sample_task, task_probabilities, BatchStream, Sampler};
pub use transfer::{
    compute_soft_targets, oracle_targets, sequential_transfer, SoftTargets, TargetMode, TransferOutcome,
};

use crate::autodiff::Graph;
use crate::data::{EncodeOptions, InputPair, QAExample, Vocab};
use crate::error::{Error, Result};
use crate::heads::{compute_class_weights, positive_weight};
use crate::metrics::{exact_match, pairwise_sum, text_f1};
use crate::model::{LossWeights, Model, Sample, Task};
use crate::nn::Mode;
use crate::params::Params;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Defaults to 10% of the total step count.
    pub warmup_steps: Option<usize>,
    pub eval_cadence: Cadence,
    pub patience: usize,
    pub early_stopping: bool,
    pub sampler: Sampler,
    /// Input pair fed to the subjectivity heads.
    pub sbj_input: InputPair,
    pub weight_decay: f64,
    /// Hard cap on optimizer steps; the schedule spans the capped run.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 5e-5,
            warmup_steps: None,
            eval_cadence: Cadence::TenPerEpoch,
            patience: 5,
            early_stopping: true,
            sampler: Sampler::Uniform,
            sbj_input: InputPair::QuestionAnswer,
            weight_decay: 0.01,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("{} is not a positive finite rate", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be positive"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(n);
        self.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn warmup(&self, total: usize) -> usize {
        self.warmup_steps.unwrap_or(total / 10)
    }
}

/// One split encoded both ways: `qc` holds question/context inputs used by
/// QA, domain and dataset heads; `qa` holds question/answer inputs for the
/// subjectivity heads. Both are index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub qc: Vec<Sample>,
    pub qa: Vec<Sample>,
}

impl TaskData {
    pub fn encode(examples: &[QAExample], vocab: &Vocab, domains: &[String], opts: &EncodeOptions) -> Result<Self> {
        let enc = |pair| {
            examples
                .iter()
                .map(|ex| Sample::from_example(ex, pair, vocab, domains, opts))
                .collect::<Result<Vec<_>>>()
        };
        Ok(TaskData {
            qc: enc(InputPair::QuestionContext)?,
            qa: enc(InputPair::QuestionAnswer)?,
        })
    }

    pub fn len(&self) -> usize {
        self.qc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qc.is_empty()
    }

    /// Samples a batch for `task` is drawn from (batch alternation).
    pub fn pool(&self, task: Task, sbj_input: InputPair) -> &[Sample] {
        if task == Task::Sbj && sbj_input == InputPair::QuestionAnswer {
            &self.qa
        } else {
            &self.qc
        }
    }

    /// Class weights and positive-class factors from label counts.
    pub fn loss_weights(&self, num_domains: usize) -> Result<LossWeights> {
        if self.is_empty() {
            return Ok(LossWeights::uniform(num_domains));
        }
        let mut dom = vec![0usize; num_domains];
        for s in &self.qc {
            *dom.get_mut(s.domain)
                .ok_or_else(|| Error::contract(format!("domain index {} ≥ {num_domains}", s.domain)))? += 1;
        }
        let n = self.len();
        let count = |f: &dyn Fn(&Sample) -> bool| self.qc.iter().filter(|s| f(s)).count();
        let q = count(&|s| s.enc.subj_question);
        let a = count(&|s| s.enc.subj_answer);
        let d = count(&|s| s.dataset == 1);
        Ok(LossWeights {
            domain: compute_class_weights(&dom)?,
            sbj_pos: (positive_weight(q, n - q), positive_weight(a, n - a)),
            dataset_pos: positive_weight(d, n - d),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

/// One metric-log line. Training records carry the raw task loss of the
/// step; dev records carry the full-pass validation loss, plus EM/F1 when
/// the evaluated task is QA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub task: Task,
    pub loss: f64,
    pub lr: f64,
    pub split: Split,
    pub em: Option<f64>,
    pub f1: Option<f64>,
}

/// Serializes a metric log as JSON lines.
pub fn metric_log_jsonl(log: &[MetricRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub prediction: String,
    pub gold: String,
    pub em: f64,
    pub f1: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    /// Percentages.
    pub em: f64,
    pub f1: f64,
    pub examples: Vec<ExampleResult>,
}

/// Full eval-mode QA pass over `samples`.
pub fn evaluate<S: Scalar>(model: &Model<S>, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::contract("evaluate: empty evaluation set"));
    }
    let mut examples = Vec::with_capacity(samples.len());
    for s in samples {
        let p = model.predict(s)?;
        let prediction = s.enc.span_text(p.start, p.end);
        examples.push(ExampleResult {
            id: s.id.clone(),
            start: p.start,
            end: p.end,
            em: exact_match(&prediction, &s.answer),
            f1: text_f1(&prediction, &s.answer),
            prediction,
            gold: s.answer.clone(),
            loss: p.loss,
        });
    }
    let n = examples.len() as f64;
    let col = |f: fn(&ExampleResult) -> f64| pairwise_sum(&examples.iter().map(f).collect::<Vec<_>>()) / n;
    Ok(EvalReport {
        loss: col(|e| e.loss),
        em: 100.0 * col(|e| e.em),
        f1: 100.0 * col(|e| e.f1),
        examples,
    })
}

/// Mean eval-mode loss of an auxiliary task over `samples`, in batches.
pub fn aux_eval_loss<S: Scalar>(
    model: &Model<S>,
    task: Task,
    samples: &[Sample],
    weights: &LossWeights,
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("aux_eval_loss: empty evaluation set"));
    }
    let mut terms = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let refs: Vec<&Sample> = chunk.iter().collect();
        let l = model.task_loss(&mut g, task, &refs, weights, &mut Mode::Eval)?;
        terms.push(g.value(l.raw).item().as_f64() * chunk.len() as f64);
    }
    Ok(pairwise_sum(&terms) / samples.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Restored to the parameters of the best evaluation.
    pub model: Model<f32>,
    pub log: Vec<MetricRecord>,
    pub best_dev_loss: f64,
    pub best_step: usize,
    pub steps: usize,
    pub stopped_early: bool,
    /// Steps dropped because a gradient was non-finite.
    pub skipped_steps: usize,
}

/// Called with the model each time the validation loss hits a new minimum.
pub type BestHook<'a> = &'a mut dyn FnMut(&Model<f32>) -> Result<()>;

/// Trains every task in `model.spec.tasks` with QA as the main task.
pub fn train(
    model: Model<f32>,
    train: &TaskData,
    dev: &TaskData,
    cfg: &TrainConfig,
    on_best: Option<BestHook>,
) -> Result<TrainOutcome> {
    let tasks = model.spec.tasks.clone();
    run_stage(model, Task::Qa, &tasks, train, dev, cfg, 0, on_best)
}

/// One training run over `tasks`; validation loss of `primary` drives
/// early stopping and best-model selection. Logged steps start after
/// `step_offset`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_stage(
    mut model: Model<f32>,
    primary: Task,
    tasks: &[Task],
    train: &TaskData,
    dev: &TaskData,
    cfg: &TrainConfig,
    step_offset: usize,
    mut on_best: Option<BestHook>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if dev.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    for &t in tasks {
        if !model.spec.has(t) {
            return Err(Error::config("tasks", format!("task `{}` has no head in this model", t.name())));
        }
    }
    let steps_per_epoch = cfg.steps_per_epoch(train.len());
    let total = cfg.total_steps(train.len());
    let warmup = cfg.warmup(total);
    lr_schedule(0, warmup, total, cfg.lr)?;
    let weights = train.loss_weights(model.spec.num_domains)?;
    let interval = cfg.eval_cadence.interval(steps_per_epoch);

    let mut task_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream(1);
    let mut streams = Vec::with_capacity(tasks.len());
    for (i, &t) in tasks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2 + i as u64);
        streams.push(BatchStream::new(train.pool(t, cfg.sbj_input).len(), cfg.batch_size, rng)?);
    }
    let mut opt = AdamW::new(AdamConfig {
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });

    let mut log = Vec::new();
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_step = 0;
    let mut best_params: Option<Params<f32>> = None;
    let mut stopped_early = false;
    let mut skipped = 0;
    let mut steps = 0;

    for step in 1..=total {
        let ti = if tasks.len() == 1 {
            0
        } else {
            let t = sample_task(cfg.sampler, tasks, &mut task_rng)?;
            tasks.iter().position(|&x| x == t).expect("sampled from tasks")
        };
        let task = tasks[ti];
        let pool = train.pool(task, cfg.sbj_input);
        let batch: Vec<&Sample> = streams[ti].next_batch().into_iter().map(|i| &pool[i]).collect();
        let lr = lr_schedule(step, warmup, total, cfg.lr)?;

        let mut g = Graph::<f32>::new();
        let loss = model.task_loss(&mut g, task, &batch, &weights, &mut Mode::Train(&mut drop_rng))?;
        g.backward(loss.objective)?;
        match opt.step(&mut model.params, &g.param_grads(), lr) {
            Ok(()) => {}
            Err(Error::NonFinite(msg)) => {
                log::warn!("step {}: skipped update, non-finite {msg}", step_offset + step);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
        log.push(MetricRecord {
            step: step_offset + step,
            task,
            loss: g.value(loss.raw).item().as_f64(),
            lr,
            split: Split::Train,
            em: None,
            f1: None,
        });
        steps = step;

        if step % interval != 0 && step != total {
            continue;
        }
        let (dev_loss, em, f1) = if primary == Task::Qa {
            let r = evaluate(&model, &dev.qc)?;
            (r.loss, Some(r.em), Some(r.f1))
        } else {
            let l = aux_eval_loss(&model, primary, dev.pool(primary, cfg.sbj_input), &weights, cfg.batch_size)?;
            (l, None, None)
        };
        log.push(MetricRecord {
            step: step_offset + step,
            task: primary,
            loss: dev_loss,
            lr,
            split: Split::Dev,
            em,
            f1,
        });
        history.push(dev_loss);
        let hook = &mut on_best;
        let saved = save_best(dev_loss, best, || match hook {
            Some(f) => f(&model),
            None => Ok(()),
        });
        if saved.written {
            best_params = Some(model.params.clone());
            best_step = step_offset + step;
        }
        if let Some(e) = saved.error {
            log::error!("could not store best model at step {}: {e}", step_offset + step);
        }
        best = saved.best;
        if cfg.early_stopping
            && step > steps_per_epoch
            && early_stop_check(&history, cfg.eval_cadence, cfg.patience) == StopDecision::Stop
        {
            log::info!("early stop at step {} (epoch {})", step_offset + step, step.div_ceil(steps_per_epoch));
            stopped_early = true;
            break;
        }
    }
    if let Some(p) = best_params {
        model.params = p;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_dev_loss: best,
        best_step,
        steps,
        stopped_early,
        skipped_steps: skipped,
    })
}
