//! Sequential transfer: domain stage, subjectivity stage, then QA with the
//! auxiliary probability vectors appended to every token state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{run_stage, BestHook, MetricRecord, TaskData, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::heads::Adversarial;
use crate::model::{Model, ModelSpec, Sample, Task};
use crate::tensor::Scalar;

/// Number of subjectivity probabilities (question, answer).
pub const SBJ_TARGETS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Sigmoid/softmax outputs of the trained auxiliary heads.
    #[default]
    Soft,
    /// Gold labels: 0/1 subjectivity and a one-hot domain.
    Oracle,
}

impl TargetMode {
    pub fn parse(s: &str) -> Result<TargetMode> {
        match s.trim() {
            "soft" => Ok(TargetMode::Soft),
            "oracle" | "hard" => Ok(TargetMode::Oracle),
            other => Err(Error::config("targets", format!("unknown target mode `{other}`"))),
        }
    }
}

/// Per-example vectors `[p_q, p_a, p_dom…]` keyed by example id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SoftTargets {
    pub mode: TargetMode,
    pub num_domains: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl SoftTargets {
    pub fn dim(&self) -> usize {
        SBJ_TARGETS + self.num_domains
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("no soft target stored for example `{id}`")))
    }

    /// Sets `soft` on every sample; any missing id is a contract error.
    pub fn attach(&self, samples: &mut [Sample]) -> Result<()> {
        for s in samples.iter_mut() {
            s.soft = Some(self.get(&s.id)?.to_vec());
        }
        Ok(())
    }

    pub fn attach_all(&self, data: &mut TaskData) -> Result<()> {
        self.attach(&mut data.qc)?;
        self.attach(&mut data.qa)
    }
}

/// Eval-mode auxiliary probabilities for each sample's own input pair.
pub fn compute_soft_targets<S: Scalar>(model: &Model<S>, samples: &[Sample]) -> Result<SoftTargets> {
    let mut vectors = BTreeMap::new();
    for s in samples {
        let p = model.aux_probs(&s.enc)?;
        let mut v = p.sbj.to_vec();
        v.extend(p.dom);
        vectors.insert(s.id.clone(), v);
    }
    Ok(SoftTargets {
        mode: TargetMode::Soft,
        num_domains: model.spec.num_domains,
        vectors,
    })
}

pub fn oracle_targets(samples: &[Sample], num_domains: usize) -> Result<SoftTargets> {
    let mut vectors = BTreeMap::new();
    for s in samples {
        if s.domain >= num_domains {
            return Err(Error::contract(format!("domain index {} ≥ {num_domains} for `{}`", s.domain, s.id)));
        }
        let mut v = vec![0.0; SBJ_TARGETS + num_domains];
        v[0] = f64::from(u8::from(s.enc.subj_question));
        v[1] = f64::from(u8::from(s.enc.subj_answer));
        v[SBJ_TARGETS + s.domain] = 1.0;
        vectors.insert(s.id.clone(), v);
    }
    Ok(SoftTargets {
        mode: TargetMode::Oracle,
        num_domains,
        vectors,
    })
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    /// Outcome of the final QA stage; its log and step count cover all
    /// three stages.
    pub outcome: TrainOutcome,
    /// Targets for the training, validation and extra scored samples.
    pub targets: SoftTargets,
}

/// Trains the domain head, then the subjectivity heads, stores auxiliary
/// targets for every sample in `train`, `dev` and `extra` (question/context
/// inputs), and finally trains QA on states widened by those targets.
pub fn sequential_transfer(
    spec: ModelSpec,
    train: &TaskData,
    dev: &TaskData,
    extra: &[Sample],
    cfg: &TrainConfig,
    mode: TargetMode,
    on_best: Option<BestHook>,
) -> Result<TransferOutcome> {
    if spec.adversarial != Adversarial::None {
        return Err(Error::config("adversarial", "sequential transfer trains without adversarial objectives"));
    }
    let spec = ModelSpec {
        tasks: vec![Task::Qa, Task::Sbj, Task::Dom],
        soft_target_dim: SBJ_TARGETS + spec.num_domains,
        ..spec
    };
    let model = Model::<f32>::new(spec)?;

    let dom = run_stage(model, Task::Dom, &[Task::Dom], train, dev, cfg, 0, None)?;
    let mut log: Vec<MetricRecord> = dom.log;
    let sbj = run_stage(dom.model, Task::Sbj, &[Task::Sbj], train, dev, cfg, dom.steps, None)?;
    log.extend(sbj.log);
    let offset = dom.steps + sbj.steps;
    let model = sbj.model;

    let mut seen = std::collections::HashSet::new();
    let scored: Vec<Sample> = train
        .qc
        .iter()
        .chain(&dev.qc)
        .chain(extra)
        .filter(|s| seen.insert(s.id.clone()))
        .cloned()
        .collect();
    let targets = match mode {
        TargetMode::Soft => compute_soft_targets(&model, &scored)?,
        TargetMode::Oracle => oracle_targets(&scored, model.spec.num_domains)?,
    };
    let mut train_qa = train.clone();
    let mut dev_qa = dev.clone();
    targets.attach_all(&mut train_qa)?;
    targets.attach_all(&mut dev_qa)?;

    let mut qa = run_stage(model, Task::Qa, &[Task::Qa], &train_qa, &dev_qa, cfg, offset, on_best)?;
    log.append(&mut qa.log);
    qa.log = log;
    qa.steps += offset;
    Ok(TransferOutcome { outcome: qa, targets })
}
