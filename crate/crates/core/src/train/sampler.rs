//! Per-step task sampling and shuffled mini-batch streams.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Task;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Every task equally likely.
    #[default]
    Uniform,
    /// QA with probability 2/3, the rest split evenly among auxiliaries.
    Oversampling,
}

impl Sampler {
    pub fn parse(s: &str) -> Result<Sampler> {
        match s.trim() {
            "uniform" => Ok(Sampler::Uniform),
            "oversampling" => Ok(Sampler::Oversampling),
            other => Err(Error::config("sampler", format!("unknown sampler `{other}`"))),
        }
    }
}

/// Draw probabilities aligned with `tasks`.
pub fn task_probabilities(sampler: Sampler, tasks: &[Task]) -> Result<Vec<f64>> {
    if tasks.is_empty() {
        return Err(Error::contract("task set is empty"));
    }
    let n = tasks.len() as f64;
    let n_aux = tasks.iter().filter(|t| t.is_auxiliary()).count();
    let has_qa = n_aux < tasks.len();
    Ok(match sampler {
        Sampler::Oversampling if has_qa && n_aux > 0 => tasks
            .iter()
            .map(|t| if t.is_auxiliary() { 1.0 / (3.0 * n_aux as f64) } else { 2.0 / 3.0 })
            .collect(),
        _ => vec![1.0 / n; tasks.len()],
    })
}

pub fn sample_task(sampler: Sampler, tasks: &[Task], rng: &mut ChaCha8Rng) -> Result<Task> {
    let probs = task_probabilities(sampler, tasks)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (t, p) in tasks.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return Ok(*t);
        }
    }
    Ok(*tasks.last().expect("non-empty"))
}

/// Shuffled index batches of size `b` covering `0..n` once; the last batch
/// may be smaller.
pub fn make_batches(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::contract("cannot batch an empty dataset"));
    }
    if b == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(b).map(<[usize]>::to_vec).collect())
}

/// Endless batch source: walks one shuffled epoch, reshuffles, repeats.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    b: usize,
    rng: ChaCha8Rng,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl BatchStream {
    pub fn new(n: usize, b: usize, rng: ChaCha8Rng) -> Result<Self> {
        let mut s = BatchStream {
            n,
            b,
            rng,
            pending: Vec::new().into_iter(),
        };
        s.pending = make_batches(n, b, &mut s.rng)?.into_iter();
        Ok(s)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if let Some(batch) = self.pending.next() {
            return batch;
        }
        self.pending = make_batches(self.n, self.b, &mut self.rng)
            .expect("validated at construction")
            .into_iter();
        self.pending.next().expect("at least one batch")
    }
}
