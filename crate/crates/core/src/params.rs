//! Named parameter store shared by every model component.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<S> {
    pub tensor: Tensor<S>,
    /// Whether decoupled weight decay applies (false for biases and norm gains).
    pub decay: bool,
}

/// Insertion-ordered parameter map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params<S> {
    order: Vec<String>,
    entries: BTreeMap<String, ParamEntry<S>>,
}

pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    Normal(f64),
    XavierUniform,
}

impl<S: Scalar> Params<S> {
    pub fn new() -> Self {
        Params {
            order: Vec::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<S>, decay: bool) {
        if self
            .entries
            .insert(name.to_string(), ParamEntry { tensor, decay })
            .is_none()
        {
            self.order.push(name.to_string());
        }
    }

    /// Creates a parameter drawing values at 64-bit so f32 and f64 models
    /// built from the same seed agree up to rounding.
    pub fn init<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, decay: bool, rng: &mut R) {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::XavierUniform => {
                let (fan_in, fan_out) = match shape {
                    [a, b] => (*a, *b),
                    [a] => (*a, *a),
                    _ => (n, n),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let d = Uniform::new_inclusive(-limit, limit).expect("valid range");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        let t = Tensor::from_f64(shape, &values).expect("init shape");
        self.insert(name, t, decay);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<S>> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<S>> {
        self.get(name)
            .ok_or_else(|| Error::Index(format!("unknown parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<S>)> {
        self.order
            .iter()
            .map(move |n| (n.as_str(), &self.entries[n.as_str()]))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Params<T> {
        let mut out = Params::new();
        for (name, e) in self.iter() {
            out.insert(name, e.tensor.cast(), e.decay);
        }
        out
    }
}
