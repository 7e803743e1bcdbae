//! Seeded train/dev/test partition and its manifest.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QAExample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    pub test: Vec<QAExample>,
}

/// Ids per split, written next to the JSONL files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn manifest(&self, seed: u64, fractions: [f64; 3]) -> SplitManifest {
        let ids = |v: &[QAExample]| v.iter().map(|e| e.id.clone()).collect();
        SplitManifest {
            seed,
            fractions,
            train: ids(&self.train),
            dev: ids(&self.dev),
            test: ids(&self.test),
        }
    }
}

/// Shuffles with `seed` and cuts at `round(n·f_train)` and `round(n·f_dev)`;
/// the test split takes the remainder.
pub fn split_examples(examples: &[QAExample], fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("split", format!("fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = examples.iter().find(|e| !seen.insert(e.id.as_str())) {
        return Err(Error::Validation {
            id: dup.id.clone(),
            message: "duplicate id".into(),
        });
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = examples.len();
    let n_train = (n as f64 * fractions[0]).round() as usize;
    let n_dev = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| examples[i].clone()).collect();
    Ok(Splits {
        train: take(0..n_train),
        dev: take(n_train..n_train + n_dev),
        test: take(n_train + n_dev..n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use proptest::prelude::*;
    use std::collections::HashSet;

    proptest! {
        #[test]
        fn splits_are_disjoint_and_sized(n in 3usize..60, seed in 0u64..1000) {
            let exs = generate_synthetic(&SyntheticConfig {
                domains: vec!["books".into()],
                n_per_domain: n,
                ..SyntheticConfig::default()
            });
            let fr = [0.8, 0.1, 0.1];
            let s = split_examples(&exs, fr, seed).unwrap();
            let ids = |v: &[QAExample]| v.iter().map(|e| e.id.clone()).collect::<HashSet<_>>();
            let (a, b, c) = (ids(&s.train), ids(&s.dev), ids(&s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            prop_assert_eq!(a.len() + b.len() + c.len(), n);
            for (got, f) in [(a.len(), fr[0]), (b.len(), fr[1]), (c.len(), fr[2])] {
                prop_assert!((got as f64 - f * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(split_examples(&[], [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn manifest_lists_ids() {
        let exs = generate_synthetic(&SyntheticConfig {
            n_per_domain: 10,
            ..SyntheticConfig::default()
        });
        let s = split_examples(&exs, [0.8, 0.1, 0.1], 3).unwrap();
        let m = s.manifest(3, [0.8, 0.1, 0.1]);
        assert_eq!(m.train.len() + m.dev.len() + m.test.len(), 60);
        assert_eq!(s, split_examples(&exs, [0.8, 0.1, 0.1], 3).unwrap());
    }
}
