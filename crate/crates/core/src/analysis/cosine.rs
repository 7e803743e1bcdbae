//! Average pairwise cosine similarity among answer-span rows.

use serde::{Deserialize, Serialize};

use super::pca::pca_fit_transform;
use super::trace::HiddenTrace;
use crate::error::{Error, Result};
use crate::metrics::pairwise_sum;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::contract("cosine of a zero-norm vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `1/(T_a² − T_a) · Σ_j Σ_{k≠j} cos(h_j, h_k)` over the rows of `rows`.
pub fn avg_answer_cosine(rows: &[Vec<f64>]) -> Result<f64> {
    let t = rows.len();
    if t < 2 {
        return Err(Error::contract(format!("average cosine needs at least 2 rows, got {t}")));
    }
    let mut terms = Vec::with_capacity(t * (t - 1) / 2);
    for j in 0..t {
        for k in j + 1..t {
            terms.push(cosine(&rows[j], &rows[k])?);
        }
    }
    // each unordered pair appears twice in the ordered double sum
    Ok(2.0 * pairwise_sum(&terms) / (t * t - t) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSample {
    pub id: String,
    /// 1-based layer index.
    pub layer: usize,
    pub value: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CosineDistributions {
    pub correct: Vec<CosineSample>,
    pub erroneous: Vec<CosineSample>,
    /// Traces skipped for a degenerate hidden matrix (zero variance or a
    /// zero answer row after projection).
    pub skipped: Vec<String>,
}

/// Traces eligible for the cosine analysis: answerable with a multi-token
/// gold span.
pub fn is_eligible(t: &HiddenTrace) -> bool {
    t.is_answerable() && t.answer_len() >= 2
}

/// Per trace: PCA on the whole unpadded layer matrix, then the average
/// cosine among the projected answer rows. `layer` is 1-based.
pub fn cosine_distributions(traces: &[HiddenTrace], layer: usize, variance_target: f64) -> Result<CosineDistributions> {
    let mut out = CosineDistributions::default();
    let eligible: Vec<&HiddenTrace> = traces.iter().filter(|t| is_eligible(t)).collect();
    if eligible.is_empty() {
        log::warn!("no answerable multi-token answers; cosine distributions are empty");
    }
    for t in eligible {
        if layer == 0 || layer > t.num_layers() {
            return Err(Error::contract(format!("layer {layer} outside 1..={}", t.num_layers())));
        }
        let value = pca_fit_transform(&t.layers[layer - 1], variance_target)
            .and_then(|(y, _)| avg_answer_cosine(&y[t.answer_span.0..=t.answer_span.1]));
        let value = match value {
            Ok(v) => v,
            Err(Error::Contract(msg)) => {
                log::warn!("skipping `{}` at layer {layer}: {msg}", t.id);
                out.skipped.push(t.id.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        let s = CosineSample {
            id: t.id.clone(),
            layer,
            value,
            correct: t.correct,
        };
        if t.correct {
            out.correct.push(s);
        } else {
            out.erroneous.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::trace::token_roles;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn naive(rows: &[Vec<f64>]) -> f64 {
        let t = rows.len();
        let mut s = 0.0;
        for j in 0..t {
            for k in 0..t {
                if j != k {
                    let dot: f64 = rows[j].iter().zip(&rows[k]).map(|(a, b)| a * b).sum();
                    let nj: f64 = rows[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                    let nk: f64 = rows[k].iter().map(|a| a * a).sum::<f64>().sqrt();
                    s += dot / (nj * nk);
                }
            }
        }
        s / (t * t - t) as f64
    }

    fn random_trace(rng: &mut ChaCha8Rng, id: usize, len: usize, d: usize, span: (usize, usize)) -> HiddenTrace {
        let layers = (0..2)
            .map(|_| {
                (0..len)
                    .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
                    .collect()
            })
            .collect();
        HiddenTrace {
            id: format!("t{id}"),
            layers,
            roles: token_roles(len, 3, span),
            answer_span: span,
            correct: id % 2 == 0,
            question_type: "how".into(),
            domain: 0,
            dataset: 0,
            subj_question: true,
            subj_answer: false,
        }
    }

    #[test]
    fn examples() {
        assert!((avg_answer_cosine(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap() - 1.0).abs() < 1e-15);
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        let v = avg_answer_cosine(&[e1.clone(), e1.clone(), e2.clone()]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        let a = vec![1.0, 2.0, -0.5];
        let b = vec![0.3, -1.0, 2.0];
        assert!((avg_answer_cosine(&[a.clone(), b.clone()]).unwrap() - cosine(&a, &b).unwrap()).abs() < 1e-15);
        assert!(avg_answer_cosine(&[e1.clone(), vec![0.0, 0.0]]).is_err());
        assert!(avg_answer_cosine(&[e1]).is_err());
    }

    #[test]
    fn pipeline_matches_naive_centered_cosines() {
        // at 100% variance PCA is a rotation of the centred rows
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for id in 0..20 {
            let len = 5 + id % 4;
            let d = 2 + id % 4;
            let span = (3, 3 + 1 + id % 2);
            let t = random_trace(&mut rng, id, len, d, span);
            let got = cosine_distributions(std::slice::from_ref(&t), 2, 1.0).unwrap();
            let h = &t.layers[1];
            let mean: Vec<f64> = (0..d).map(|j| h.iter().map(|r| r[j]).sum::<f64>() / len as f64).collect();
            let centred: Vec<Vec<f64>> = h[span.0..=span.1]
                .iter()
                .map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect())
                .collect();
            let all = got.correct.iter().chain(&got.erroneous).collect::<Vec<_>>();
            assert_eq!(all.len(), 1);
            assert!((all[0].value - naive(&centred)).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_and_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let single = random_trace(&mut rng, 0, 8, 4, (4, 4));
        let unanswerable = random_trace(&mut rng, 1, 8, 4, (0, 0));
        let d = cosine_distributions(&[single.clone(), unanswerable], 1, 0.95).unwrap();
        assert!(d.correct.is_empty() && d.erroneous.is_empty());
        let good = random_trace(&mut rng, 2, 8, 4, (4, 6));
        assert!(cosine_distributions(&[good.clone()], 3, 0.95).is_err());
        assert!(cosine_distributions(&[good.clone()], 0, 0.95).is_err());
        let d = cosine_distributions(&[good], 1, 0.95).unwrap();
        assert_eq!(d.correct.len(), 1);
        assert!(d.erroneous.is_empty());
    }

    proptest! {
        #[test]
        fn matches_naive_double_loop(rows in proptest::collection::vec(proptest::collection::vec(0.1f64..2.0, 3), 2..6)) {
            prop_assert!((avg_answer_cosine(&rows).unwrap() - naive(&rows)).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_rotation_and_scaling(
            rows in proptest::collection::vec(proptest::collection::vec(0.1f64..2.0, 2), 2..6),
            angle in 0.0f64..6.28,
            scale in 0.01f64..100.0,
        ) {
            let (c, s) = (angle.cos(), angle.sin());
            let moved: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| vec![scale * (c * r[0] - s * r[1]), scale * (s * r[0] + c * r[1])])
                .collect();
            let a = avg_answer_cosine(&rows).unwrap();
            let b = avg_answer_cosine(&moved).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
