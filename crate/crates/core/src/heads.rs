//! Task-specific output layers, their losses, class weighting and the two
//! adversarial mechanisms (loss reversal and gradient reversal).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var, MASK_BIAS};
use crate::encoder::INIT_STD;
use crate::error::{Error, Result};
use crate::nn::linear;
use crate::params::{Init, Params};
use crate::tensor::{Scalar, Tensor};

pub const QA_HEAD: &str = "head.qa";
pub const SBJ_Q_HEAD: &str = "head.sbj_q";
pub const SBJ_A_HEAD: &str = "head.sbj_a";
pub const DOM_HEAD: &str = "head.dom";
pub const DATASET_HEAD: &str = "head.dataset";

pub const MAX_ANSWER_LEN: usize = 30;

/// How auxiliary branches are trained against the shared layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adversarial {
    #[default]
    None,
    /// The auxiliary loss is negated.
    Simple,
    /// A gradient reversal layer sits between shared layers and the head.
    Grl,
}

/// Adds a linear head `{prefix}.w` (`d_in × d_out`) and zero bias.
pub fn init_head<S: Scalar, R: Rng>(prefix: &str, d_in: usize, d_out: usize, params: &mut Params<S>, rng: &mut R) {
    params.init(&format!("{prefix}.w"), &[d_in, d_out], Init::Normal(INIT_STD), true, rng);
    params.init(&format!("{prefix}.b"), &[d_out], Init::Zeros, false, rng);
}

/// Start and end logits as 1×T rows; padded positions hold −1e9.
#[derive(Clone, Copy, Debug)]
pub struct QaLogits {
    pub start: Var,
    pub end: Var,
}

pub fn qa_forward<S: Scalar>(g: &mut Graph<S>, params: &Params<S>, states: Var, mask: &[bool]) -> Result<QaLogits> {
    let (t, _) = g.value(states).dims2();
    if mask.len() != t {
        return Err(Error::dim(format!("qa_forward: mask length {} for {t} rows", mask.len())));
    }
    let z = linear(g, params, QA_HEAD, states)?;
    let zt = g.transpose(z)?;
    let (start, end) = (g.slice_rows(zt, 0, 1)?, g.slice_rows(zt, 1, 1)?);
    if mask.iter().all(|&m| m) {
        return Ok(QaLogits { start, end });
    }
    let bias: Vec<S> = mask
        .iter()
        .map(|&m| if m { S::zero() } else { S::of(MASK_BIAS) })
        .collect();
    let b = g.constant(Tensor::new(vec![1, t], bias)?);
    Ok(QaLogits {
        start: g.add(start, b)?,
        end: g.add(end, b)?,
    })
}

/// `½·(CE(start) + CE(end))` for one example.
pub fn qa_loss<S: Scalar>(g: &mut Graph<S>, logits: QaLogits, y_start: usize, y_end: usize) -> Result<Var> {
    let t = g.value(logits.start).len();
    if y_start >= t || y_end >= t || y_start > y_end {
        return Err(Error::contract(format!(
            "qa_loss: gold span ({y_start}, {y_end}) invalid for {t} positions"
        )));
    }
    let a = g.cross_entropy(logits.start, &[y_start], None)?;
    let b = g.cross_entropy(logits.end, &[y_end], None)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, S::of(0.5)))
}

/// Best `(s, e)` with `1 ≤ s ≤ e < s + max_len` by `start[s] + end[e]`; the
/// null answer `(0, 0)` wins unless some span scores strictly higher.
/// Ties go to the lowest start, then the lowest end.
pub fn predict_span<S: Scalar>(start: &[S], end: &[S], max_len: usize) -> (usize, usize) {
    let t = start.len().min(end.len());
    if t == 0 {
        return (0, 0);
    }
    let null = start[0].as_f64() + end[0].as_f64();
    let mut best = (0, 0);
    let mut best_score = null;
    for s in 1..t {
        let ss = start[s].as_f64();
        for e in s..t.min(s + max_len) {
            let score = ss + end[e].as_f64();
            if score > best_score {
                best_score = score;
                best = (s, e);
            }
        }
    }
    best
}

/// Mean of the question-head and answer-head weighted binary cross-entropies.
pub fn subjectivity_loss<S: Scalar>(
    g: &mut Graph<S>,
    logits_q: Var,
    logits_a: Var,
    y_q: &[S],
    y_a: &[S],
    pos_weight: (S, S),
) -> Result<Var> {
    let a = g.bce_with_logits(logits_q, y_q, pos_weight.0)?;
    let b = g.bce_with_logits(logits_a, y_a, pos_weight.1)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, S::of(0.5)))
}

/// Class-weighted categorical cross-entropy, averaged over the batch.
pub fn domain_loss<S: Scalar>(g: &mut Graph<S>, logits: Var, y: &[usize], weights: &[S]) -> Result<Var> {
    if weights.iter().all(|w| *w == S::zero()) {
        log::warn!("domain_loss: every class weight is zero; the loss is identically 0");
    }
    g.cross_entropy(logits, y, Some(weights))
}

/// `w_k = 1 − n_k / N`.
pub fn compute_class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(Error::contract("compute_class_weights: need at least one counted example"));
    }
    Ok(counts.iter().map(|&n| (total - n) as f64 / total as f64).collect())
}

/// `n_neg / n_pos`, the factor applied to positive terms of the binary loss.
/// Falls back to 1 when either class is absent.
pub fn positive_weight(n_pos: usize, n_neg: usize) -> f64 {
    if n_pos == 0 || n_neg == 0 {
        1.0
    } else {
        n_neg as f64 / n_pos as f64
    }
}

pub fn reverse_loss<S: Scalar>(g: &mut Graph<S>, loss: Var) -> Var {
    g.neg(loss)
}

/// Identity forward; gradients flowing back into `states` are scaled by `−λ`.
pub fn grl_apply<S: Scalar>(g: &mut Graph<S>, states: Var, lambda: f64) -> Var {
    g.grad_reverse(states, S::of(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qa_params(d: usize, seed: u64) -> Params<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        init_head(QA_HEAD, d, 2, &mut p, &mut rng);
        p
    }

    #[test]
    fn zero_head_gives_zero_logits_and_null_span() {
        let mut p = qa_params(4, 1);
        p.get_mut("head.qa.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new();
        let s = g.input(Tensor::full(&[5, 4], 0.3));
        let l = qa_forward(&mut g, &p, s, &[true; 5]).unwrap();
        assert!(g.value(l.start).data().iter().all(|&v| v == 0.0));
        assert_eq!(predict_span(g.value(l.start).data(), g.value(l.end).data(), MAX_ANSWER_LEN), (0, 0));
    }

    #[test]
    fn qa_head_accepts_concatenated_width() {
        let p = qa_params(8 + 8, 2);
        let mut g = Graph::new();
        let s = g.input(Tensor::full(&[6, 16], 0.1));
        let l = qa_forward(&mut g, &p, s, &[true, true, true, true, false, false]).unwrap();
        assert_eq!(g.shape(l.start), &[1, 6]);
        assert!(g.value(l.end).data()[5] < MASK_BIAS / 2.0);
    }

    #[test]
    fn qa_loss_values() {
        let mut g = Graph::<f64>::new();
        let uni = g.input(Tensor::zeros(&[1, 10]));
        let l = qa_loss(&mut g, QaLogits { start: uni, end: uni }, 2, 4).unwrap();
        assert!((g.value(l).item() - 10f64.ln()).abs() < 1e-12);
        let mut peak = vec![0.0; 10];
        peak[3] = 1e4;
        let pk = g.input(Tensor::new(vec![1, 10], peak).unwrap());
        let l = qa_loss(&mut g, QaLogits { start: pk, end: pk }, 3, 3).unwrap();
        assert!(g.value(l).item() < 1e-9);
        assert!(qa_loss(&mut g, QaLogits { start: pk, end: pk }, 4, 3).is_err());
        assert!(qa_loss(&mut g, QaLogits { start: pk, end: pk }, 0, 10).is_err());
    }

    #[test]
    fn qa_loss_gradients() {
        let p = qa_params(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = grad_check_params(&p, |g, p| {
            let s = g.constant(Tensor::new(vec![5, 3], xs.clone())?);
            let l = qa_forward(g, p, s, &[true, true, true, true, false])?;
            qa_loss(g, l, 1, 3)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn qa_loss_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let perm = [3, 0, 5, 1, 4, 2];
        let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let inv = |i: usize| perm.iter().position(|&p| p == i).unwrap();
        let mut g = Graph::<f64>::new();
        let (sa, sb) = (g.input(Tensor::matrix(&[&a])), g.input(Tensor::matrix(&[&b])));
        let (ta, tb) = (g.input(Tensor::matrix(&[&pa])), g.input(Tensor::matrix(&[&pb])));
        let l1 = qa_loss(&mut g, QaLogits { start: sa, end: sb }, 1, 4).unwrap();
        let l2 = qa_loss(&mut g, QaLogits { start: ta, end: tb }, inv(1), inv(4).max(inv(1))).unwrap();
        // inv(1) = 3, inv(4) = 4, so the relabelled span stays ordered
        assert!((g.value(l1).item() - g.value(l2).item()).abs() < 1e-12);
    }

    fn brute_force(start: &[f64], end: &[f64], max_len: usize) -> (usize, usize) {
        let mut best = (0, 0);
        let mut score = start[0] + end[0];
        for s in 1..start.len() {
            for e in s..end.len() {
                if e - s < max_len && start[s] + end[e] > score {
                    score = start[s] + end[e];
                    best = (s, e);
                }
            }
        }
        best
    }

    #[test]
    fn span_decoding_examples() {
        let mut s = vec![0.0; 8];
        let mut e = vec![0.0; 8];
        s[3] = 5.0;
        e[5] = 5.0;
        assert_eq!(predict_span(&s, &e, MAX_ANSWER_LEN), (3, 5));
        let mut s0 = vec![0.0; 8];
        let mut e0 = vec![0.0; 8];
        s0[0] = 9.0;
        e0[0] = 9.0;
        assert_eq!(predict_span(&s0, &e0, MAX_ANSWER_LEN), (0, 0));
        // end peak before start peak
        let s = [0.0, 0.1, 0.2, 0.0, 4.0, 0.0];
        let e = [0.0, 0.3, 3.0, 0.0, 0.5, 0.1];
        assert_eq!(predict_span(&s, &e, MAX_ANSWER_LEN), brute_force(&s, &e, MAX_ANSWER_LEN));
        assert_eq!(predict_span(&s, &e, MAX_ANSWER_LEN), (4, 4));
    }

    proptest::proptest! {
        #[test]
        fn span_decoding_matches_enumeration(
            s in proptest::collection::vec(-3.0f64..3.0, 1..40),
            e in proptest::collection::vec(-3.0f64..3.0, 1..40),
            max_len in 1usize..35,
        ) {
            let t = s.len().min(e.len());
            proptest::prop_assert_eq!(predict_span(&s[..t], &e[..t], max_len), brute_force(&s[..t], &e[..t], max_len));
        }
    }

    #[test]
    fn subjectivity_loss_values() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::zeros(&[1]));
        let l = subjectivity_loss(&mut g, z, z, &[1.0], &[1.0], (1.0, 1.0)).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-12);
        let hi = g.input(Tensor::vector(&[50.0]));
        let lo = g.input(Tensor::vector(&[-50.0]));
        let l = subjectivity_loss(&mut g, hi, lo, &[1.0], &[0.0], (1.0, 1.0)).unwrap();
        assert!(g.value(l).item() < 1e-12);
        assert_eq!(positive_weight(100, 800), 8.0);
    }

    #[test]
    fn class_weights() {
        assert_eq!(compute_class_weights(&[900, 100]).unwrap(), vec![0.1, 0.9]);
        assert_eq!(compute_class_weights(&[500, 500]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(compute_class_weights(&[1000]).unwrap(), vec![0.0]);
        let w = compute_class_weights(&[600, 300, 100]).unwrap();
        for (a, b) in w.iter().zip([0.4, 0.7, 0.9]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(compute_class_weights(&[]).is_err());
    }

    #[test]
    fn domain_loss_values() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::zeros(&[2, 2]));
        let l = domain_loss(&mut g, z, &[0, 1], &[0.5, 0.5]).unwrap();
        assert!((g.value(l).item() - 0.5 * 2f64.ln()).abs() < 1e-12);
        let z1 = g.input(Tensor::zeros(&[3, 1]));
        let l = domain_loss(&mut g, z1, &[0, 0, 0], &[0.0]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn reverse_loss_negates_value_and_gradients() {
        let xs = Tensor::<f64>::matrix(&[&[0.2, -1.0, 0.7]]);
        let run = |rev: bool| {
            let mut g = Graph::new();
            let x = g.input(xs.clone());
            let l = g.cross_entropy(x, &[2], None).unwrap();
            let l = if rev { reverse_loss(&mut g, l) } else { l };
            g.backward(l).unwrap();
            (g.value(l).item(), g.grad(x).unwrap())
        };
        let (a, ga) = run(false);
        let (b, gb) = run(true);
        assert_eq!(a, -b);
        for (x, y) in ga.data().iter().zip(gb.data()) {
            assert_eq!(*x, -*y);
        }
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::scalar(0.7));
        let r = reverse_loss(&mut g, c);
        assert_eq!(g.value(r).item(), -0.7);
        let z = g.input(Tensor::scalar(0.0));
        let r = reverse_loss(&mut g, z);
        assert_eq!(g.value(r).item(), 0.0);
    }

    #[test]
    fn grl_forward_identity_and_scaled_backward() {
        let xs = Tensor::<f64>::matrix(&[&[0.3, -0.4], &[1.5, 0.2]]);
        for lambda in [0.0, 0.5, 1.0] {
            let mut g = Graph::new();
            let x = g.input(xs.clone());
            let y = grl_apply(&mut g, x, lambda);
            assert_eq!(g.value(y), g.value(x));
            let sq = g.mul(y, y).unwrap();
            let l = g.sum(sq);
            g.backward(l).unwrap();
            for (gr, v) in g.grad(x).unwrap().data().iter().zip(xs.data()) {
                assert_eq!(*gr, -lambda * 2.0 * v);
            }
        }
    }
}
