//! Span QA metrics (exact match, token F1), classification metrics and
//! grouped report tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::normalize_answer;

/// 1 when the normalized strings are equal, else 0.
pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Harmonic mean of bag-of-tokens precision and recall. Two empty bags
/// score 1, exactly one empty bag scores 0.
pub fn span_f1<T: AsRef<str>>(pred: &[T], gold: &[T]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *bag.entry(t.as_ref()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = bag.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// [`span_f1`] on normalized answer strings.
pub fn text_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    span_f1(&pt, &gt)
}

/// Per-class `2TP / (2TP + FP + FN)`, 0 when the denominator is 0.
pub fn per_class_f1(preds: &[usize], golds: &[usize], k: usize) -> Vec<f64> {
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    (0..k)
        .map(|c| {
            let den = 2 * tp[c] + fp[c] + fn_[c];
            if den == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / den as f64
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 over `k` classes.
pub fn macro_f1(preds: &[usize], golds: &[usize], k: usize) -> f64 {
    per_class_f1(preds, golds, k).iter().sum::<f64>() / k as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[gold][pred]`
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Rows divided by their sums; rows of absent classes stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

pub fn confusion(preds: &[usize], golds: &[usize], classes: &[String]) -> ConfusionMatrix {
    let k = classes.len();
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &g) in preds.iter().zip(golds) {
        counts[g][p] += 1;
    }
    ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    }
}

/// Round half to even at `decimals` places.
pub fn round_half_even(x: f64, decimals: i32) -> f64 {
    let m = 10f64.powi(decimals);
    let y = x * m;
    let r = y.round();
    // `round` goes away from zero on exact halves; pull those back to even
    if (y - y.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        (r - y.signum()) / m
    } else {
        r / m
    }
}

/// Pairwise (cascade) summation, independent of evaluation order within
/// fixed-size blocks.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// One scored QA prediction for grouped reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPrediction {
    pub group: String,
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    /// Percentages rounded half-even to two decimals.
    pub em: f64,
    pub f1: f64,
}

/// Per-group EM/F1 in percent, sorted by EM descending (then by name).
pub fn grouped_report(rows: &[ScoredPrediction]) -> Vec<GroupRow> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = groups.entry(r.group.as_str()).or_default();
        e.0.push(r.em);
        e.1.push(r.f1);
    }
    let mut out: Vec<GroupRow> = groups
        .into_iter()
        .map(|(g, (em, f1))| GroupRow {
            group: g.to_string(),
            n: em.len(),
            em: round_half_even(100.0 * pairwise_sum(&em) / em.len() as f64, 2),
            f1: round_half_even(100.0 * pairwise_sum(&f1) / f1.len() as f64, 2),
        })
        .collect();
    out.sort_by(|a, b| b.em.total_cmp(&a.em).then_with(|| a.group.cmp(&b.group)));
    out
}

pub fn report_csv(rows: &[GroupRow]) -> String {
    let mut s = String::from("group,n,em,f1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.2},{:.2}", r.group, r.n, r.em, r.f1);
    }
    s
}

pub fn report_text(rows: &[GroupRow]) -> String {
    let w = rows.iter().map(|r| r.group.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<w$}  {:>6}  {:>7}  {:>7}\n", "group", "n", "EM", "F1");
    for r in rows {
        let _ = writeln!(s, "{:<w$}  {:>6}  {:>7.2}  {:>7.2}", r.group, r.n, r.em, r.f1);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("the sound is decent", "the sound is decent"), 1.0);
        assert_eq!(exact_match("", ""), 1.0);
        assert_eq!(exact_match("sound is", "the sound is"), 0.0);
        assert_eq!(exact_match("The Sound!", "the sound"), 1.0);
    }

    #[test]
    fn f1_examples() {
        let f = text_f1("sound is decent", "the sound is decent");
        assert!((f - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(text_f1("great", "awful"), 0.0);
        assert_eq!(text_f1("same words", "same words"), 1.0);
        assert_eq!(text_f1("", ""), 1.0);
        assert_eq!(text_f1("x", ""), 0.0);
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 1, 0], &[0, 1, 1, 0], 2), 1.0);
        let golds: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
        let preds = vec![0; 100];
        let per = per_class_f1(&preds, &golds, 2);
        assert!((per[0] - 180.0 / 190.0).abs() < 1e-12);
        assert_eq!(per[1], 0.0);
        assert!((macro_f1(&preds, &golds, 2) - 90.0 / 190.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[1, 0, 1, 0], &[0, 1, 0, 1], 2), 0.0);
    }

    #[test]
    fn confusion_examples() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let c = confusion(&[0, 1, 2], &[0, 1, 2], &names);
        assert_eq!(c.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let c = confusion(&[0, 2, 2, 1], &[1, 1, 1, 1], &names);
        assert_eq!(c.counts.iter().filter(|r| r.iter().sum::<usize>() > 0).count(), 1);
        let preds = [0, 1, 1, 2, 0, 2, 2];
        let golds = [0, 1, 0, 2, 0, 1, 2];
        let c = confusion(&preds, &golds, &names);
        let n = c.normalized();
        // diagonal of the normalized matrix is per-class recall
        assert!((n[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((n[1][1] - 0.5).abs() < 1e-12);
        assert_eq!(n[2][2], 1.0);
        assert_eq!(c.total(), 7);
    }

    #[test]
    fn grouped_examples() {
        let rows = vec![
            ScoredPrediction { group: "how".into(), em: 1.0, f1: 1.0 },
            ScoredPrediction { group: "what".into(), em: 0.0, f1: 0.5 },
            ScoredPrediction { group: "how".into(), em: 1.0, f1: 1.0 },
            ScoredPrediction { group: "what".into(), em: 0.0, f1: 0.0 },
        ];
        let r = grouped_report(&rows);
        assert_eq!(r[0].group, "how");
        assert_eq!(r[0].em, 100.0);
        assert_eq!(r[1].f1, 25.0);
        let mean = (r[0].em * r[0].n as f64 + r[1].em * r[1].n as f64) / 4.0;
        assert_eq!(mean, 50.0);
        let one = grouped_report(&rows.iter().map(|r| ScoredPrediction { group: "books".into(), ..r.clone() }).collect::<Vec<_>>());
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].em, 50.0);
        assert!(report_csv(&r).starts_with("group,n,em,f1\nhow,2,100.00,100.00"));
        assert!(report_text(&r).contains("what"));
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(2.5, 0), 2.0);
        assert_eq!(round_half_even(3.5, 0), 4.0);
        assert_eq!(round_half_even(-2.5, 0), -2.0);
        assert_eq!(round_half_even(0.125, 2), 0.12);
        assert_eq!(round_half_even(76.934, 2), 76.93);
    }

    proptest! {
        #[test]
        fn f1_is_one_iff_same_multiset(a in proptest::collection::vec(0u8..4, 0..6), b in proptest::collection::vec(0u8..4, 0..6)) {
            let sa: Vec<String> = a.iter().map(|x| x.to_string()).collect();
            let sb: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            let mut x = a.clone();
            let mut y = b.clone();
            x.sort();
            y.sort();
            prop_assert_eq!(span_f1(&sa, &sb) == 1.0, x == y);
        }

        #[test]
        fn macro_f1_label_permutation_invariant(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..30)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let perm = [2, 0, 1];
            let pp: Vec<usize> = p.iter().map(|&x| perm[x]).collect();
            let gp: Vec<usize> = g.iter().map(|&x| perm[x]).collect();
            prop_assert!((macro_f1(&p, &g, 3) - macro_f1(&pp, &gp, 3)).abs() < 1e-12);
        }

        #[test]
        fn confusion_total_and_row_stochastic(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..30)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let names: Vec<String> = (0..3).map(|i| i.to_string()).collect();
            let c = confusion(&p, &g, &names);
            prop_assert_eq!(c.total(), p.len());
            for row in c.normalized() {
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
            }
        }
    }
}
