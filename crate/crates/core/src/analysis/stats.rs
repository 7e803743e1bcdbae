//! Two-sample t-tests, Bonferroni correction and distribution summaries.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::metrics::pairwise_sum;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    /// Student t with pooled variance.
    #[default]
    Pooled,
    /// Welch t with Welch–Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub df: f64,
    /// Both samples have zero variance but different means: `t` is
    /// infinite and `p` is reported as 0.
    pub zero_variance: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = pairwise_sum(x) / n;
    let ss: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    (m, pairwise_sum(&ss) / (n - 1.0))
}

/// Two-sided p-value of Student's t with `df` degrees of freedom:
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Independent two-sample t-test (pooled variance).
pub fn t_test_ind(a: &[f64], b: &[f64]) -> Result<TTest> {
    t_test(a, b, TTestKind::Pooled)
}

pub fn t_test(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::contract(format!(
            "t-test needs at least two samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se2, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            (sp2 * (1.0 / na + 1.0 / nb), df)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let den = qa * qa / (na - 1.0) + qb * qb / (nb - 1.0);
            (se2, if den > 0.0 { se2 * se2 / den } else { na + nb - 2.0 })
        }
    };
    let diff = ma - mb;
    if se2 == 0.0 {
        if diff == 0.0 {
            return Err(Error::contract("t statistic undefined: both samples constant with equal means"));
        }
        return Ok(TTest {
            t: diff.signum() * f64::INFINITY,
            p: 0.0,
            df,
            zero_variance: true,
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTest {
        t,
        p: t_two_sided_p(t, df),
        df,
        zero_variance: false,
    })
}

/// `min(1, p·m)` elementwise.
pub fn bonferroni(p_raw: &[f64], m: usize) -> Vec<f64> {
    p_raw.iter().map(|p| (p * m as f64).min(1.0)).collect()
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary with 1.5×IQR whiskers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn box_summary(values: &[f64]) -> Option<BoxSummary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.75));
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| (lo..=hi).contains(v)).collect();
    Some(BoxSummary {
        n: s.len(),
        mean: pairwise_sum(&s) / s.len() as f64,
        min: s[0],
        q1,
        median,
        q3,
        max: s[s.len() - 1],
        whisker_low: inside.first().copied().unwrap_or(median),
        whisker_high: inside.last().copied().unwrap_or(median),
        outliers: s.iter().copied().filter(|v| !(lo..=hi).contains(v)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts normalised to integrate to 1 (all zero for no data).
    pub density: Vec<f64>,
}

pub const HISTOGRAM_BINS: usize = 41;

/// Equal-width bins over `[lo, hi]`; the top edge belongs to the last bin
/// and values outside the range are clamped into the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram {
    let w = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + w * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / w).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = values.len() as f64;
    let density = counts
        .iter()
        .map(|&c| if values.is_empty() { 0.0 } else { c as f64 / (n * w) })
        .collect();
    Histogram { edges, counts, density }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = t_test_ind(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_sequences() {
        let r = t_test_ind(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.p - 0.34659350708733416).abs() < 1e-10);
        assert_eq!(r.df, 8.0);
    }

    #[test]
    fn welch_reference() {
        let r = t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 9.0], TTestKind::Welch).unwrap();
        assert!((r.t + 1.1428571428571426).abs() < 1e-12);
        assert!((r.p - 0.2937254912355017).abs() < 1e-8);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(t_test_ind(&[1.0, 1.0], &[1.0, 1.0]).is_err());
        let r = t_test_ind(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(r.zero_variance && r.p == 0.0 && r.t == f64::NEG_INFINITY);
        assert!(t_test_ind(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(&[0.008], 6), vec![0.048]);
        assert_eq!(bonferroni(&[0.5], 6), vec![1.0]);
        assert_eq!(bonferroni(&[0.2, 0.03], 1), vec![0.2, 0.03]);
    }

    #[test]
    fn histogram_binning() {
        let h = histogram(&[-1.0, 0.0, 1.0, 0.999, -0.999], HISTOGRAM_BINS, -1.0, 1.0);
        assert_eq!(h.edges.len(), 42);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[40], 2);
        assert_eq!(h.counts[20], 1);
        let w = 2.0 / 41.0;
        assert!((h.density.iter().sum::<f64>() * w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_summary_whiskers() {
        let b = box_summary(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.0, 3.0, 4.0));
        assert_eq!(b.whisker_high, 4.0);
        assert_eq!(b.outliers, vec![100.0]);
        assert!(box_summary(&[]).is_none());
    }

    proptest! {
        #[test]
        fn swapping_groups_negates_t(a in proptest::collection::vec(-5.0f64..5.0, 2..10), b in proptest::collection::vec(-5.0f64..5.0, 2..10)) {
            let x = t_test_ind(&a, &b).unwrap();
            let y = t_test_ind(&b, &a).unwrap();
            prop_assert!((x.t + y.t).abs() < 1e-9);
            prop_assert!((x.p - y.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x.p));
        }
    }
}
