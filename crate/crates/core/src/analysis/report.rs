//! Per-layer cosine statistics and [CLS] projections.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cosine::{cosine_distributions, CosineSample};
use super::pca::pca_fit_transform;
use super::stats::{bonferroni, box_summary, histogram, t_test, BoxSummary, Histogram, TTestKind, HISTOGRAM_BINS};
use super::trace::HiddenTrace;
use super::tsne::{tsne_2d, TsneConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub variance_target: f64,
    pub test: TTestKind,
    pub bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            variance_target: 0.95,
            test: TTestKind::Pooled,
            bins: HISTOGRAM_BINS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub zero_variance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub n: usize,
    pub summary: Option<BoxSummary>,
    pub histogram: Histogram,
    /// Fraction of samples with cos_a > 0.5.
    pub frac_above_half: Option<f64>,
    pub samples: Vec<CosineSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    /// 1-based.
    pub layer: usize,
    pub correct: GroupReport,
    pub erroneous: GroupReport,
    /// `None` when a group has fewer than two samples or the test is
    /// undefined at this layer.
    pub stats: Option<LayerStats>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub num_layers: usize,
    pub num_traces: usize,
    pub config: AnalysisConfig,
    pub layers: Vec<LayerReport>,
}

impl AnalysisReport {
    /// Number of cosine samples at the first layer (both groups).
    pub fn eligible(&self) -> usize {
        self.layers.first().map_or(0, |l| l.correct.n + l.erroneous.n)
    }
}

fn group(samples: Vec<CosineSample>, bins: usize) -> GroupReport {
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    GroupReport {
        n: values.len(),
        summary: box_summary(&values),
        histogram: histogram(&values, bins, -1.0, 1.0),
        frac_above_half: (!values.is_empty())
            .then(|| values.iter().filter(|&&v| v > 0.5).count() as f64 / values.len() as f64),
        samples,
    }
}

/// Cosine distributions, summaries and corrected t-tests for every layer.
/// The correction factor is the layer count.
pub fn analysis_report(traces: &[HiddenTrace], cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    let first = traces.first().ok_or_else(|| Error::contract("analysis_report: no traces"))?;
    let num_layers = first.num_layers();
    let mut layers = Vec::with_capacity(num_layers);
    let mut raw = Vec::new();
    for l in 1..=num_layers {
        let d = cosine_distributions(traces, l, cfg.variance_target)?;
        let a: Vec<f64> = d.correct.iter().map(|s| s.value).collect();
        let b: Vec<f64> = d.erroneous.iter().map(|s| s.value).collect();
        let (stats, note) = match t_test(&a, &b, cfg.test) {
            Ok(r) => {
                raw.push((l - 1, r.p));
                (
                    Some(LayerStats {
                        t: r.t,
                        df: r.df,
                        p_raw: r.p,
                        p_corrected: f64::NAN,
                        zero_variance: r.zero_variance,
                    }),
                    None,
                )
            }
            Err(Error::Contract(msg)) => (None, Some(format!("not applicable: {msg}"))),
            Err(e) => return Err(e),
        };
        layers.push(LayerReport {
            layer: l,
            correct: group(d.correct, cfg.bins),
            erroneous: group(d.erroneous, cfg.bins),
            stats,
            note,
        });
    }
    let corrected = bonferroni(&raw.iter().map(|r| r.1).collect::<Vec<_>>(), num_layers);
    for ((idx, _), pc) in raw.iter().zip(corrected) {
        if let Some(s) = layers[*idx].stats.as_mut() {
            s.p_corrected = pc;
        }
    }
    Ok(AnalysisReport {
        num_layers,
        num_traces: traces.len(),
        config: *cfg,
        layers,
    })
}

/// Long-format CSV of one layer: samples, histogram bins and box summaries.
pub fn layer_csv(layer: &LayerReport) -> String {
    let mut s = String::from("section,group,key,value\n");
    for (name, g) in [("correct", &layer.correct), ("erroneous", &layer.erroneous)] {
        for c in &g.samples {
            let _ = writeln!(s, "sample,{name},{},{}", c.id, c.value);
        }
        for (i, count) in g.histogram.counts.iter().enumerate() {
            let _ = writeln!(s, "hist,{name},{:.6},{count}", g.histogram.edges[i]);
        }
        if let Some(b) = &g.summary {
            for (k, v) in [
                ("n", b.n as f64),
                ("mean", b.mean),
                ("min", b.min),
                ("q1", b.q1),
                ("median", b.median),
                ("q3", b.q3),
                ("max", b.max),
                ("whisker_low", b.whisker_low),
                ("whisker_high", b.whisker_high),
            ] {
                let _ = writeln!(s, "box,{name},{k},{v}");
            }
        }
    }
    if let Some(st) = &layer.stats {
        for (k, v) in [("t", st.t), ("df", st.df), ("p_raw", st.p_raw), ("p_corrected", st.p_corrected)] {
            let _ = writeln!(s, "test,all,{k},{v}");
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKey {
    /// subjective / objective review / objective encyclopedic.
    Subjectivity3way,
    Domain,
    DomainSubjectivity,
}

impl LabelKey {
    pub fn parse(s: &str) -> Result<LabelKey> {
        match s.trim() {
            "subjectivity3way" | "subjectivity" => Ok(LabelKey::Subjectivity3way),
            "domain" => Ok(LabelKey::Domain),
            "domain_subjectivity" | "domain×subjectivity" | "domain-subjectivity" => Ok(LabelKey::DomainSubjectivity),
            other => Err(Error::config("projection", format!("unknown label key `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelKey::Subjectivity3way => "subjectivity3way",
            LabelKey::Domain => "domain",
            LabelKey::DomainSubjectivity => "domain_subjectivity",
        }
    }

    /// A pair is subjective when its question or its answer is.
    pub fn label(self, t: &HiddenTrace, domains: &[String]) -> String {
        let subjective = t.subj_question || t.subj_answer;
        let domain = domains.get(t.domain).cloned().unwrap_or_else(|| t.domain.to_string());
        let sbj = if subjective { "subjective" } else { "objective" };
        match self {
            LabelKey::Subjectivity3way => match (subjective, t.dataset) {
                (true, _) => "subjective".into(),
                (false, 1) => "objective-encyclopedic".into(),
                (false, _) => "objective-review".into(),
            },
            LabelKey::Domain => domain,
            LabelKey::DomainSubjectivity => format!("{domain}/{sbj}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: String,
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProjection {
    pub layer: usize,
    pub n_components: usize,
    pub perplexity: f64,
    /// Distinct labels in order of first appearance.
    pub classes: Vec<String>,
    pub points: Vec<ProjectedPoint>,
}

/// Position-0 vectors of every trace per layer, reduced by PCA and
/// embedded with t-SNE. Perplexity is lowered to `(n − 1)/3` for small sets;
/// layers whose position-0 vectors have zero variance are skipped.
pub fn project_cls(
    traces: &[HiddenTrace],
    key: LabelKey,
    domains: &[String],
    variance_target: f64,
    tsne: &TsneConfig,
) -> Result<Vec<LayerProjection>> {
    let first = traces.first().ok_or_else(|| Error::contract("project_cls: no traces"))?;
    let labels: Vec<String> = traces.iter().map(|t| key.label(t, domains)).collect();
    let mut classes: Vec<String> = Vec::new();
    for l in &labels {
        if !classes.contains(l) {
            classes.push(l.clone());
        }
    }
    let n = traces.len();
    let perplexity = tsne.perplexity.min((n as f64 - 1.0) / 3.0);
    let cfg = TsneConfig { perplexity, ..*tsne };
    let mut out = Vec::with_capacity(first.num_layers());
    for l in 1..=first.num_layers() {
        let x: Vec<Vec<f64>> = traces.iter().map(|t| t.layers[l - 1][0].clone()).collect();
        let (y, ratios) = match pca_fit_transform(&x, variance_target) {
            Ok(r) => r,
            Err(Error::Contract(msg)) => {
                log::warn!("skipping projection of layer {l}: {msg}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let e = tsne_2d(&y, &cfg)?;
        out.push(LayerProjection {
            layer: l,
            n_components: ratios.len(),
            perplexity,
            classes: classes.clone(),
            points: traces
                .iter()
                .zip(&labels)
                .zip(e)
                .map(|((t, lab), p)| ProjectedPoint {
                    id: t.id.clone(),
                    label: lab.clone(),
                    x: p[0],
                    y: p[1],
                })
                .collect(),
        });
    }
    Ok(out)
}

pub fn projection_csv(p: &LayerProjection) -> String {
    let mut s = String::from("id,label,x,y\n");
    for q in &p.points {
        let _ = writeln!(s, "{},{},{},{}", q.id, q.label, q.x, q.y);
    }
    s
}
