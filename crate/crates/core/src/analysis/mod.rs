//! Latent-representation analysis: hidden-state traces, PCA, t-SNE,
//! answer-span cosine statistics and significance tests.

mod cosine;
mod pca;
mod report;
mod stats;
mod trace;
mod tsne;

pub use cosine::{avg_answer_cosine, cosine, cosine_distributions, is_eligible, CosineDistributions, CosineSample};
pub use pca::{pca_fit_transform, Pca};
pub use report::{
    analysis_report, layer_csv, project_cls, projection_csv, AnalysisConfig, AnalysisReport, GroupReport,
    LabelKey, LayerProjection, LayerReport, LayerStats, ProjectedPoint,
};
pub use stats::{
    bonferroni, box_summary, histogram, quantile_sorted, t_test, t_test_ind, t_two_sided_p, BoxSummary, Histogram,
    TTest, TTestKind, HISTOGRAM_BINS,
};
pub use trace::{capture_traces, token_roles, HiddenTrace, TokenRole};
pub use tsne::{joint_affinities, tsne_2d, TsneConfig};
