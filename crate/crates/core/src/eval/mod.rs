//! Ranking metrics, the PR curve, the neighbor-smoothing diagnostic and the
//! case-study neighborhood comparison.

mod diag;
mod metrics;

pub use diag::{
    case_study, smooth, smoothing_diagnostic, AucF1, CaseStudy, GroupStats, LogReg, LogRegConfig, SmoothingReport,
};
pub use metrics::{
    f1_at, metrics_report, operating_point, pr_curve, recall_at_precision, roc_auc, write_pr_csv, MetricsReport,
    PrPoint, ScoredSet,
};

#[cfg(test)]
mod tests;
