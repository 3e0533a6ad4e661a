use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::GroupedDataset;
use crate::dml::{ConfigEcho, DmlFit, SplitEstimate};
use crate::error::Error;
use crate::stats::median;

/// Bumped whenever the report layout changes.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub report_version: u32,
    pub coefficients: Vec<CoefficientReport>,
    pub alpha: f64,
    pub covariance: Vec<Vec<f64>>,
    pub variance_components: VarianceComponents,
    pub data: DataSummary,
    pub splits: Vec<SplitReport>,
    pub failed_repetitions: Vec<FailedRepetition>,
    pub warnings: Vec<String>,
    pub config: Option<ConfigEcho>,
}

#[derive(Debug, Serialize)]
pub struct CoefficientReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Medians over repetitions of the fold-averaged σ̂² and Σ̂.
#[derive(Debug, Serialize)]
pub struct VarianceComponents {
    pub sigma2: f64,
    pub sigma_mat: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct DataSummary {
    pub n_groups: usize,
    pub n_obs: usize,
    pub d: usize,
    pub v: usize,
    pub q: usize,
}

#[derive(Debug, Serialize)]
pub struct SplitReport {
    pub repetition: usize,
    pub beta: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub sigma_mat: Vec<Vec<f64>>,
    pub folds: Vec<FoldReport>,
}

#[derive(Debug, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_groups: usize,
    pub n_obs: usize,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct FailedRepetition {
    pub repetition: usize,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub class: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl ErrorReport {
    pub fn from_error(e: &Error) -> Self {
        let class = e.class();
        ErrorReport {
            error: ErrorBody {
                class: class.as_str(),
                exit_code: class.exit_code(),
                message: e.to_string(),
            },
        }
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn split_report(s: &SplitEstimate) -> SplitReport {
    SplitReport {
        repetition: s.repetition,
        beta: s.beta.iter().copied().collect(),
        covariance: rows(&s.cov),
        sigma2: s.sigma2,
        sigma_mat: rows(&s.sigma_mat),
        folds: s
            .folds
            .iter()
            .map(|f| FoldReport {
                fold: f.fold,
                n_groups: f.n_groups,
                n_obs: f.n_obs,
                beta: f.beta.iter().copied().collect(),
                sigma2: f.sigma2,
                converged: f.converged,
                iterations: f.iterations,
                score_norm: f.score_norm,
                warnings: f.warnings.clone(),
            })
            .collect(),
    }
}

impl FitReport {
    pub fn new(fit: &DmlFit, dataset: &GroupedDataset, names: &[String]) -> Self {
        let coefficients = (0..fit.beta_hat.len())
            .map(|j| CoefficientReport {
                name: names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1)),
                estimate: fit.beta_hat[j],
                std_error: fit.std_errors[j],
                ci_lower: fit.ci_lower[j],
                ci_upper: fit.ci_upper[j],
            })
            .collect();
        let q = dataset.q();
        let sigma2 = median(&fit.splits.iter().map(|s| s.sigma2).collect::<Vec<_>>());
        let sigma_mat = DMatrix::from_fn(q, q, |i, j| {
            median(&fit.splits.iter().map(|s| s.sigma_mat[(i, j)]).collect::<Vec<_>>())
        });
        FitReport {
            report_version: REPORT_VERSION,
            coefficients,
            alpha: fit.alpha,
            covariance: rows(&fit.cov_hat),
            variance_components: VarianceComponents {
                sigma2,
                sigma_mat: rows(&sigma_mat),
            },
            data: DataSummary {
                n_groups: dataset.n_groups(),
                n_obs: dataset.n_total(),
                d: dataset.d(),
                v: dataset.v(),
                q,
            },
            splits: fit.splits.iter().map(split_report).collect(),
            failed_repetitions: fit
                .failed_repetitions
                .iter()
                .map(|(s, e)| FailedRepetition {
                    repetition: *s,
                    error: e.clone(),
                })
                .collect(),
            warnings: fit.warnings.clone(),
            config: fit.config.clone(),
        }
    }
}
