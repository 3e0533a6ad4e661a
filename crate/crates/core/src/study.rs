//! Monte-Carlo replication harness: coverage, interval length and bias of
//! the cross-fitted estimator over repeated synthetic datasets.

use rayon::prelude::*;
use serde::Serialize;

use crate::dml::{dml_fit, ConfigEcho, DmlConfig};
use crate::error::Result;
use crate::learners::{LearnerKind, LearnerSpec};
use crate::seed::{self, tag};
use crate::sim::{gen_dataset, oracle_hooks, SimScenario};
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub beta_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: u8,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub scenario: &'static str,
    pub n_groups: usize,
    pub beta0: f64,
    pub replicates: usize,
    pub successful: usize,
    pub failed: usize,
    pub coverage: f64,
    pub median_ci_length: f64,
    pub median_bias: f64,
    pub mean_beta_hat: f64,
    pub config: ConfigEcho,
}

#[derive(Debug, Clone)]
pub struct Study {
    pub rows: Vec<ReplicateRow>,
    /// (replicate, error message) for replicates whose fit failed.
    pub failures: Vec<(usize, String)>,
    pub summary: StudySummary,
}

/// Runs `replicates` independent generate-and-fit rounds in parallel.
///
/// Replicate `r` generates its data from `derive(seed, [REPLICATE_DATA, r])`
/// and fits with seed `derive(seed, [REPLICATE_FIT, r])`. An oracle learner
/// is bound to the scenario's true nuisance functions.
pub fn run_study(scenario: &SimScenario, replicates: usize, config: &DmlConfig) -> Result<Study> {
    let mut config = config.clone();
    if config.learner.kind == LearnerKind::Oracle && config.learner.oracle_hooks.is_none() {
        config.learner = LearnerSpec::oracle(oracle_hooks(scenario));
    }
    config.validate(scenario.n_groups)?;

    let outcomes: Vec<Result<ReplicateRow>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let data = gen_dataset(scenario, seed::derive(config.seed, &[tag::REPLICATE_DATA, r as u64]))?;
            let mut cfg = config.clone();
            cfg.seed = seed::derive(config.seed, &[tag::REPLICATE_FIT, r as u64]);
            let fit = dml_fit(&data, &cfg)?;
            let (beta_hat, se) = (fit.beta_hat[0], fit.std_errors[0]);
            let (lo, hi) = (fit.ci_lower[0], fit.ci_upper[0]);
            Ok(ReplicateRow {
                replicate: r,
                beta_hat,
                se,
                ci_lo: lo,
                ci_hi: hi,
                covered: u8::from(lo <= scenario.beta0 && scenario.beta0 <= hi),
                bias: beta_hat - scenario.beta0,
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let summary = summarize(scenario, replicates, &rows, &config);
    Ok(Study {
        rows,
        failures,
        summary,
    })
}

fn summarize(scenario: &SimScenario, replicates: usize, rows: &[ReplicateRow], config: &DmlConfig) -> StudySummary {
    let n = rows.len();
    let (coverage, median_ci_length, median_bias, mean_beta_hat) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let lengths: Vec<f64> = rows.iter().map(|r| r.ci_hi - r.ci_lo).collect();
        let biases: Vec<f64> = rows.iter().map(|r| r.bias).collect();
        (
            rows.iter().map(|r| f64::from(r.covered)).sum::<f64>() / n as f64,
            median(&lengths),
            median(&biases),
            rows.iter().map(|r| r.beta_hat).sum::<f64>() / n as f64,
        )
    };
    StudySummary {
        scenario: scenario.kind.as_str(),
        n_groups: scenario.n_groups,
        beta0: scenario.beta0,
        replicates,
        successful: n,
        failed: replicates - n,
        coverage,
        median_ci_length,
        median_bias,
        mean_beta_hat,
        config: config.echo(),
    }
}
