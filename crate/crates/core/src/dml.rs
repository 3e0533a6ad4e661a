//! Cross-fitted double machine learning for β₀.
//!
//! One repetition splits the groups into K folds; for every fold the
//! nuisance functions are fitted on the other folds, the fold's groups are
//! residualized against them, and a Gaussian mixed model is fitted to the
//! residuals. Fold estimates are averaged. S repetitions with fresh
//! partitions are combined by the componentwise median, with the spread of
//! the repetition estimates added to the covariance.
//!
//! Randomness: repetition `s` draws from `derive(seed, [REPETITION, s])`.
//! Within a repetition the partition is drawn first, then a base seed from
//! which fold `k` gets `derive(base, [NUISANCE, k])`.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{FoldPartition, Group, GroupedDataset};
use crate::error::{Error, Result};
use crate::learners::{fit_nuisance, residualize, LearnerKind, LearnerSpec};
use crate::lmm::{fit_variance_components_with, LmmOptions};
use crate::seed::{self, tag, Rng};
use crate::stats::{median, normal_quantile};

#[derive(Debug, Clone)]
pub struct DmlConfig {
    pub k_folds: usize,
    pub repetitions: usize,
    pub learner: LearnerSpec,
    pub alpha: f64,
    pub seed: u64,
    pub lmm: LmmOptions,
}

impl Default for DmlConfig {
    /// K = 2, S = 10, random forests with 500 trees and node size 5.
    fn default() -> Self {
        DmlConfig {
            k_folds: 2,
            repetitions: 10,
            learner: LearnerSpec::random_forest(),
            alpha: 0.05,
            seed: 0,
            lmm: LmmOptions::default(),
        }
    }
}

impl DmlConfig {
    pub fn validate(&self, n_groups: usize) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "k_folds must be at least 2, got {}",
                self.k_folds
            )));
        }
        if self.k_folds > n_groups {
            return Err(Error::InvalidConfig(format!(
                "k_folds = {} exceeds the number of groups ({n_groups})",
                self.k_folds
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        self.learner.validate()
    }

    pub fn echo(&self) -> ConfigEcho {
        let rf = self.learner.kind == LearnerKind::RandomForest;
        ConfigEcho {
            k_folds: self.k_folds,
            repetitions: self.repetitions,
            learner: self.learner.kind.as_str(),
            rf_num_trees: rf.then_some(self.learner.rf_num_trees),
            rf_min_node_size: rf.then_some(self.learner.rf_min_node_size),
            rf_mtry: if rf { self.learner.rf_mtry } else { None },
            alpha: self.alpha,
            seed: self.seed,
        }
    }
}

/// Serializable summary of a [`DmlConfig`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub k_folds: usize,
    pub repetitions: usize,
    pub learner: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_num_trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_min_node_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rf_mtry: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub n_groups: usize,
    pub n_obs: usize,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub sigma_mat: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub warnings: Vec<String>,
}

/// Result of one repetition of cross-fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEstimate {
    /// Repetition index s; 0 outside [`dml_fit`].
    pub repetition: usize,
    pub beta: DVector<f64>,
    /// Covariance of the fold-averaged β̂: (1/K²) Σ_k Ĉov(β̂_k).
    pub cov: DMatrix<f64>,
    /// Fold means of σ̂² and Σ̂, reported as diagnostics.
    pub sigma2: f64,
    pub sigma_mat: DMatrix<f64>,
    pub folds: Vec<FoldDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct DmlFit {
    pub beta_hat: DVector<f64>,
    pub cov_hat: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub alpha: f64,
    pub splits: Vec<SplitEstimate>,
    /// (repetition index, error message) of repetitions that were dropped.
    pub failed_repetitions: Vec<(usize, String)>,
    pub warnings: Vec<String>,
    pub config: Option<ConfigEcho>,
}

/// Uniformly random partition: shuffle, then deal round-robin.
pub fn split_folds(group_ids: &[&str], k: usize, rng: &mut Rng) -> Result<FoldPartition> {
    if k == 0 || k > group_ids.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot split {} groups into {k} folds",
            group_ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..group_ids.len()).collect();
    order.shuffle(rng);
    let assignments: BTreeMap<String, usize> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| (group_ids[i].to_string(), pos % k))
        .collect();
    FoldPartition::new(assignments, k)
}

/// Training and evaluation group indices of each fold.
struct FoldTask {
    train: Vec<usize>,
    eval: Vec<usize>,
}

fn fold_tasks(n_groups: usize, members: &[Vec<usize>]) -> Vec<FoldTask> {
    members
        .iter()
        .map(|eval| {
            let in_fold: HashSet<usize> = eval.iter().copied().collect();
            FoldTask {
                train: (0..n_groups).filter(|i| !in_fold.contains(i)).collect(),
                eval: eval.clone(),
            }
        })
        .collect()
}

/// Panics unless no fold trains on a group it evaluates and the evaluation
/// folds partition all groups.
fn assert_fold_hygiene(n_groups: usize, tasks: &[FoldTask]) {
    let mut covered = HashSet::new();
    for (k, task) in tasks.iter().enumerate() {
        let train: HashSet<usize> = task.train.iter().copied().collect();
        assert!(
            task.eval.iter().all(|i| !train.contains(i)),
            "fold {k}: training and evaluation groups overlap"
        );
        assert_eq!(train.len() + task.eval.len(), n_groups, "fold {k}: groups unaccounted for");
        for &i in &task.eval {
            assert!(covered.insert(i), "group {i} evaluated in more than one fold");
        }
    }
    assert_eq!(covered.len(), n_groups, "evaluation folds do not cover all groups");
}

/// One repetition: draws a partition from `rng`, then cross-fits.
pub fn estimate_single_split(dataset: &GroupedDataset, config: &DmlConfig, rng: &mut Rng) -> Result<SplitEstimate> {
    config.validate(dataset.n_groups())?;
    let partition = split_folds(&dataset.group_ids(), config.k_folds, rng)?;
    let base = rng.next_u64();
    estimate_split_with_partition(dataset, config, &partition, base)
}

/// Cross-fits over a given partition. Fold `k` fits its nuisance model
/// with the stream `derive(base_seed, [NUISANCE, k])`.
pub fn estimate_split_with_partition(
    dataset: &GroupedDataset,
    config: &DmlConfig,
    partition: &FoldPartition,
    base_seed: u64,
) -> Result<SplitEstimate> {
    let members = partition.members(dataset)?;
    let tasks = fold_tasks(dataset.n_groups(), &members);
    assert_fold_hygiene(dataset.n_groups(), &tasks);
    let groups = dataset.groups();
    let k_folds = partition.k();

    let folds = tasks
        .par_iter()
        .enumerate()
        .map(|(k, task)| {
            let train: Vec<&Group> = task.train.iter().map(|&i| &groups[i]).collect();
            // canonical order so the fold fit does not depend on input order
            let mut eval: Vec<&Group> = task.eval.iter().map(|&i| &groups[i]).collect();
            eval.sort_by(|a, b| a.group_id.cmp(&b.group_id));

            let mut rng = seed::rng_from(base_seed, &[tag::NUISANCE, k as u64]);
            let mut nuisance = fit_nuisance(&train, &config.learner, &mut rng).map_err(|e| e.in_fold(k))?;
            nuisance.training_fold = Some(k);
            let residuals = residualize(&nuisance, &eval).map_err(|e| e.in_fold(k))?;
            let fit = fit_variance_components_with(&residuals, &config.lmm).map_err(|e| e.in_fold(k))?;
            Ok((fit, eval.len()))
        })
        .collect::<Result<Vec<_>>>()?;

    let kf = k_folds as f64;
    let d = dataset.d();
    let q = dataset.q();
    let mut beta = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    let mut sigma2 = 0.0;
    let mut sigma_mat = DMatrix::zeros(q, q);
    let mut diagnostics = Vec::with_capacity(k_folds);
    for (k, (fit, n_groups)) in folds.into_iter().enumerate() {
        beta += &fit.theta.beta;
        cov += &fit.beta_cov;
        sigma2 += fit.theta.sigma2;
        sigma_mat += &fit.theta.sigma_mat;
        diagnostics.push(FoldDiagnostics {
            fold: k,
            n_groups,
            n_obs: fit.n_obs,
            beta: fit.theta.beta,
            sigma2: fit.theta.sigma2,
            sigma_mat: fit.theta.sigma_mat,
            converged: fit.converged,
            iterations: fit.iterations,
            score_norm: fit.score_norm,
            warnings: fit.warnings,
        });
    }
    Ok(SplitEstimate {
        repetition: 0,
        beta: beta / kf,
        cov: cov / (kf * kf),
        sigma2: sigma2 / kf,
        sigma_mat: sigma_mat / kf,
        folds: diagnostics,
    })
}

/// Median aggregation over repetitions with the split-variance correction
/// `Ĉov = median_s(Ĉov_s + (β̂ − β̂_s)(β̂ − β̂_s)ᵀ)`, medians elementwise.
pub fn aggregate_splits(estimates: Vec<SplitEstimate>, alpha: f64) -> Result<DmlFit> {
    let first = estimates.first().ok_or(Error::EmptyEstimates)?;
    let d = first.beta.len();
    let beta_hat = DVector::from_fn(d, |j, _| {
        median(&estimates.iter().map(|e| e.beta[j]).collect::<Vec<_>>())
    });
    let corrected: Vec<DMatrix<f64>> = estimates
        .iter()
        .map(|e| {
            let diff = &beta_hat - &e.beta;
            &e.cov + &diff * diff.transpose()
        })
        .collect();
    let cov_hat = DMatrix::from_fn(d, d, |i, j| {
        median(&corrected.iter().map(|c| c[(i, j)]).collect::<Vec<_>>())
    });
    let std_errors = cov_hat.diagonal().map(|v| v.max(0.0).sqrt());

    let mut fit = DmlFit {
        ci_lower: beta_hat.clone(),
        ci_upper: beta_hat.clone(),
        beta_hat,
        cov_hat,
        std_errors,
        alpha,
        splits: estimates,
        failed_repetitions: Vec::new(),
        warnings: Vec::new(),
        config: None,
    };
    let (intervals, warnings) = confidence_interval(&fit, alpha);
    fit.ci_lower = DVector::from_iterator(d, intervals.iter().map(|i| i.lower));
    fit.ci_upper = DVector::from_iterator(d, intervals.iter().map(|i| i.upper));
    fit.warnings.extend(warnings);
    Ok(fit)
}

/// Two-sided Gaussian intervals β̂_j ± z_{1−α/2} se_j.
///
/// `alpha` may be 1, which gives zero-width intervals. Returns the
/// intervals and any degenerate-variance warnings.
pub fn confidence_interval(fit: &DmlFit, alpha: f64) -> (Vec<Interval>, Vec<String>) {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut warnings = Vec::new();
    let intervals = fit
        .beta_hat
        .iter()
        .zip(fit.std_errors.iter())
        .enumerate()
        .map(|(j, (&b, &se))| {
            if se == 0.0 {
                warnings.push(format!("coefficient {j}: zero estimated variance, degenerate interval"));
                return Interval { lower: b, upper: b };
            }
            Interval {
                lower: b - z * se,
                upper: b + z * se,
            }
        })
        .collect();
    (intervals, warnings)
}

/// Full procedure: S repetitions (in parallel), median aggregation and intervals.
///
/// Failed repetitions are dropped with a warning; the call fails only when
/// every repetition fails.
pub fn dml_fit(dataset: &GroupedDataset, config: &DmlConfig) -> Result<DmlFit> {
    config.validate(dataset.n_groups())?;
    let outcomes: Vec<Result<SplitEstimate>> = (0..config.repetitions)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng_from(config.seed, &[tag::REPETITION, s as u64]);
            estimate_single_split(dataset, config, &mut rng).map(|mut e| {
                e.repetition = s;
                e
            })
        })
        .collect();

    let mut estimates = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (s, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(e) => estimates.push(e),
            Err(e) => {
                failed.push((s, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    if estimates.is_empty() {
        return Err(Error::AllRepetitionsFailed {
            repetitions: config.repetitions,
            first: Box::new(first_error.expect("at least one repetition ran")),
        });
    }
    let mut fit = aggregate_splits(estimates, config.alpha)?;
    if !failed.is_empty() {
        fit.warnings.push(format!(
            "{} of {} repetitions failed and were excluded",
            failed.len(),
            config.repetitions
        ));
    }
    fit.failed_repetitions = failed;
    fit.config = Some(config.echo());
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn split(beta: f64, cov: f64) -> SplitEstimate {
        SplitEstimate {
            repetition: 0,
            beta: DVector::from_element(1, beta),
            cov: DMatrix::from_element(1, 1, cov),
            sigma2: 1.0,
            sigma_mat: DMatrix::zeros(1, 1),
            folds: Vec::new(),
        }
    }

    #[test]
    fn fold_sizes_are_forced() {
        let ids = ["a", "b", "c", "d", "e"];
        let mut rng = Rng::seed_from_u64(3);
        let p = split_folds(&ids[..4], 2, &mut rng).unwrap();
        assert_eq!(p.fold_sizes(), vec![2, 2]);
        let mut sizes = split_folds(&ids, 2, &mut rng).unwrap().fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
        assert_eq!(split_folds(&ids, 5, &mut rng).unwrap().fold_sizes(), vec![1; 5]);
        assert!(split_folds(&ids, 6, &mut rng).is_err());
    }

    #[test]
    fn single_split_passes_through() {
        let fit = aggregate_splits(vec![split(1.5, 0.2)], 0.05).unwrap();
        assert_eq!(fit.beta_hat[0], 1.5);
        assert_eq!(fit.cov_hat[(0, 0)], 0.2);
    }

    #[test]
    fn correction_hand_example() {
        let c = 0.3;
        let fit = aggregate_splits(vec![split(1.0, c), split(2.0, c), split(3.0, c)], 0.05).unwrap();
        assert_eq!(fit.beta_hat[0], 2.0);
        assert_eq!(fit.cov_hat[(0, 0)], c + 1.0);
    }

    #[test]
    fn empty_estimates_rejected() {
        assert!(matches!(aggregate_splits(Vec::new(), 0.05), Err(Error::EmptyEstimates)));
    }

    #[test]
    fn interval_hand_values() {
        let mut fit = aggregate_splits(vec![split(2.0, 1.0)], 0.05).unwrap();
        assert!((fit.ci_lower[0] - 0.0400).abs() < 1e-4);
        assert!((fit.ci_upper[0] - 3.9600).abs() < 1e-4);
        let (iv, _) = confidence_interval(&fit, 1.0);
        assert_eq!((iv[0].lower, iv[0].upper), (2.0, 2.0));
        fit.std_errors[0] = 0.0;
        let (iv, warnings) = confidence_interval(&fit, 0.05);
        assert_eq!((iv[0].lower, iv[0].upper), (2.0, 2.0));
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn hygiene_holds_for_every_small_partition() {
        // every assignment of up to 8 groups to K balanced folds
        for n in 2..=8usize {
            for k in 2..=n {
                let total = k.pow(n as u32);
                for code in 0..total.min(20_000) {
                    let mut c = code;
                    let mut members = vec![Vec::new(); k];
                    for i in 0..n {
                        members[c % k].push(i);
                        c /= k;
                    }
                    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
                    if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
                        continue;
                    }
                    assert_fold_hygiene(n, &fold_tasks(n, &members));
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "overlap")]
    fn hygiene_detects_leak() {
        let tasks = vec![
            FoldTask { train: vec![1, 0], eval: vec![0] },
            FoldTask { train: vec![0], eval: vec![1] },
        ];
        assert_fold_hygiene(2, &tasks);
    }

    #[test]
    fn config_rejects_single_fold() {
        let cfg = DmlConfig {
            k_folds: 1,
            ..DmlConfig::default()
        };
        assert!(matches!(cfg.validate(10), Err(Error::InvalidConfig(_))));
    }
}
