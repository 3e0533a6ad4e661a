//! Row-wise regression learners for the nuisance functions E[X | W] and
//! E[Y | W], and residualization of held-out groups against them.

mod forest;
mod linear;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;

pub use forest::{ForestParams, RandomForest, RegressionTree};
pub use linear::{LinearModel, RIDGE_LAMBDA};

use crate::data::Group;
use crate::error::{Error, Result};
use crate::lmm::{GroupResiduals, ResidualSet};
use crate::seed::{self, tag, Rng};

/// A function of one row of W.
pub type RowFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    RandomForest,
    Linear,
    Oracle,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::RandomForest => "random_forest",
            LearnerKind::Linear => "linear",
            LearnerKind::Oracle => "oracle",
        }
    }
}

/// Exact nuisance functions, one per column of X plus one for Y.
#[derive(Clone)]
pub struct OracleHooks {
    pub m_x: Vec<RowFn>,
    pub m_y: RowFn,
}

impl fmt::Debug for OracleHooks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleHooks")
            .field("m_x", &format_args!("[{} fns]", self.m_x.len()))
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub rf_num_trees: usize,
    pub rf_min_node_size: usize,
    /// `None` resolves to `max(1, v / 3)` at fit time.
    pub rf_mtry: Option<usize>,
    /// Bootstrap-resample rows for each tree. Disabling it is only useful
    /// for inspecting single trees.
    pub rf_bootstrap: bool,
    pub oracle_hooks: Option<OracleHooks>,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::random_forest()
    }
}

impl LearnerSpec {
    /// 500 trees, minimal node size 5.
    pub fn random_forest() -> Self {
        LearnerSpec {
            kind: LearnerKind::RandomForest,
            rf_num_trees: 500,
            rf_min_node_size: 5,
            rf_mtry: None,
            rf_bootstrap: true,
            oracle_hooks: None,
        }
    }

    pub fn linear() -> Self {
        LearnerSpec {
            kind: LearnerKind::Linear,
            ..LearnerSpec::random_forest()
        }
    }

    pub fn oracle(hooks: OracleHooks) -> Self {
        LearnerSpec {
            kind: LearnerKind::Oracle,
            oracle_hooks: Some(hooks),
            ..LearnerSpec::random_forest()
        }
    }

    pub fn with_trees(mut self, n: usize) -> Self {
        self.rf_num_trees = n;
        self
    }

    pub fn with_min_node_size(mut self, n: usize) -> Self {
        self.rf_min_node_size = n;
        self
    }

    pub fn with_mtry(mut self, mtry: usize) -> Self {
        self.rf_mtry = Some(mtry);
        self
    }

    pub fn resolved_mtry(&self, v: usize) -> usize {
        self.rf_mtry.unwrap_or((v / 3).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LearnerKind::RandomForest => {
                if self.rf_num_trees == 0 {
                    return Err(Error::InvalidConfig("rf_num_trees must be positive".into()));
                }
                if self.rf_min_node_size == 0 {
                    return Err(Error::InvalidConfig("rf_min_node_size must be positive".into()));
                }
                if self.rf_mtry == Some(0) {
                    return Err(Error::InvalidConfig("rf_mtry must be positive".into()));
                }
            }
            LearnerKind::Oracle if self.oracle_hooks.is_none() => {
                return Err(Error::InvalidConfig("oracle learner requires hooks".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// A fitted single-output regressor on rows of W.
#[derive(Clone)]
pub enum Regressor {
    Linear(LinearModel),
    Forest(RandomForest),
    Function(RowFn),
}

impl fmt::Debug for Regressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regressor::Linear(m) => f.debug_tuple("Linear").field(m).finish(),
            Regressor::Forest(rf) => write!(f, "Forest({} trees)", rf.trees().len()),
            Regressor::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Regressor {
    pub fn predict_row(&self, w: &[f64]) -> f64 {
        match self {
            Regressor::Linear(m) => m.predict_row(w),
            Regressor::Forest(rf) => rf.predict_row(w),
            Regressor::Function(f) => f(w),
        }
    }

    pub fn predict(&self, w: &DMatrix<f64>) -> DVector<f64> {
        let mut row = vec![0.0; w.ncols()];
        DVector::from_fn(w.nrows(), |i, _| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = w[(i, j)];
            }
            self.predict_row(&row)
        })
    }
}

/// Fits one single-output regressor on `features` (M × v) and `targets` (M).
pub fn fit_learner(spec: &LearnerSpec, features: &DMatrix<f64>, targets: &[f64], rng: &mut Rng) -> Result<Regressor> {
    spec.validate()?;
    let m = targets.len();
    if features.nrows() != m {
        return Err(Error::InvalidConfig(format!(
            "feature rows ({}) and targets ({m}) differ",
            features.nrows()
        )));
    }
    if m < 2 {
        return Err(Error::DegenerateTarget { rows: m });
    }
    match spec.kind {
        LearnerKind::Linear => Ok(Regressor::Linear(LinearModel::fit(features, targets))),
        LearnerKind::RandomForest => {
            let v = features.ncols();
            let mtry = spec.resolved_mtry(v);
            if mtry > v {
                return Err(Error::InvalidConfig(format!("rf_mtry {mtry} exceeds v = {v}")));
            }
            let params = ForestParams {
                num_trees: spec.rf_num_trees,
                min_node_size: spec.rf_min_node_size,
                mtry,
                bootstrap: spec.rf_bootstrap,
            };
            Ok(Regressor::Forest(RandomForest::fit(params, features, targets, rng)))
        }
        LearnerKind::Oracle => Err(Error::InvalidConfig(
            "the oracle learner has no single-output fit; use fit_nuisance".into(),
        )),
    }
}

/// Fitted (m̂_X, m̂_Y): one regressor per column of X plus one for Y.
#[derive(Debug, Clone)]
pub struct NuisanceModel {
    pub m_x: Vec<Regressor>,
    pub m_y: Regressor,
    /// Evaluation fold this model must be applied to (trained on its complement).
    pub training_fold: Option<usize>,
}

impl NuisanceModel {
    pub fn from_functions(m_x: Vec<RowFn>, m_y: RowFn) -> Self {
        NuisanceModel {
            m_x: m_x.into_iter().map(Regressor::Function).collect(),
            m_y: Regressor::Function(m_y),
            training_fold: None,
        }
    }

    pub fn d(&self) -> usize {
        self.m_x.len()
    }

    pub fn predict_x(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(w.nrows(), self.m_x.len());
        for (j, reg) in self.m_x.iter().enumerate() {
            out.set_column(j, &reg.predict(w));
        }
        out
    }

    pub fn predict_y(&self, w: &DMatrix<f64>) -> DVector<f64> {
        self.m_y.predict(w)
    }
}

/// Fits m̂_X and m̂_Y on the row-stacked observations of `train_groups`.
///
/// The d+1 regressors are fitted in parallel; regressor `j` (Y is `j = d`)
/// draws from `derive(base, [NUISANCE, j])` with `base` taken from `rng`.
pub fn fit_nuisance(train_groups: &[&Group], spec: &LearnerSpec, rng: &mut Rng) -> Result<NuisanceModel> {
    spec.validate()?;
    let first = train_groups
        .first()
        .ok_or(Error::DegenerateTarget { rows: 0 })?;
    let d = first.x.ncols();
    if spec.kind == LearnerKind::Oracle {
        let hooks = spec.oracle_hooks.as_ref().expect("validated");
        if hooks.m_x.len() != d {
            return Err(Error::InvalidConfig(format!(
                "oracle provides {} X functions, data has d = {d}",
                hooks.m_x.len()
            )));
        }
        return Ok(NuisanceModel::from_functions(hooks.m_x.clone(), hooks.m_y.clone()));
    }

    let rows: usize = train_groups.iter().map(|g| g.n_obs()).sum();
    if rows < 2 {
        return Err(Error::DegenerateTarget { rows });
    }
    let v = first.w.ncols();
    let mut features = DMatrix::zeros(rows, v);
    let mut x_targets = vec![Vec::with_capacity(rows); d];
    let mut y_targets = Vec::with_capacity(rows);
    let mut at = 0;
    for g in train_groups {
        features.rows_mut(at, g.n_obs()).copy_from(&g.w);
        for (j, col) in x_targets.iter_mut().enumerate() {
            col.extend(g.x.column(j).iter());
        }
        y_targets.extend(g.y.iter());
        at += g.n_obs();
    }

    let base = rng.next_u64();
    let mut fitted = (0..=d)
        .into_par_iter()
        .map(|j| {
            let mut task_rng = seed::rng_from(base, &[tag::NUISANCE, j as u64]);
            let targets = if j < d { &x_targets[j] } else { &y_targets };
            fit_learner(spec, &features, targets, &mut task_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let m_y = fitted.pop().expect("d + 1 regressors");
    Ok(NuisanceModel {
        m_x: fitted,
        m_y,
        training_fold: None,
    })
}

/// R̂_X = X − m̂_X(W) and R̂_Y = Y − m̂_Y(W) for each evaluation group.
pub fn residualize(model: &NuisanceModel, eval_groups: &[&Group]) -> Result<ResidualSet> {
    let fold = model.training_fold;
    let groups = eval_groups
        .iter()
        .map(|g| {
            if g.x.ncols() != model.d() {
                return Err(Error::DimensionMismatch {
                    group: g.group_id.clone(),
                    detail: format!("x has {} columns, nuisance model has {}", g.x.ncols(), model.d()),
                });
            }
            let r_x = &g.x - model.predict_x(&g.w);
            let r_y = &g.y - model.predict_y(&g.w);
            Ok(GroupResiduals {
                group_id: g.group_id.clone(),
                fold,
                r_x,
                r_y,
                z: g.z.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ResidualSet::new(groups)
}
