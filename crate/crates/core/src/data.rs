//! Grouped repeated-measurements data and model parameters.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues of Σ down to this value are clamped to zero; below it is an error.
pub const PSD_TOLERANCE: f64 = 1e-10;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Observations of one experimental unit: response, linear covariates,
/// nonparametric covariates and random-effects design, all with `n_i` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub group_id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl Group {
    pub fn new(
        group_id: impl Into<String>,
        y: DVector<f64>,
        x: DMatrix<f64>,
        w: DMatrix<f64>,
        z: DMatrix<f64>,
    ) -> Self {
        Group {
            group_id: group_id.into(),
            y,
            x,
            w,
            z,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.y.len();
        let mismatch = |detail: String| Error::DimensionMismatch {
            group: self.group_id.clone(),
            detail,
        };
        if n == 0 {
            return Err(mismatch("group has no observations".into()));
        }
        for (name, rows) in [("x", self.x.nrows()), ("w", self.w.nrows()), ("z", self.z.nrows())] {
            if rows != n {
                return Err(mismatch(format!("y has {n} rows but {name} has {rows}")));
            }
        }
        check_finite(&self.group_id, "y", self.y.as_slice(), n)?;
        check_finite(&self.group_id, "x", self.x.as_slice(), n)?;
        check_finite(&self.group_id, "w", self.w.as_slice(), n)?;
        check_finite(&self.group_id, "z", self.z.as_slice(), n)?;
        Ok(())
    }
}

// nalgebra storage is column-major: flat index = col * nrows + row.
fn check_finite(group: &str, field: &'static str, data: &[f64], nrows: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => Err(Error::NonFinite {
            group: group.to_string(),
            field,
            row: idx % nrows,
            col: idx / nrows,
        }),
    }
}

/// An ordered collection of groups sharing the covariate dimensions `d`, `v`, `q`.
///
/// Only constructible through validation, so every instance satisfies the
/// dataset invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    groups: Vec<Group>,
    d: usize,
    v: usize,
    q: usize,
    n_total: usize,
}

impl GroupedDataset {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::InsufficientGroups {
                found: groups.len(),
            });
        }
        let first = &groups[0];
        let (d, v, q) = (first.x.ncols(), first.w.ncols(), first.z.ncols());
        let mut seen = HashSet::with_capacity(groups.len());
        for g in &groups {
            g.check()?;
            for (name, have, want) in [("x", g.x.ncols(), d), ("w", g.w.ncols(), v), ("z", g.z.ncols(), q)] {
                if have != want {
                    return Err(Error::DimensionMismatch {
                        group: g.group_id.clone(),
                        detail: format!("{name} has {have} columns, expected {want}"),
                    });
                }
            }
            if !seen.insert(g.group_id.as_str()) {
                return Err(Error::DuplicateGroupId(g.group_id.clone()));
            }
        }
        let n_total = groups.iter().map(Group::n_obs).sum();
        Ok(GroupedDataset {
            groups,
            d,
            v,
            q,
            n_total,
        })
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn into_groups(self) -> Vec<Group> {
        self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Total number of observations N_T.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_max(&self) -> usize {
        self.groups.iter().map(Group::n_obs).max().unwrap_or(0)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn group_ids(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.group_id.as_str()).collect()
    }
}

/// Re-checks every dataset invariant, including the cached observation count.
pub fn validate_dataset(dataset: GroupedDataset) -> Result<GroupedDataset> {
    let cached = dataset.n_total;
    let checked = GroupedDataset::new(dataset.groups)?;
    if checked.n_total != cached {
        return Err(Error::Numerical(format!(
            "cached observation count {cached} disagrees with recomputed {}",
            checked.n_total
        )));
    }
    Ok(checked)
}

/// Finite-dimensional parameter (β, σ², Σ) with Σ = Γ/σ² the scaled
/// random-effects covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub sigma_mat: DMatrix<f64>,
}

impl Theta {
    pub fn new(beta: DVector<f64>, sigma2: f64, sigma_mat: DMatrix<f64>) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma2 must be positive, got {sigma2}")));
        }
        let sigma_mat = project_psd(sigma_mat)?;
        Ok(Theta {
            beta,
            sigma2,
            sigma_mat,
        })
    }

    pub fn d(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.sigma_mat.nrows()
    }
}

/// Validates symmetry and positive semi-definiteness of Σ. Eigenvalues in
/// `[-PSD_TOLERANCE, 0)` are clamped to zero; anything below is rejected.
pub fn project_psd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidConfig(format!(
            "Sigma must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("Sigma has non-finite entries".into()));
    }
    let q = m.nrows();
    for i in 0..q {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::InvalidConfig(format!(
                    "Sigma is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    if q == 0 {
        return Ok(m);
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "Sigma is not positive semi-definite (min eigenvalue {min:e})"
        )));
    }
    if min >= 0.0 {
        return Ok(m);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let q_mat = &eig.eigenvectors;
    let rebuilt = q_mat * DMatrix::from_diagonal(&clamped) * q_mat.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

/// Assignment of groups to `k` disjoint evaluation folds (0-based fold indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    assignments: BTreeMap<String, usize>,
    k: usize,
}

impl FoldPartition {
    pub fn new(assignments: BTreeMap<String, usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("fold count must be positive".into()));
        }
        let mut sizes = vec![0usize; k];
        for (id, &fold) in &assignments {
            if fold >= k {
                return Err(Error::InvalidConfig(format!(
                    "group '{id}' assigned to fold {fold} but only {k} folds exist"
                )));
            }
            sizes[fold] += 1;
        }
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        if *min == 0 {
            return Err(Error::InvalidConfig("every fold must be non-empty".into()));
        }
        if max - min > 1 {
            return Err(Error::InvalidConfig(format!(
                "fold sizes differ by more than one ({min}..{max})"
            )));
        }
        Ok(FoldPartition { assignments, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, group_id: &str) -> Option<usize> {
        self.assignments.get(group_id).copied()
    }

    pub fn assignments(&self) -> &BTreeMap<String, usize> {
        &self.assignments
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Dataset indices of each fold's members, in dataset order. Fails if the
    /// partition does not cover exactly the dataset's groups.
    pub fn members(&self, dataset: &GroupedDataset) -> Result<Vec<Vec<usize>>> {
        if self.assignments.len() != dataset.n_groups() {
            return Err(Error::InvalidConfig(format!(
                "partition covers {} groups, dataset has {}",
                self.assignments.len(),
                dataset.n_groups()
            )));
        }
        let mut folds = vec![Vec::new(); self.k];
        for (idx, g) in dataset.groups().iter().enumerate() {
            let fold = self.fold_of(&g.group_id).ok_or_else(|| {
                Error::InvalidConfig(format!("group '{}' missing from partition", g.group_id))
            })?;
            folds[fold].push(idx);
        }
        Ok(folds)
    }
}
