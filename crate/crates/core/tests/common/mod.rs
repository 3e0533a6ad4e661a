//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use plmm_dml::lmm::{GroupResiduals, ResidualSet};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

#[derive(Clone, Copy)]
pub enum Cmp {
    Gt,
    Le,
}

/// One indicator product of the appendix formulas: coefficient and the
/// list of (coordinate, comparison, threshold) factors.
pub type Branch = (f64, &'static [(usize, Cmp, f64)]);

use Cmp::{Gt, Le};

pub const H_BRANCHES: &[Branch] = &[
    (-3.0, &[(2, Gt, 0.0), (0, Gt, 0.0)]),
    (2.0, &[(2, Gt, 0.0), (0, Le, 0.0)]),
    (-1.0, &[(2, Le, 0.0), (2, Le, -1.0)]),
    (-2.0, &[(2, Le, 0.0), (2, Gt, -1.0), (1, Gt, 0.0)]),
    (-3.0, &[(2, Le, 0.0), (2, Gt, -1.0), (1, Le, 0.0), (0, Gt, 0.75)]),
    (1.0, &[(2, Le, 0.0), (2, Gt, -1.0), (1, Le, 0.0), (0, Le, 0.75)]),
];

// The −0.5 branch has a blank threshold in the source, read as w2 ≤ 0.
pub const G_BRANCHES: &[Branch] = &[
    (1.0, &[(0, Gt, 0.0), (1, Gt, 0.0), (2, Gt, 1.0)]),
    (-1.5, &[(0, Gt, 0.0), (1, Gt, 0.0), (2, Le, 1.0)]),
    (-2.7, &[(0, Gt, 0.0), (1, Le, 0.0), (1, Le, -0.5), (0, Gt, 1.0), (2, Gt, 1.25)]),
    (-0.5, &[(0, Gt, 0.0), (1, Le, 0.0), (1, Le, -0.5), (0, Gt, 1.0), (2, Le, 1.25)]),
    (3.2, &[(0, Gt, 0.0), (1, Le, 0.0), (1, Le, -0.5), (0, Le, 1.0)]),
    (0.75, &[(0, Gt, 0.0), (1, Le, 0.0), (1, Gt, -0.5)]),
    (3.0, &[(0, Le, 0.0), (2, Gt, 0.0), (1, Le, -1.0), (0, Le, -1.3)]),
    (1.5, &[(0, Le, 0.0), (2, Gt, 0.0), (1, Le, -1.0), (0, Gt, -1.3)]),
    (-2.3, &[(0, Le, 0.0), (2, Gt, 0.0), (1, Gt, -1.0)]),
    (2.8, &[(0, Le, 0.0), (2, Le, 0.0), (2, Le, -0.75)]),
    (2.0, &[(0, Le, 0.0), (2, Le, 0.0), (2, Gt, -0.75), (0, Le, -0.5)]),
    (-1.75, &[(0, Le, 0.0), (2, Le, 0.0), (2, Gt, -0.75), (0, Gt, -0.5)]),
];

/// Sums every branch and counts how many fired.
pub fn truth_table(branches: &[Branch], w: &[f64]) -> (f64, usize) {
    let mut value = 0.0;
    let mut active = 0;
    for (coef, factors) in branches {
        let on = factors.iter().all(|&(j, cmp, t)| match cmp {
            Gt => w[j] > t,
            Le => w[j] <= t,
        });
        if on {
            value += coef;
            active += 1;
        }
    }
    (value, active)
}

/// Every cut value and its ±0.01 neighbours, per coordinate.
pub fn threshold_grid() -> Vec<[f64; 3]> {
    let around = |cuts: &[f64]| -> Vec<f64> {
        cuts.iter().flat_map(|&c| [c - 0.01, c, c + 0.01]).collect()
    };
    let mut w1 = vec![-1.4];
    w1.extend(around(&[-1.3, -0.5, 0.0, 0.75, 1.0]));
    let w2 = around(&[-1.0, -0.5, 0.0]);
    let w3 = around(&[-1.0, -0.75, 0.0, 1.0, 1.25]);
    let mut grid = Vec::new();
    for &a in &w1 {
        for &b in &w2 {
            for &c in &w3 {
                grid.push([a, b, c]);
            }
        }
    }
    grid
}

/// Random residual set with `sizes[i]` rows in group i.
pub fn random_residuals(rng: &mut ChaCha8Rng, sizes: &[usize], d: usize, q: usize) -> ResidualSet {
    let groups = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| GroupResiduals {
            group_id: format!("g{i}"),
            fold: None,
            r_x: normal_matrix(rng, n, d),
            r_y: DVector::from_fn(n, |_, _| normal(rng)),
            z: normal_matrix(rng, n, q),
        })
        .collect();
    ResidualSet::new(groups).unwrap()
}

/// Random positive definite q×q matrix, eigenvalues bounded below by `floor`.
pub fn random_spd(rng: &mut ChaCha8Rng, q: usize, floor: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, q, q) * 0.7;
    &a * a.transpose() + DMatrix::identity(q, q) * floor
}

/// Stacked OLS through the normal equations, solved by LU.
pub fn stacked_ols(res: &ResidualSet) -> DVector<f64> {
    let d = res.d();
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    for g in res.groups() {
        for r in 0..g.n_obs() {
            for a in 0..d {
                xty[a] += g.r_x[(r, a)] * g.r_y[r];
                for b in 0..d {
                    xtx[(a, b)] += g.r_x[(r, a)] * g.r_x[(r, b)];
                }
            }
        }
    }
    xtx.lu().solve(&xty).expect("full rank design")
}
