//! Synthetic partially linear mixed-effects data.
//!
//! For group i with n_i rows:
//!
//! ```text
//! W rows ~ N₃(0, I)
//! X = h(W) + ε_X,                 ε_X ~ N(0, I)
//! Y = X β₀ + g(W) + Z b + ε,      b ~ N₃(0, diag(1.5², 1.8², 1.8²)),  ε ~ N(0, σ₀² I)
//! ```
//!
//! Z has a random intercept (third column) and a two-level nested effect:
//! the first ⌊n_i/2⌋ rows are (1, 0, 1), the rest (0, 1, 1).
//!
//! Each group draws from its own stream `derive(seed, [GROUP, i])` in the
//! order W, ε_X, b, ε, so scenarios sharing a seed and group sizes share
//! every draw. Group sizes come from `derive(seed, [SIZES])`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{Group, GroupedDataset};
use crate::error::{Error, Result};
use crate::learners::{NuisanceModel, OracleHooks, RowFn};
use crate::seed::{self, tag, Rng};

pub const RANDOM_EFFECT_SDS: [f64; 3] = [1.5, 1.8, 1.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    NonsmoothBalanced,
    SmoothBalanced,
    NonsmoothUnbalanced,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::NonsmoothBalanced,
        ScenarioKind::SmoothBalanced,
        ScenarioKind::NonsmoothUnbalanced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::NonsmoothBalanced => "nonsmooth_balanced",
            ScenarioKind::SmoothBalanced => "smooth_balanced",
            ScenarioKind::NonsmoothUnbalanced => "nonsmooth_unbalanced",
        }
    }

    pub fn is_smooth(self) -> bool {
        self == ScenarioKind::SmoothBalanced
    }

    pub fn is_balanced(self) -> bool {
        self != ScenarioKind::NonsmoothUnbalanced
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    pub n_groups: usize,
    pub base_n: usize,
    pub beta0: f64,
    pub sigma0: f64,
    pub random_effect_sds: [f64; 3],
}

impl SimScenario {
    /// n = 15, β₀ = 0.5, σ₀ = 1.
    pub fn new(kind: ScenarioKind, n_groups: usize) -> Self {
        SimScenario {
            kind,
            n_groups,
            base_n: 15,
            beta0: 0.5,
            sigma0: 1.0,
            random_effect_sds: RANDOM_EFFECT_SDS,
        }
    }

    pub fn g(&self, w: &[f64]) -> f64 {
        if self.kind.is_smooth() {
            eval_g_smooth(w)
        } else {
            eval_g_nonsmooth(w)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_groups < 2 {
            return Err(Error::InvalidConfig("simulation needs at least 2 groups".into()));
        }
        if self.kind.is_balanced() && self.base_n < 4 {
            return Err(Error::InvalidConfig("balanced designs need base_n >= 4".into()));
        }
        if self.base_n == 0 || !(self.sigma0 > 0.0) {
            return Err(Error::InvalidConfig("base_n and sigma0 must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant covariate mean E[X | W = w].
pub fn eval_h(w: &[f64]) -> f64 {
    let (w1, w2, w3) = (w[0], w[1], w[2]);
    if w3 > 0.0 {
        if w1 > 0.0 {
            -3.0
        } else {
            2.0
        }
    } else if w3 <= -1.0 {
        -1.0
    } else if w2 > 0.0 {
        -2.0
    } else if w1 > 0.75 {
        -3.0
    } else {
        1.0
    }
}

/// Piecewise-constant confounding function.
///
/// The source leaves one threshold of the −0.5 branch blank; it is read as
/// w₂ ≤ 0, matching the neighbouring −2.7 branch.
pub fn eval_g_nonsmooth(w: &[f64]) -> f64 {
    let (w1, w2, w3) = (w[0], w[1], w[2]);
    if w1 > 0.0 {
        if w2 > 0.0 {
            if w3 > 1.0 {
                1.0
            } else {
                -1.5
            }
        } else if w2 > -0.5 {
            0.75
        } else if w1 <= 1.0 {
            3.2
        } else if w3 > 1.25 {
            -2.7
        } else {
            -0.5
        }
    } else if w3 > 0.0 {
        if w2 > -1.0 {
            -2.3
        } else if w1 <= -1.3 {
            3.0
        } else {
            1.5
        }
    } else if w3 <= -0.75 {
        2.8
    } else if w1 <= -0.5 {
        2.0
    } else {
        -1.75
    }
}

/// Smooth, non-additive stand-in: 2 sin(w₁) + tanh(w₂w₃) − cos(w₁ + w₂).
/// Bounded by 4 in absolute value.
pub fn eval_g_smooth(w: &[f64]) -> f64 {
    2.0 * w[0].sin() + (w[1] * w[2]).tanh() - (w[0] + w[1]).cos()
}

/// Balanced: uniform on {n−3, …, n+3}; unbalanced: uniform on {1, …, 2n−1}.
pub fn gen_group_sizes(scenario: &SimScenario, rng: &mut Rng) -> Vec<usize> {
    let n = scenario.base_n;
    let (lo, hi) = if scenario.kind.is_balanced() {
        (n - 3, n + 3)
    } else {
        (1, 2 * n - 1)
    };
    (0..scenario.n_groups).map(|_| rng.random_range(lo..=hi)).collect()
}

pub fn build_z(n_i: usize) -> DMatrix<f64> {
    let first = n_i / 2;
    DMatrix::from_fn(n_i, 3, |r, c| match c {
        0 => f64::from(u8::from(r < first)),
        1 => f64::from(u8::from(r >= first)),
        _ => 1.0,
    })
}

fn gen_group(scenario: &SimScenario, index: usize, n_i: usize, rng: &mut Rng) -> Group {
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let mut w = DMatrix::zeros(n_i, 3);
    for r in 0..n_i {
        for c in 0..3 {
            w[(r, c)] = normal();
        }
    }
    let eps_x: Vec<f64> = (0..n_i).map(|_| normal()).collect();
    let b: Vec<f64> = scenario.random_effect_sds.iter().map(|sd| sd * normal()).collect();
    let eps: Vec<f64> = (0..n_i).map(|_| scenario.sigma0 * normal()).collect();

    let z = build_z(n_i);
    let mut x = DMatrix::zeros(n_i, 1);
    let mut y = DVector::zeros(n_i);
    for r in 0..n_i {
        let row = [w[(r, 0)], w[(r, 1)], w[(r, 2)]];
        x[(r, 0)] = eval_h(&row) + eps_x[r];
        let zb: f64 = (0..3).map(|c| z[(r, c)] * b[c]).sum();
        y[r] = x[(r, 0)] * scenario.beta0 + scenario.g(&row) + zb + eps[r];
    }
    Group::new(format!("{}", index + 1), y, x, w, z)
}

pub fn gen_dataset(scenario: &SimScenario, seed: u64) -> Result<GroupedDataset> {
    scenario.validate()?;
    let sizes = gen_group_sizes(scenario, &mut seed::rng_from(seed, &[tag::SIZES]));
    let groups: Vec<Group> = sizes
        .par_iter()
        .enumerate()
        .map(|(i, &n_i)| {
            let mut rng = seed::rng_from(seed, &[tag::GROUP, i as u64]);
            gen_group(scenario, i, n_i, &mut rng)
        })
        .collect();
    GroupedDataset::new(groups)
}

/// The true conditional means: m_X = h and m_Y = β₀ h + g.
pub fn oracle_hooks(scenario: &SimScenario) -> OracleHooks {
    let beta0 = scenario.beta0;
    let smooth = scenario.kind.is_smooth();
    let m_x: RowFn = Arc::new(eval_h);
    let m_y: RowFn = Arc::new(move |w: &[f64]| {
        let g = if smooth { eval_g_smooth(w) } else { eval_g_nonsmooth(w) };
        beta0 * eval_h(w) + g
    });
    OracleHooks {
        m_x: vec![m_x],
        m_y,
    }
}

pub fn oracle_nuisance(scenario: &SimScenario) -> NuisanceModel {
    let hooks = oracle_hooks(scenario);
    NuisanceModel::from_functions(hooks.m_x, hooks.m_y)
}
