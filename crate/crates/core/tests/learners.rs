mod common;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use plmm_dml::data::Group;
use plmm_dml::learners::{fit_learner, fit_nuisance, residualize, LearnerSpec, NuisanceModel, OracleHooks, RowFn};
use plmm_dml::seed::rng_from;
use proptest::prelude::*;

use common::*;

fn groups_from(w: &DMatrix<f64>, x: &DMatrix<f64>, y: &DVector<f64>, per_group: usize) -> Vec<Group> {
    (0..y.len() / per_group)
        .map(|g| {
            let rows = g * per_group;
            Group::new(
                format!("g{g}"),
                y.rows(rows, per_group).into_owned(),
                x.rows(rows, per_group).into_owned(),
                w.rows(rows, per_group).into_owned(),
                DMatrix::from_element(per_group, 1, 1.0),
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forest_stays_in_target_hull(seed in any::<u64>(), rows in 8usize..80, min_node in 1usize..8, bootstrap in any::<bool>()) {
        let mut rng = rng(seed);
        let w = normal_matrix(&mut rng, rows, 3);
        let y: Vec<f64> = (0..rows).map(|_| normal(&mut rng) * 5.0).collect();
        let spec = LearnerSpec { rf_bootstrap: bootstrap, ..LearnerSpec::random_forest().with_trees(15).with_min_node_size(min_node) };
        let forest = fit_learner(&spec, &w, &y, &mut rng_from(seed, &[])).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for _ in 0..50 {
            let p: Vec<f64> = (0..3).map(|_| normal(&mut rng) * 3.0).collect();
            let pred = forest.predict_row(&p);
            prop_assert!(lo <= pred && pred <= hi);
        }
    }

    #[test]
    fn nuisance_fit_is_deterministic(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let w = normal_matrix(&mut rng, 60, 3);
        let x = normal_matrix(&mut rng, 60, 2);
        let y = DVector::from_fn(60, |_, _| normal(&mut rng));
        let groups = groups_from(&w, &x, &y, 6);
        let refs: Vec<&Group> = groups.iter().collect();
        let spec = LearnerSpec::random_forest().with_trees(10);
        let a = fit_nuisance(&refs, &spec, &mut rng_from(seed, &[1])).unwrap();
        let b = fit_nuisance(&refs, &spec, &mut rng_from(seed, &[1])).unwrap();
        let probe = normal_matrix(&mut rng, 20, 3);
        prop_assert_eq!(a.predict_x(&probe), b.predict_x(&probe));
        prop_assert_eq!(a.predict_y(&probe), b.predict_y(&probe));
    }

    #[test]
    fn residualize_is_shift_linear(seed in any::<u64>(), c in -5.0f64..5.0) {
        let mut rng = rng(seed);
        let w = normal_matrix(&mut rng, 24, 2);
        let x = normal_matrix(&mut rng, 24, 1);
        let y = DVector::from_fn(24, |_, _| normal(&mut rng));
        let groups = groups_from(&w, &x, &y, 4);
        let shifted: Vec<Group> = groups
            .iter()
            .map(|g| Group { x: g.x.add_scalar(c), y: g.y.add_scalar(c), ..g.clone() })
            .collect();
        let m_x: RowFn = Arc::new(|w: &[f64]| w[0].sin() + w[1]);
        let m_y: RowFn = Arc::new(|w: &[f64]| w[0] * w[1]);
        let base = NuisanceModel::from_functions(vec![m_x.clone()], m_y.clone());
        let moved = NuisanceModel::from_functions(
            vec![Arc::new(move |w: &[f64]| m_x(w) + c)],
            Arc::new(move |w: &[f64]| m_y(w) + c),
        );
        let a = residualize(&base, &groups.iter().collect::<Vec<_>>()).unwrap();
        let b = residualize(&moved, &shifted.iter().collect::<Vec<_>>()).unwrap();
        for (ga, gb) in a.groups().iter().zip(b.groups()) {
            prop_assert!((&ga.r_x - &gb.r_x).amax() < 1e-12);
            prop_assert!((&ga.r_y - &gb.r_y).amax() < 1e-12);
        }
    }
}

#[test]
fn linear_slope_within_three_standard_errors() {
    let mut rng = rng(31);
    let n = 400;
    let w = normal_matrix(&mut rng, n, 1);
    let y: Vec<f64> = (0..n).map(|i| 2.0 + 3.0 * w[(i, 0)] + normal(&mut rng)).collect();
    let fit = fit_learner(&LearnerSpec::linear(), &w, &y, &mut rng_from(0, &[])).unwrap();
    let slope = fit.predict_row(&[1.0]) - fit.predict_row(&[0.0]);
    let mean = w.column(0).mean();
    let sxx: f64 = w.column(0).iter().map(|v| (v - mean).powi(2)).sum();
    let se = 1.0 / sxx.sqrt();
    assert!((slope - 3.0).abs() < 3.0 * se, "slope {slope}, se {se}");
}

#[test]
fn oracle_learner_passes_functions_through() {
    let mut rng = rng(5);
    let w = normal_matrix(&mut rng, 12, 3);
    let x = normal_matrix(&mut rng, 12, 2);
    let y = DVector::from_fn(12, |_, _| normal(&mut rng));
    let groups = groups_from(&w, &x, &y, 3);
    let refs: Vec<&Group> = groups.iter().collect();
    let hooks = OracleHooks {
        m_x: vec![Arc::new(|w: &[f64]| w[0]), Arc::new(|w: &[f64]| w[1] * 2.0)],
        m_y: Arc::new(|w: &[f64]| w[2] - 1.0),
    };
    let model = fit_nuisance(&refs, &LearnerSpec::oracle(hooks), &mut rng_from(0, &[])).unwrap();
    let probe = [0.3, -1.2, 4.0];
    assert_eq!(model.m_x.len(), 2);
    assert_eq!(model.m_x[0].predict_row(&probe), 0.3);
    assert_eq!(model.m_x[1].predict_row(&probe), -2.4);
    assert_eq!(model.m_y.predict_row(&probe), 3.0);

    let res = residualize(&model, &refs).unwrap();
    let g = &groups[1];
    let r = &res.groups()[1];
    assert_eq!(r.r_x[(0, 1)], g.x[(0, 1)] - 2.0 * g.w[(0, 1)]);
    assert_eq!(r.r_y[2], g.y[2] - (g.w[(2, 2)] - 1.0));
}

#[test]
fn two_column_x_gets_two_forests() {
    let mut rng = rng(6);
    let w = normal_matrix(&mut rng, 80, 3);
    let x = DMatrix::from_fn(80, 2, |i, j| if j == 0 { w[(i, 0)] * 2.0 } else { -w[(i, 1)] });
    let y = DVector::from_fn(80, |i, _| w[(i, 2)]);
    let groups = groups_from(&w, &x, &y, 8);
    let refs: Vec<&Group> = groups.iter().collect();
    let model = fit_nuisance(&refs, &LearnerSpec::linear(), &mut rng_from(0, &[])).unwrap();
    let pred = model.predict_x(&DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]));
    assert_eq!(pred.shape(), (1, 2));
    assert!((pred[(0, 0)] - 2.0).abs() < 1e-6 && (pred[(0, 1)] + 1.0).abs() < 1e-6);
}
