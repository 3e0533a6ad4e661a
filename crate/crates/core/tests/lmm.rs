mod common;

use nalgebra::{DMatrix, DVector};
use plmm_dml::data::Theta;
use plmm_dml::lmm::{
    beta_covariance, build_v, estimate_t0, fit_variance_components, log_likelihood, score, solve_beta_gls,
    GroupResiduals, ResidualSet,
};
use plmm_dml::Error;
use proptest::prelude::*;

use common::*;

fn rebuild(res: &ResidualSet, groups: Vec<GroupResiduals>) -> ResidualSet {
    assert_eq!(groups.len(), res.groups().len());
    ResidualSet::new(groups).unwrap()
}

fn sizes_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=6, 1..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_gradient_of_loglik(seed in any::<u64>(), sizes in sizes_strategy(), q in 1usize..=3, d in 1usize..=2) {
        let mut rng = rng(seed);
        let res = random_residuals(&mut rng, &sizes, d, q);
        let beta = DVector::from_fn(d, |_, _| normal(&mut rng));
        let sigma2 = uniform(&mut rng, 0.1, 10.0);
        let sigma = random_spd(&mut rng, q, 0.2);
        let s = score(&res, &Theta::new(beta.clone(), sigma2, sigma.clone()).unwrap()).unwrap();
        let h = 1e-5;
        let ll = |b: DVector<f64>, s2: f64, m: DMatrix<f64>| log_likelihood(&res, &Theta::new(b, s2, m).unwrap()).unwrap();
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = h;
            let fd = (ll(&beta + &e, sigma2, sigma.clone()) - ll(&beta - &e, sigma2, sigma.clone())) / (2.0 * h);
            prop_assert!((s[j] - fd).abs() <= 1e-5 * s[j].abs().max(1.0));
        }
        let fd = (ll(beta.clone(), sigma2 + h, sigma.clone()) - ll(beta.clone(), sigma2 - h, sigma.clone())) / (2.0 * h);
        prop_assert!((s[d] - fd).abs() <= 1e-5 * s[d].abs().max(1.0));
    }

    #[test]
    fn sigma2_profile_identity(seed in any::<u64>(), sizes in sizes_strategy(), q in 1usize..=3) {
        let mut rng = rng(seed);
        let res = random_residuals(&mut rng, &sizes, 1, q);
        let sigma = random_spd(&mut rng, q, 0.1);
        let beta = DVector::from_element(1, normal(&mut rng));
        let mut quad = 0.0;
        for g in res.groups() {
            let r = &g.r_y - &g.r_x * &beta;
            let v = build_v(&g.z, &sigma);
            quad += r.dot(&v.lu().solve(&r).unwrap());
        }
        let s2_hat = quad / res.n_total() as f64;
        let theta = Theta::new(beta.clone(), s2_hat, sigma.clone()).unwrap();
        let psi = score(&res, &theta).unwrap();
        prop_assert!(psi[1].abs() <= 1e-8 * (res.n_total() as f64 / s2_hat).max(1.0), "psi_sigma2 = {}", psi[1]);
        let at = log_likelihood(&res, &theta).unwrap();
        for f in [0.9, 1.1] {
            let other = Theta::new(beta.clone(), s2_hat * f, sigma.clone()).unwrap();
            prop_assert!(log_likelihood(&res, &other).unwrap() < at);
        }
    }

    #[test]
    fn loglik_invariant_to_permutations(seed in any::<u64>(), sizes in sizes_strategy(), q in 1usize..=3) {
        let mut rng = rng(seed);
        let res = random_residuals(&mut rng, &sizes, 2, q);
        let theta = Theta::new(
            DVector::from_fn(2, |_, _| normal(&mut rng)),
            uniform(&mut rng, 0.1, 10.0),
            random_spd(&mut rng, q, 0.0),
        )
        .unwrap();
        let base = log_likelihood(&res, &theta).unwrap();

        let mut groups = res.groups().to_vec();
        groups.reverse();
        let shuffled = rebuild(&res, groups.clone());
        prop_assert!((log_likelihood(&shuffled, &theta).unwrap() - base).abs() <= 1e-12 * base.abs().max(1.0));

        // reverse the rows of every group, Z included
        for g in &mut groups {
            let n = g.n_obs();
            let rev = |m: &DMatrix<f64>| DMatrix::from_fn(n, m.ncols(), |i, j| m[(n - 1 - i, j)]);
            g.r_x = rev(&g.r_x);
            g.z = rev(&g.z);
            g.r_y = DVector::from_fn(n, |i, _| g.r_y[n - 1 - i]);
        }
        let flipped = rebuild(&res, groups);
        prop_assert!((log_likelihood(&flipped, &theta).unwrap() - base).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn gls_solution_zeroes_beta_score_and_ignores_sigma2(seed in any::<u64>(), q in 1usize..=3) {
        let mut rng = rng(seed);
        let res = random_residuals(&mut rng, &[5, 6, 4], 2, q);
        let sigma = random_spd(&mut rng, q, 0.0);
        let beta = solve_beta_gls(&res, 1.0, &sigma).unwrap();
        prop_assert_eq!(&beta, &solve_beta_gls(&res, 10.0, &sigma).unwrap());
        let psi = score(&res, &Theta::new(beta.clone(), 1.0, sigma.clone()).unwrap()).unwrap();
        let scale: f64 = res.groups().iter().map(|g| g.r_x.norm() * g.r_y.norm()).sum();
        prop_assert!(psi.rows(0, 2).amax() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn covariance_equals_scaled_inverse_t0(seed in any::<u64>(), q in 1usize..=3, sigma2 in 0.1f64..10.0) {
        let mut rng = rng(seed);
        let res = random_residuals(&mut rng, &[4, 7, 3], 2, q);
        let sigma = random_spd(&mut rng, q, 0.0);
        let cov = beta_covariance(&res, sigma2, &sigma).unwrap();
        let t0 = estimate_t0(&res, &sigma).unwrap();
        let expected = t0.try_inverse().unwrap() * (sigma2 / res.n_total() as f64);
        prop_assert!((&cov - &expected).amax() <= 1e-12 * expected.amax());
        prop_assert!((&cov - cov.transpose()).amax() <= 1e-14 * cov.amax());
    }
}

fn random_intercept_data(seed: u64, n_groups: usize, n_i: usize, tau: f64, beta: f64) -> ResidualSet {
    let mut rng = rng(seed);
    let groups = (0..n_groups)
        .map(|i| {
            let b = tau * normal(&mut rng);
            let x = normal_matrix(&mut rng, n_i, 1);
            let y = DVector::from_fn(n_i, |r, _| beta * x[(r, 0)] + b + normal(&mut rng));
            GroupResiduals {
                group_id: i.to_string(),
                fold: None,
                r_x: x,
                r_y: y,
                z: DMatrix::from_element(n_i, 1, 1.0),
            }
        })
        .collect();
    ResidualSet::new(groups).unwrap()
}

#[test]
fn zero_random_effects_recovered() {
    // 20 replicates with Σ₀ = 0, σ₀² = 1 and N_T = 2000
    for rep in 0..20 {
        let mut rng = rng(500 + rep);
        let groups = (0..200)
            .map(|i| {
                let n = 10;
                let z = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { normal(&mut rng) });
                let x = normal_matrix(&mut rng, n, 1);
                let y = DVector::from_fn(n, |r, _| 0.7 * x[(r, 0)] + normal(&mut rng));
                GroupResiduals { group_id: i.to_string(), fold: None, r_x: x, r_y: y, z }
            })
            .collect();
        let res = ResidualSet::new(groups).unwrap();
        let fit = fit_variance_components(&res).unwrap();
        assert!(fit.converged);
        for k in 0..2 {
            assert!(fit.theta.sigma_mat[(k, k)] <= 0.05, "rep {rep}: Σ̂ = {}", fit.theta.sigma_mat);
        }
        assert!((fit.theta.sigma2 - 1.0).abs() < 0.1, "rep {rep}: σ̂² = {}", fit.theta.sigma2);
    }
}

#[test]
fn interior_optimum_is_stationary() {
    let res = random_intercept_data(8, 60, 6, 1.5, -0.4);
    let fit = fit_variance_components(&res).unwrap();
    assert!(fit.converged);
    let s = score(&res, &fit.theta).unwrap();
    assert!(s.amax() <= 1e-6 * res.n_total() as f64, "score {s}");
    assert!(fit.theta.sigma_mat[(0, 0)] > 0.5);
    assert_eq!(fit.theta.beta, solve_beta_gls(&res, fit.theta.sigma2, &fit.theta.sigma_mat).unwrap());
    assert!((fit.loglik - log_likelihood(&res, &fit.theta).unwrap()).abs() < 1e-9);
    assert!((fit.theta.beta[0] + 0.4).abs() < 0.2);

    // no nearby point is better
    for (ds2, dsig) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.01), (0.0, -0.01)] {
        let s2 = fit.theta.sigma2 + ds2;
        let sig = DMatrix::from_element(1, 1, fit.theta.sigma_mat[(0, 0)] + dsig);
        let beta = solve_beta_gls(&res, s2, &sig).unwrap();
        let other = log_likelihood(&res, &Theta::new(beta, s2, sig).unwrap()).unwrap();
        assert!(other <= fit.loglik + 1e-10);
    }
}

#[test]
fn full_design_with_three_random_effects() {
    let mut rng = rng(77);
    let sds = [1.5, 1.8, 1.8];
    let groups = (0..150)
        .map(|i| {
            let n = 14;
            let z = plmm_dml::sim::build_z(n);
            let b = DVector::from_fn(3, |k, _| sds[k] * normal(&mut rng));
            let x = normal_matrix(&mut rng, n, 1);
            let zb = &z * b;
            let y = DVector::from_fn(n, |r, _| 0.5 * x[(r, 0)] + zb[r] + normal(&mut rng));
            GroupResiduals { group_id: i.to_string(), fold: None, r_x: x, r_y: y, z }
        })
        .collect();
    let res = ResidualSet::new(groups).unwrap();
    let fit = fit_variance_components(&res).unwrap();
    assert!(fit.converged, "{:?}", fit.warnings);
    assert!((fit.theta.beta[0] - 0.5).abs() < 4.0 * fit.beta_cov[(0, 0)].sqrt());
    assert!((fit.theta.sigma2 - 1.0).abs() < 0.15);
    let eig = fit.theta.sigma_mat.clone().symmetric_eigenvalues();
    assert!(eig.min() >= -1e-10);
}

#[test]
fn zero_residuals_hit_the_variance_floor_or_fail() {
    let groups = (0..4)
        .map(|i| GroupResiduals {
            group_id: i.to_string(),
            fold: None,
            r_x: DMatrix::from_fn(3, 1, |r, _| (r + i) as f64),
            r_y: DVector::zeros(3),
            z: DMatrix::from_element(3, 1, 1.0),
        })
        .collect();
    let res = ResidualSet::new(groups).unwrap();
    match fit_variance_components(&res) {
        Ok(fit) => {
            assert!(fit.theta.sigma2 <= 1e-10);
            assert_eq!(fit.theta.beta[0], 0.0);
        }
        Err(e) => assert!(matches!(e, Error::Numerical(_) | Error::NonConvergence { .. }), "{e}"),
    }
}

#[test]
fn too_few_rows_for_the_parameters() {
    let mut rng = rng(1);
    let res = random_residuals(&mut rng, &[2, 2], 2, 2);
    assert!(matches!(fit_variance_components(&res), Err(Error::TooFewObservations { .. })));
}
