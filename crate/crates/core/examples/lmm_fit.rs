//! Maximum-likelihood fit of a random-intercept model on simulated
//! residuals, with the score evaluated at the optimum.

use nalgebra::{DMatrix, DVector};
use plmm_dml::lmm::{fit_variance_components, score, GroupResiduals, ResidualSet};
use plmm_dml::seed::rng_from;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from(3, &[]);
    let (beta, tau, sigma) = (1.5, 2.0, 1.0);
    let mut groups = Vec::new();
    for i in 0..40 {
        let n = 8;
        let b: f64 = tau * rng.sample::<f64, _>(StandardNormal);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |r, _| beta * x[(r, 0)] + b + sigma * rng.sample::<f64, _>(StandardNormal));
        groups.push(GroupResiduals {
            group_id: format!("unit{i}"),
            fold: None,
            r_x: x,
            r_y: y,
            z: DMatrix::from_element(n, 1, 1.0),
        });
    }
    let res = ResidualSet::new(groups)?;
    let fit = fit_variance_components(&res)?;

    println!("beta     {:.4}  (truth {beta})", fit.theta.beta[0]);
    println!("se       {:.4}", fit.beta_cov[(0, 0)].sqrt());
    println!("sigma2   {:.4}  (truth {})", fit.theta.sigma2, sigma * sigma);
    // Σ is the random-effect variance relative to σ²
    println!("Sigma    {:.4}  (truth {})", fit.theta.sigma_mat[(0, 0)], tau * tau / (sigma * sigma));
    println!("loglik   {:.4}", fit.loglik);
    println!("iters    {} (converged: {})", fit.iterations, fit.converged);
    println!("|score|  {:.2e}", score(&res, &fit.theta)?.norm());
    Ok(())
}
