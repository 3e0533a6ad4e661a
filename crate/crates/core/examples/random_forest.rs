//! Fit the CART forest to a noisy step function and compare with the
//! linear learner on held-out points.

use nalgebra::DMatrix;
use plmm_dml::learners::{fit_learner, LearnerSpec};
use plmm_dml::seed::rng_from;
use rand::Rng;
use rand_distr::StandardNormal;

fn truth(w: &[f64]) -> f64 {
    if w[0] > 0.0 {
        2.0
    } else {
        -1.0
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rng_from(11, &[]);
    let n = 600;
    let w = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|i| truth(&[w[(i, 0)]]) + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let forest = fit_learner(&LearnerSpec::random_forest().with_trees(200), &w, &y, &mut rng)?;
    let linear = fit_learner(&LearnerSpec::linear(), &w, &y, &mut rng)?;

    let (mut se_rf, mut se_lin) = (0.0, 0.0);
    let test = 2000;
    for _ in 0..test {
        let p: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        se_rf += (forest.predict_row(&p) - truth(&p)).powi(2);
        se_lin += (linear.predict_row(&p) - truth(&p)).powi(2);
    }
    println!("held-out MSE against the true mean");
    println!("  random forest  {:.4}", se_rf / test as f64);
    println!("  linear         {:.4}", se_lin / test as f64);
    Ok(())
}
