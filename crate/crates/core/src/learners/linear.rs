use nalgebra::{DMatrix, DVector};

/// Ridge penalty on the centred normal equations; only there so singular
/// designs still produce a fit.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Affine least-squares fit `y ≈ intercept + w·coef`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: DVector<f64>,
}

impl LinearModel {
    pub fn fit(features: &DMatrix<f64>, targets: &[f64]) -> LinearModel {
        let (m, v) = features.shape();
        let mf = m as f64;
        let y_mean = targets.iter().sum::<f64>() / mf;
        let x_mean = DVector::from_fn(v, |j, _| features.column(j).sum() / mf);

        let mut centred = features.clone();
        for j in 0..v {
            centred.column_mut(j).add_scalar_mut(-x_mean[j]);
        }
        let yc = DVector::from_iterator(m, targets.iter().map(|t| t - y_mean));

        let mut gram = centred.transpose() * &centred;
        for j in 0..v {
            gram[(j, j)] += RIDGE_LAMBDA;
        }
        let rhs = centred.transpose() * yc;
        let coef = match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => gram
                .pseudo_inverse(1e-12)
                .map(|p| p * &rhs)
                .unwrap_or_else(|_| DVector::zeros(v)),
        };
        let intercept = y_mean - x_mean.dot(&coef);
        LinearModel { intercept, coef }
    }

    pub fn predict_row(&self, w: &[f64]) -> f64 {
        self.intercept + w.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum::<f64>()
    }
}
