use crate::error::{Error, Result};
use crate::series::{build_features, LagWindowSpec};

use super::{check_shape, BaseForecaster, Features, FitReport};

/// Linear autoregression over a lag window, fitted by ordinary least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAr {
    lag_spec: LagWindowSpec,
    intercept: f64,
    coefficients: Vec<f64>,
}

impl LinearAr {
    pub fn new(lag_spec: LagWindowSpec, intercept: f64, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != lag_spec.total_lags() {
            return Err(Error::ShapeMismatch {
                expected: lag_spec.total_lags(),
                actual: coefficients.len(),
            });
        }
        Ok(LinearAr {
            lag_spec,
            intercept,
            coefficients,
        })
    }

    /// Least-squares fit of `v[t]` on the lagged values for every `t` with
    /// full history. The regression is solved on mean-centred data so the
    /// intercept absorbs any bias; if the centred normal matrix is not
    /// positive definite, a ridge term `1e-8 * trace / cols` is added to the
    /// lag coefficients only.
    pub fn fit(train: &[f64], lag_spec: &LagWindowSpec) -> Result<(Self, FitReport)> {
        let max_lag = lag_spec.max_lag();
        if train.len() <= max_lag {
            return Err(Error::TooShort {
                len: train.len(),
                needed: max_lag + 1,
            });
        }
        let p = lag_spec.total_lags();
        let rows: Vec<(Vec<f64>, f64)> = (max_lag..train.len())
            .map(|t| {
                let x: Vec<f64> = build_features(train, t, lag_spec)
                    .expect("history checked above")
                    .into_iter()
                    .flatten()
                    .collect();
                (x, train[t])
            })
            .collect();
        let m = rows.len() as f64;

        let mut x_mean = vec![0.0; p];
        let mut y_mean = 0.0;
        for (x, y) in &rows {
            for (acc, v) in x_mean.iter_mut().zip(x) {
                *acc += v;
            }
            y_mean += y;
        }
        x_mean.iter_mut().for_each(|v| *v /= m);
        y_mean /= m;

        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        for (x, y) in &rows {
            let xc: Vec<f64> = x.iter().zip(&x_mean).map(|(a, b)| a - b).collect();
            let yc = y - y_mean;
            for i in 0..p {
                rhs[i] += xc[i] * yc;
                for j in 0..=i {
                    gram[i * p + j] += xc[i] * xc[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                gram[j * p + i] = gram[i * p + j];
            }
        }

        let mut ridge = None;
        let coefficients = match cholesky_solve(&gram, &rhs, p) {
            Some(beta) => beta,
            None => {
                let trace: f64 = (0..p).map(|i| gram[i * p + i]).sum();
                let lambda = 1e-8 * trace / p as f64;
                ridge = Some(lambda);
                if lambda > 0.0 {
                    let mut regularized = gram.clone();
                    for i in 0..p {
                        regularized[i * p + i] += lambda;
                    }
                    cholesky_solve(&regularized, &rhs, p).ok_or_else(|| {
                        Error::Divergence("ridge-regularized normal equations still singular".into())
                    })?
                } else {
                    // zero variance in every lag: intercept-only model
                    vec![0.0; p]
                }
            }
        };
        let intercept = y_mean - coefficients.iter().zip(&x_mean).map(|(b, x)| b * x).sum::<f64>();
        if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Divergence("non-finite least-squares solution".into()));
        }

        let model = LinearAr {
            lag_spec: lag_spec.clone(),
            intercept,
            coefficients,
        };
        let mse = rows
            .iter()
            .map(|(x, y)| (model.evaluate(x) - y).powi(2))
            .sum::<f64>()
            / m;
        Ok((
            model,
            FitReport {
                final_loss: mse,
                epochs: 0,
                ridge_lambda: ridge,
                validation_loss: None,
            },
        ))
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    fn evaluate(&self, flat: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(flat).map(|(c, x)| c * x).sum::<f64>()
    }
}

impl BaseForecaster for LinearAr {
    fn name(&self) -> &'static str {
        "linear-ar"
    }

    fn lag_spec(&self) -> &LagWindowSpec {
        &self.lag_spec
    }

    fn predict_one(&self, features: &Features) -> Result<f64> {
        check_shape(&self.lag_spec, features)?;
        let flat: Vec<f64> = features.lags.iter().flatten().copied().collect();
        Ok(self.evaluate(&flat))
    }

    fn parameter_count(&self) -> usize {
        self.coefficients.len() + 1
    }
}

/// Solves `A x = b` for symmetric `A` (row-major, `n x n`) by Cholesky
/// factorization. Returns `None` when a pivot is not safely positive.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0_f64, f64::max);
    if max_diag <= 0.0 {
        return None;
    }
    let tol = 1e-12 * max_diag;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= tol {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}
