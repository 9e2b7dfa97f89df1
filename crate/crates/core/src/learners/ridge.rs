//! Ridge regression with an unpenalized intercept.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix stored row-major in `a` (n × n). Fails on a non-positive pivot.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-13 * scale {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[i * n + k] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[k * n + i] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    z
}

/// Solves `(XcᵀXc + λI) w = Xcᵀ yc` on column-centered data.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    let (n, p) = (x.rows(), x.cols());
    let x_mean: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut xc = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            xc[j] = x.get(i, j) - x_mean[j];
        }
        let yc = y[i] - y_mean;
        for j in 0..p {
            rhs[j] += xc[j] * yc;
            let xj = xc[j];
            if xj != 0.0 {
                for k in 0..=j {
                    gram[j * p + k] += xj * xc[k];
                }
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            gram[k * p + j] = gram[j * p + k];
        }
        gram[j * p + j] += lambda;
    }

    let l = cholesky(&gram, p).ok_or_else(|| {
        Error::numerical(format!(
            "ridge normal equations are singular at lambda = {lambda}; use lambda > 0"
        ))
    })?;
    let mut w = cholesky_solve(&l, p, &rhs);
    // One step of iterative refinement.
    let resid: Vec<f64> = (0..p)
        .map(|j| rhs[j] - (0..p).map(|k| gram[j * p + k] * w[k]).sum::<f64>())
        .collect();
    let dw = cholesky_solve(&l, p, &resid);
    for (wi, d) in w.iter_mut().zip(dw) {
        *wi += d;
    }

    let intercept = y_mean - x_mean.iter().zip(&w).map(|(m, wi)| m * wi).sum::<f64>();
    Ok(RidgeModel {
        weights: w,
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let m = fit_ridge(&x, &[0.0, 1.0], 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
        assert!((m.predict_row(&[0.5]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_without_penalty() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let err = fit_ridge(&x, &[1.0, 2.0, 3.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"));
        assert!(fit_ridge(&x, &[1.0, 2.0, 3.0], 0.5).is_ok());
    }
}
