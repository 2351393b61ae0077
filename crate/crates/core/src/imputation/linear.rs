//! Ordinary least squares baseline for the imputation benchmark.

use serde::{Deserialize, Serialize};

use super::ImputeError;
use crate::linalg::least_squares;

/// Linear model fitted on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

/// Tiny ridge term that keeps the normal equations solvable when there are
/// about as many features as rows.
const RIDGE: f64 = 1e-6;

pub fn fit_linear(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel, ImputeError> {
    let n = y.len();
    if n == 0 || x.len() != n {
        return Err(ImputeError::Shape { rows: x.len(), targets: n });
    }
    let p = x[0].len();
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        sds[j] = v.sqrt();
    }
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardize(r, &means, &sds)).collect();
    let beta = least_squares(&z, y, RIDGE * n as f64).map_err(|_| ImputeError::Singular)?;
    Ok(LinearModel { intercept: beta[0], coef: beta[1..].to_vec(), means, sds })
}

fn standardize(row: &[f64], means: &[f64], sds: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(means.iter().zip(sds))
        .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
        .collect()
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, ImputeError> {
        if x.len() != self.coef.len() {
            return Err(ImputeError::FeatureCount { expected: self.coef.len(), got: x.len() });
        }
        let z = standardize(x, &self.means, &self.sds);
        Ok(self.intercept + self.coef.iter().zip(&z).map(|(b, v)| b * v).sum::<f64>())
    }
}
