//! Logistic regression by iteratively reweighted least squares.

use serde::{Deserialize, Serialize};

use super::formula::{DesignMatrix, Formula};
use super::{CoefRow, DiagnosticsReport, PropensityError, PropensityModel};
use crate::linalg::{cholesky, cholesky_inverse, cholesky_solve, dependent_columns};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop once the absolute deviance change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Any standardized coefficient beyond this magnitude signals separation.
    pub divergence_limit: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, divergence_limit: 1e3 }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn deviance(eta: &[f64], y: &[f64]) -> f64 {
    2.0 * eta
        .iter()
        .zip(y)
        .map(|(&e, &t)| if t > 0.5 { softplus(-e) } else { softplus(e) })
        .sum::<f64>()
}

fn gradient(x: &[Vec<f64>], y: &[f64], mu: &[f64]) -> Vec<f64> {
    x.iter().map(|col| col.iter().zip(y).zip(mu).map(|((xi, yi), mi)| xi * (yi - mi)).sum()).collect()
}

fn gradient_norm(x: &[Vec<f64>], y: &[f64], eta: &[f64]) -> f64 {
    let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    gradient(x, y, &mu).iter().map(|g| g * g).sum::<f64>().sqrt()
}

fn is_binary(col: &[f64]) -> bool {
    col.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Fits `logit P(W=1) = a + b.x` on the given design. Constant and
/// duplicated columns are dropped (and listed in the model); any remaining
/// linear dependence is an error.
pub fn fit_logistic(
    formula: &Formula,
    design: &DesignMatrix,
    labels: &[u8],
    opts: &FitOptions,
) -> Result<(PropensityModel, DiagnosticsReport), PropensityError> {
    let n = labels.len();
    if design.columns.iter().any(|c| c.len() != n) {
        return Err(PropensityError::Shape);
    }
    let n_treated = labels.iter().filter(|&&w| w == 1).count();
    if n_treated == 0 || n_treated == n {
        return Err(PropensityError::SingleClass);
    }
    let y: Vec<f64> = labels.iter().map(|&w| f64::from(w)).collect();

    // screen constant and duplicate columns
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in design.columns.iter().enumerate() {
        let constant = col.iter().all(|&v| v == col[0]);
        let duplicate = kept.iter().any(|&k| design.columns[k] == *col);
        if constant || duplicate {
            dropped.push(design.names[j].clone());
        } else {
            kept.push(j);
        }
    }

    let mut means = Vec::with_capacity(kept.len());
    let mut sds = Vec::with_capacity(kept.len());
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(kept.len() + 1);
    x.push(vec![1.0; n]);
    for &j in &kept {
        let col = &design.columns[j];
        if is_binary(col) {
            means.push(0.0);
            sds.push(1.0);
            x.push(col.clone());
        } else {
            let m = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
            means.push(m);
            sds.push(sd);
            x.push(col.iter().map(|v| (v - m) / sd).collect());
        }
    }
    let p = x.len();

    let gram = weighted_gram(&x, None);
    let dependent = dependent_columns(&gram, p);
    if !dependent.is_empty() {
        return Err(PropensityError::RankDeficient(
            dependent.iter().map(|&j| design.names[kept[j - 1]].clone()).collect(),
        ));
    }

    let base = n_treated as f64 / n as f64;
    let mut beta = vec![0.0; p];
    beta[0] = (base / (1.0 - base)).ln();
    let mut eta = linear_predictor(&x, &beta);
    let mut dev = deviance(&eta, &y);
    let null_deviance = dev;
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        if w.iter().all(|&v| v < 1e-12) {
            return Err(PropensityError::Separation);
        }
        // Newton step: (X'WX) delta = X'(y - mu)
        let h = weighted_gram(&x, Some(&w));
        let l = cholesky(&h, p).map_err(|_| PropensityError::Separation)?;
        let grad = gradient(&x, &y, &mu);
        let delta = cholesky_solve(&l, p, &grad);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let cand_eta = linear_predictor(&x, &cand);
            let cand_dev = deviance(&cand_eta, &y);
            if cand_dev <= dev {
                accepted = Some((cand, cand_eta, cand_dev));
                break;
            }
            step *= 0.5;
        }
        let Some((b_new, eta_new, dev_new)) = accepted else {
            converged = true;
            break;
        };
        let change = dev - dev_new;
        debug_assert!(dev_new <= dev);
        beta = b_new;
        eta = eta_new;
        dev = dev_new;
        trace.push(dev);
        if beta.iter().any(|b| b.abs() > opts.divergence_limit) {
            return Err(PropensityError::Separation);
        }
        if change.abs() < opts.tol {
            converged = true;
            break;
        }
    }

    // Past the deviance's rounding floor the line search can no longer tell
    // steps apart; finish with plain Newton steps while the gradient shrinks.
    if converged {
        let mut g_norm = gradient_norm(&x, &y, &eta);
        for _ in 0..3 {
            let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
            let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
            let Ok(l) = cholesky(&weighted_gram(&x, Some(&w)), p) else { break };
            let grad = gradient(&x, &y, &mu);
            let cand: Vec<f64> = beta.iter().zip(cholesky_solve(&l, p, &grad)).map(|(b, d)| b + d).collect();
            let cand_eta = linear_predictor(&x, &cand);
            let cand_norm = gradient_norm(&x, &y, &cand_eta);
            if cand_norm >= g_norm {
                break;
            }
            beta = cand;
            eta = cand_eta;
            g_norm = cand_norm;
        }
        dev = deviance(&eta, &y);
    }

    // covariance on the standardized scale, then mapped back
    let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
    let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
    let h = weighted_gram(&x, Some(&w));
    let l = cholesky(&h, p).map_err(|_| PropensityError::Separation)?;
    let cov_std = cholesky_inverse(&l, p);

    // beta_orig = A beta_std
    let mut a = vec![0.0; p * p];
    a[0] = 1.0;
    for j in 1..p {
        a[j] = -means[j - 1] / sds[j - 1];
        a[j * p + j] = 1.0 / sds[j - 1];
    }
    let beta_orig: Vec<f64> = (0..p).map(|i| (0..p).map(|k| a[i * p + k] * beta[k]).sum()).collect();
    let se_orig: Vec<f64> = (0..p)
        .map(|i| {
            let mut v = 0.0;
            for k in 0..p {
                for m in 0..p {
                    v += a[i * p + k] * cov_std[k * p + m] * a[i * p + m];
                }
            }
            v.max(0.0).sqrt()
        })
        .collect();

    let terms: Vec<String> = kept.iter().map(|&j| design.names[j].clone()).collect();
    let mut coefficients = vec![CoefRow { term: "Intercept".into(), coef: beta_orig[0], se: se_orig[0] }];
    coefficients.extend(
        terms.iter().enumerate().map(|(j, t)| CoefRow { term: t.clone(), coef: beta_orig[j + 1], se: se_orig[j + 1] }),
    );
    let scores: Vec<f64> = mu;
    let model = PropensityModel {
        formula: formula.clone(),
        intercept: beta_orig[0],
        terms,
        coef: beta_orig[1..].to_vec(),
        means,
        sds,
        dropped,
    };
    let report = DiagnosticsReport {
        auc: super::diagnostics::auc(&scores, labels)?,
        mcfadden_r2: 1.0 - dev / null_deviance,
        deviance: dev,
        null_deviance,
        iterations,
        converged,
        deviance_trace: trace,
        mean_score: scores.iter().sum::<f64>() / n as f64,
        treated_fraction: base,
        coefficients,
    };
    Ok((model, report))
}

fn linear_predictor(x: &[Vec<f64>], beta: &[f64]) -> Vec<f64> {
    let n = x[0].len();
    let mut eta = vec![0.0; n];
    for (col, &b) in x.iter().zip(beta) {
        if b == 0.0 {
            continue;
        }
        for (e, v) in eta.iter_mut().zip(col) {
            *e += b * v;
        }
    }
    eta
}

fn weighted_gram(x: &[Vec<f64>], w: Option<&[f64]>) -> Vec<f64> {
    let p = x.len();
    let mut g = vec![0.0; p * p];
    for i in 0..p {
        let xi: Vec<f64> = match w {
            Some(w) => x[i].iter().zip(w).map(|(a, b)| a * b).collect(),
            None => x[i].clone(),
        };
        for j in 0..=i {
            let v: f64 = xi.iter().zip(&x[j]).map(|(a, b)| a * b).sum();
            g[i * p + j] = v;
            g[j * p + i] = v;
        }
    }
    g
}
