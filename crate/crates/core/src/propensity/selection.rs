//! Likelihood-ratio forward selection of propensity terms.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::formula::{build_design, Formula, Term};
use super::irls::{fit_logistic, FitOptions};
use super::PropensityError;
use crate::panel::Covariates;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStep {
    pub term: String,
    pub lr_stat: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub formula: Formula,
    pub steps: Vec<SelectionStep>,
}

/// Starting from `base`, repeatedly adds the candidate with the smallest
/// likelihood-ratio p-value while that p-value is below `alpha`. Candidates
/// whose fit fails (separation, dependence) are skipped.
pub fn forward_select(
    cov: &Covariates,
    labels: &[u8],
    base: &Formula,
    candidates: &[Term],
    alpha: f64,
    opts: &FitOptions,
) -> Result<Selection, PropensityError> {
    let fit = |f: &Formula| -> Result<(f64, usize), PropensityError> {
        let d = build_design(f, cov)?;
        let (m, r) = fit_logistic(f, &d, labels, opts)?;
        Ok((r.deviance, m.terms.len()))
    };
    let mut current = base.clone();
    let (mut dev, mut k) = fit(&current)?;
    let mut remaining: Vec<Term> = candidates.iter().filter(|t| !current.terms.contains(t)).cloned().collect();
    let mut steps = Vec::new();
    loop {
        let mut best: Option<(usize, SelectionStep, f64, usize)> = None;
        for (i, term) in remaining.iter().enumerate() {
            let trial = current.with(term.clone());
            let Ok((d, kk)) = fit(&trial) else { continue };
            if kk <= k {
                continue;
            }
            let df = kk - k;
            let lr = (dev - d).max(0.0);
            let p = ChiSquared::new(df as f64).expect("df > 0").sf(lr);
            if best.as_ref().is_none_or(|b| p < b.1.p_value || (p == b.1.p_value && lr > b.1.lr_stat)) {
                best = Some((i, SelectionStep { term: term.to_string(), lr_stat: lr, df, p_value: p }, d, kk));
            }
        }
        match best {
            Some((i, step, d, kk)) if step.p_value < alpha => {
                current = current.with(remaining.remove(i));
                dev = d;
                k = kk;
                steps.push(step);
            }
            _ => break,
        }
    }
    Ok(Selection { formula: current, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keeps_informative_and_skips_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let signal: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = signal
            .iter()
            .map(|&s| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-(-1.0 + 2.0 * s)).exp())))
            .collect();
        let cov = Covariates::new(vec!["signal".into(), "noise".into()], vec![signal, noise]);
        let sel = forward_select(
            &cov,
            &labels,
            &Formula::intercept_only(),
            &[Term::Column("noise".into()), Term::Column("signal".into())],
            0.05,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(sel.steps[0].term, "signal");
        assert!(sel.formula.terms.contains(&Term::Column("signal".into())));
        assert!(sel.steps.iter().all(|s| s.p_value < 0.05));
    }
}
