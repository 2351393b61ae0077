//! Discrimination and overlap diagnostics for propensity scores.

use serde::{Deserialize, Serialize};

use super::PropensityError;

fn class_counts(labels: &[u8]) -> Result<(u64, u64), PropensityError> {
    let n1 = labels.iter().filter(|&&w| w == 1).count() as u64;
    let n0 = labels.len() as u64 - n1;
    if n1 == 0 || n0 == 0 {
        return Err(PropensityError::SingleClass);
    }
    Ok((n1, n0))
}

/// AUC from the Mann-Whitney rank statistic with mid-ranks for ties.
///
/// Computed in integer arithmetic on doubled ranks so that it agrees
/// exactly with [`auc_pairs`].
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, PropensityError> {
    let (n1, n0) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of treated units
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share the mid-rank (i+1+j)/2
        let twice_mid = (i + 1 + j) as u128;
        let treated = order[i..j].iter().filter(|&&u| labels[u] == 1).count() as u128;
        twice_rank_sum += twice_mid * treated;
        i = j;
    }
    let twice_u = twice_rank_sum - (n1 as u128) * (n1 as u128 + 1);
    Ok(twice_u as f64 / (2 * n1 as u128 * n0 as u128) as f64)
}

/// AUC by counting every (treated, control) pair; ties count one half.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> Result<f64, PropensityError> {
    let (n1, n0) = class_counts(labels)?;
    let mut twice_wins: u128 = 0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 1 {
                continue;
            }
            if si > sj {
                twice_wins += 2;
            } else if si == sj {
                twice_wins += 1;
            }
        }
    }
    Ok(twice_wins as f64 / (2 * n1 as u128 * n0 as u128) as f64)
}

pub fn log_likelihood(scores: &[f64], labels: &[u8]) -> f64 {
    scores.iter().zip(labels).map(|(&p, &w)| if w == 1 { p.ln() } else { (1.0 - p).ln() }).sum()
}

/// `1 - l_model / l_null`, the null model predicting the base rate.
pub fn mcfadden_r2(scores: &[f64], labels: &[u8]) -> Result<f64, PropensityError> {
    let (n1, n0) = class_counts(labels)?;
    let base = n1 as f64 / (n1 + n0) as f64;
    let null = n1 as f64 * base.ln() + n0 as f64 * (1.0 - base).ln();
    Ok(1.0 - log_likelihood(scores, labels) / null)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportMode {
    /// Report treated units outside the control score range.
    #[default]
    Warn,
    /// Also exclude them from matching.
    Trim,
}

impl std::str::FromStr for SupportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "warn" => Ok(Self::Warn),
            "trim" => Ok(Self::Trim),
            other => Err(format!("support mode must be `warn` or `trim`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub treated: usize,
    pub control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub bins: Vec<HistBin>,
    pub control_min: f64,
    pub control_max: f64,
    /// Treated units scoring above the largest or below the smallest control score.
    pub out_of_support: Vec<usize>,
    pub n_treated: usize,
}

impl SupportReport {
    pub fn out_of_support_fraction(&self) -> f64 {
        if self.n_treated == 0 {
            0.0
        } else {
            self.out_of_support.len() as f64 / self.n_treated as f64
        }
    }
}

/// Score histogram over [0, 1] by class, plus the treated units lying outside
/// the range of control scores.
pub fn common_support(scores: &[f64], labels: &[u8], bins: usize) -> SupportReport {
    let bins = bins.max(1);
    let mut hist: Vec<HistBin> = (0..bins)
        .map(|b| HistBin { lo: b as f64 / bins as f64, hi: (b + 1) as f64 / bins as f64, treated: 0, control: 0 })
        .collect();
    let mut cmin = f64::INFINITY;
    let mut cmax = f64::NEG_INFINITY;
    for (&s, &w) in scores.iter().zip(labels) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        if w == 1 {
            hist[b].treated += 1;
        } else {
            hist[b].control += 1;
            cmin = cmin.min(s);
            cmax = cmax.max(s);
        }
    }
    let out_of_support = scores
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (&s, &w))| w == 1 && (s > cmax || s < cmin))
        .map(|(i, _)| i)
        .collect();
    SupportReport {
        bins: hist,
        control_min: cmin,
        control_max: cmax,
        out_of_support,
        n_treated: labels.iter().filter(|&&w| w == 1).count(),
    }
}
