//! Model formulas over panel covariates and the design matrices they expand to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PropensityError;
use crate::panel::Covariates;
use crate::time::TIME_BANDS;

/// One additive term of a formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    /// A covariate entering linearly.
    Column(String),
    /// Dummies for time bands 0..=7; band 8 (19:00-24:00) is the reference.
    TimeBands,
    /// Product of two covariates, written `a:b`.
    Interaction(String, String),
    /// `x, x^2, ..., x^k`, written `poly(x,k)`.
    Poly(String, u32),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Column(c) => f.write_str(c),
            Term::TimeBands => f.write_str("time_band"),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
            Term::Poly(c, k) => write!(f, "poly({c},{k})"),
        }
    }
}

impl FromStr for Term {
    type Err = PropensityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(PropensityError::Formula("empty term".into()));
        }
        if s == "time_band" {
            return Ok(Term::TimeBands);
        }
        if let Some(inner) = s.strip_prefix("poly(").and_then(|r| r.strip_suffix(')')) {
            let (col, deg) = inner
                .split_once(',')
                .ok_or_else(|| PropensityError::Formula(format!("poly needs a degree: `{s}`")))?;
            let deg: u32 = deg
                .trim()
                .parse()
                .map_err(|_| PropensityError::Formula(format!("bad poly degree in `{s}`")))?;
            if deg == 0 {
                return Err(PropensityError::Formula(format!("poly degree must be >= 1 in `{s}`")));
            }
            return Ok(Term::Poly(col.trim().to_string(), deg));
        }
        if let Some((a, b)) = s.split_once(':') {
            return Ok(Term::Interaction(a.trim().to_string(), b.trim().to_string()));
        }
        if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            Ok(Term::Column(s.to_string()))
        } else {
            Err(PropensityError::Formula(format!("cannot parse term `{s}`")))
        }
    }
}

/// Right-hand side of the propensity model; the intercept is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Formula {
    pub terms: Vec<Term>,
}

impl Formula {
    pub fn intercept_only() -> Self {
        Self { terms: Vec::new() }
    }

    /// Past disruptions, time-band dummies, weather, engineering design,
    /// previous-interval entries, and the overground x wind interaction.
    pub fn standard() -> Self {
        "past_disruptions + time_band + temp_c + wind_kmh + rain + rail_connect + overground \
         + avg_adj_km + station_age + pre_entry + rolling_stock_age + overground:wind_kmh"
            .parse()
            .expect("standard formula parses")
    }

    pub fn with(&self, term: Term) -> Self {
        let mut f = self.clone();
        f.terms.push(term);
        f
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        f.write_str(&parts.join(" + "))
    }
}

impl FromStr for Formula {
    type Err = PropensityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "1" {
            return Ok(Self::intercept_only());
        }
        let terms = s.split('+').map(str::parse).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { terms })
    }
}

impl TryFrom<String> for Formula {
    type Error = PropensityError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Formula> for String {
    fn from(f: Formula) -> Self {
        f.to_string()
    }
}

/// Named numeric columns, no intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }
}

fn lookup<'a>(cov: &'a Covariates, name: &str) -> Result<&'a [f64], PropensityError> {
    cov.get(name).ok_or_else(|| PropensityError::MissingColumn(name.to_string()))
}

/// Expands a formula against a covariate table.
pub fn build_design(formula: &Formula, cov: &Covariates) -> Result<DesignMatrix, PropensityError> {
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for term in &formula.terms {
        match term {
            Term::Column(c) => {
                names.push(c.clone());
                columns.push(lookup(cov, c)?.to_vec());
            }
            Term::TimeBands => {
                let band = lookup(cov, "time_band")?;
                for k in 0..TIME_BANDS - 1 {
                    names.push(format!("time{k}"));
                    columns.push(band.iter().map(|&b| f64::from(u8::from(b as usize == k))).collect());
                }
            }
            Term::Interaction(a, b) => {
                let (x, y) = (lookup(cov, a)?, lookup(cov, b)?);
                names.push(format!("{a}:{b}"));
                columns.push(x.iter().zip(y).map(|(p, q)| p * q).collect());
            }
            Term::Poly(c, deg) => {
                let x = lookup(cov, c)?;
                for d in 1..=*deg {
                    names.push(if d == 1 { c.clone() } else { format!("{c}^{d}") });
                    columns.push(x.iter().map(|v| v.powi(d as i32)).collect());
                }
            }
        }
    }
    Ok(DesignMatrix { names, columns })
}
