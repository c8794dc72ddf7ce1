use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares fit of `log e = slope * log eps + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

impl RateFit {
    /// Fitted constant `c` in `e = c eps^slope`.
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }
}

pub fn fit_rate(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    if eps.len() != errors.len() {
        return Err(Error::Fit(format!("{} epsilons but {} errors", eps.len(), errors.len())));
    }
    if eps.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", eps.len())));
    }
    if eps.iter().chain(errors).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Fit("epsilons and errors must be positive and finite".into()));
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("epsilons are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(&y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    Ok(RateFit { slope, intercept, residual: (ss / n).sqrt(), points: x.len() })
}
