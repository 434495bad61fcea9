//! Shared statistics helpers for the integration suites.
//!
//! Each suite compiles its own copy, so not every helper is used everywhere.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// First-order sampling variance of the sample variance (fourth-moment form).
pub fn variance_of_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let v = variance(values);
    let m4 = values.iter().map(|x| (x - m).powi(4)).sum::<f64>() / values.len() as f64;
    (m4 - v * v).max(0.0) / values.len() as f64
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub struct GofOutcome {
    pub statistic: f64,
    pub critical_1pct: f64,
}

impl GofOutcome {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical_1pct
    }
}

/// Pearson chi-square of integer samples against Poisson(lambda), tail bins
/// merged so every expected count is at least 5; 1% critical value attached.
pub fn poisson_gof(samples: &[f64], lambda: f64) -> GofOutcome {
    let n = samples.len() as f64;
    let max = samples.iter().cloned().fold(0.0f64, f64::max) as usize;
    let mut observed = vec![0.0; max + 1];
    for &s in samples {
        observed[s as usize] += 1.0;
    }
    let mut bins_obs = Vec::new();
    let mut bins_exp = Vec::new();
    let mut acc_obs = 0.0;
    let mut acc_exp = 0.0;
    let mut log_pmf = -lambda;
    let mut cdf = 0.0;
    for (k, obs) in observed.iter().enumerate() {
        if k > 0 {
            log_pmf += lambda.ln() - (k as f64).ln();
        }
        let expected = n * log_pmf.exp();
        cdf += log_pmf.exp();
        acc_obs += obs;
        acc_exp += expected;
        if acc_exp >= 5.0 {
            bins_obs.push(acc_obs);
            bins_exp.push(acc_exp);
            acc_obs = 0.0;
            acc_exp = 0.0;
        }
    }
    acc_exp += n * (1.0 - cdf).max(0.0);
    if acc_exp > 0.0 {
        bins_obs.push(acc_obs);
        bins_exp.push(acc_exp);
    }
    let statistic = bins_obs
        .iter()
        .zip(&bins_exp)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (bins_obs.len() - 1).max(1) as f64;
    GofOutcome {
        statistic,
        critical_1pct: ChiSquared::new(dof).unwrap().inverse_cdf(0.99),
    }
}
