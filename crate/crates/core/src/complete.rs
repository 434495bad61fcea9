//! Estimators and asymptotic covariances for fully observed trajectories.
//!
//! With every stage observed, the log-likelihood splits into factor groups
//! that can be maximized separately: the vernalization and maturation rates
//! have closed-form MLEs (ratios of stage totals), the seed-fate parameters
//! (a, a', b, b') and the reproduction parameters (m, u) are estimated by
//! conditional least squares on the linear conditional means
//! `E[S_{i+1} | S_i, T_i] = a S_i + a' T_i`, `E[R_i | S_i, T_i] = b S_i + b' T_i`
//! and `E[T_{i+1} | F_i] = m F_i + u`, and the initial seed means are plain
//! Poisson MLEs. Covariances are sandwich estimators with the conditional
//! variances plugged in.
//!
//! Estimates are reported as-is: a finite-sample CLS solution may fall
//! outside (0, 1), in which case a warning is recorded rather than clamping,
//! so the asymptotic distribution is preserved.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dynamics::{CompleteDataset, DemographicParams, DynamicsError};
use crate::io::ReportRow;
use crate::stochastic::DistributionKind;

/// Largest seed count accepted by the seed-transition likelihood term; the
/// double convolution is quadratic in the count and is meant as a test
/// oracle, not a production estimator.
pub const MAX_CONVOLUTION_COUNT: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("{stage} counts are all zero; {parameter} is inestimable")]
    Inestimable {
        stage: &'static str,
        parameter: &'static str,
    },
    #[error("design is collinear: {parameter} is unidentified ({detail})")]
    Collinear {
        parameter: &'static str,
        detail: String,
    },
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error("seed count {count} exceeds the convolution limit {MAX_CONVOLUTION_COUNT}")]
    CountTooLarge { count: u64 },
    #[error("offspring and immigration must both be Poisson for the exact likelihood")]
    NotPoisson,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub type Mat2 = [[f64; 2]; 2];

/// MLEs of the vernalization and maturation rates with plug-in variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdEstimates {
    pub c_hat: f64,
    pub d_hat: f64,
    pub var_c: f64,
    pub var_d: f64,
}

/// CLS fit of the bank-survival pair (a, a').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalFit {
    pub a_hat: f64,
    pub a_prime_hat: f64,
    pub covariance: Mat2,
}

/// CLS fit of the germination pair (b, b').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GerminationFit {
    pub b_hat: f64,
    pub b_prime_hat: f64,
    pub covariance: Mat2,
}

/// CLS fit of the reproduction pair (m, u), with the residual-regression
/// plug-ins for the offspring and immigration variances used in the sandwich.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproductionFit {
    pub m_hat: f64,
    pub u_hat: f64,
    pub covariance: Mat2,
    pub offspring_variance: f64,
    pub immigration_variance: f64,
}

/// Poisson MLEs of the initial seed means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialFit {
    pub sigma_hat: f64,
    pub tau_hat: f64,
}

/// All complete-observation estimates bundled for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteEstimates {
    pub cd: CdEstimates,
    pub survival: SurvivalFit,
    pub germination: GerminationFit,
    pub reproduction: ReproductionFit,
    pub initial: InitialFit,
    pub populations: usize,
    /// Probability estimates that fell outside (0, 1) on this sample.
    pub warnings: Vec<String>,
}

fn validated(data: &CompleteDataset) -> Result<(), InferenceError> {
    data.validate()?;
    Ok(())
}

/// Ratio MLEs: c = sum(V) / sum(R), d = sum(F) / sum(V), with the binomial
/// plug-in variances c(1-c)/sum(R) and d(1-d)/sum(V).
///
/// A dataset with no vernalized rosettes at all pins d to the boundary: the
/// estimate is reported as 0 with infinite variance (no trials observed).
pub fn estimate_cd(data: &CompleteDataset) -> Result<CdEstimates, InferenceError> {
    validated(data)?;
    let mut sum_r = 0u64;
    let mut sum_v = 0u64;
    let mut sum_f = 0u64;
    for path in &data.populations {
        sum_r += path.rosettes.iter().sum::<u64>();
        sum_v += path.vernalized.iter().sum::<u64>();
        sum_f += path.mature.iter().sum::<u64>();
    }
    if sum_r == 0 {
        return Err(InferenceError::Inestimable {
            stage: "rosette",
            parameter: "c",
        });
    }
    if sum_v == 0 && sum_f > 0 {
        return Err(InferenceError::Inconsistent(
            "mature plants present without vernalized rosettes".to_string(),
        ));
    }
    let c_hat = sum_v as f64 / sum_r as f64;
    let var_c = c_hat * (1.0 - c_hat) / sum_r as f64;
    let (d_hat, var_d) = if sum_v == 0 {
        (0.0, f64::INFINITY)
    } else {
        let d = sum_f as f64 / sum_v as f64;
        (d, d * (1.0 - d) / sum_v as f64)
    };
    Ok(CdEstimates {
        c_hat,
        d_hat,
        var_c,
        var_d,
    })
}

/// Accumulated normal equations for a two-regressor CLS problem.
struct TwoColumnCls {
    g11: f64,
    g12: f64,
    g22: f64,
    rhs1: f64,
    rhs2: f64,
    rows: Vec<(f64, f64, f64)>,
}

impl TwoColumnCls {
    fn new() -> Self {
        Self {
            g11: 0.0,
            g12: 0.0,
            g22: 0.0,
            rhs1: 0.0,
            rhs2: 0.0,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, z1: f64, z2: f64, y: f64) {
        self.g11 += z1 * z1;
        self.g12 += z1 * z2;
        self.g22 += z2 * z2;
        self.rhs1 += z1 * y;
        self.rhs2 += z2 * y;
        self.rows.push((z1, z2, y));
    }

    /// Solve the 2x2 normal equations explicitly.
    fn solve(&self, names: (&'static str, &'static str)) -> Result<(f64, f64), InferenceError> {
        if self.g11 == 0.0 {
            return Err(InferenceError::Collinear {
                parameter: names.0,
                detail: "its regressor is identically zero".to_string(),
            });
        }
        if self.g22 == 0.0 {
            return Err(InferenceError::Collinear {
                parameter: names.1,
                detail: "its regressor is identically zero".to_string(),
            });
        }
        let det = self.g11 * self.g22 - self.g12 * self.g12;
        if det <= 1e-12 * self.g11 * self.g22 {
            return Err(InferenceError::Collinear {
                parameter: names.0,
                detail: format!("regressors for {} and {} are proportional", names.0, names.1),
            });
        }
        let x1 = (self.rhs1 * self.g22 - self.g12 * self.rhs2) / det;
        let x2 = (self.g11 * self.rhs2 - self.g12 * self.rhs1) / det;
        Ok((x1, x2))
    }

    /// Sandwich covariance with per-row variance weights. Weights are floored
    /// at zero so the middle matrix stays positive semidefinite even when the
    /// plugged-in estimates fall outside (0, 1).
    fn sandwich(&self, weight: impl Fn(f64, f64) -> f64) -> Mat2 {
        let det = self.g11 * self.g22 - self.g12 * self.g12;
        let inv = [
            [self.g22 / det, -self.g12 / det],
            [-self.g12 / det, self.g11 / det],
        ];
        let mut meat = [[0.0f64; 2]; 2];
        for &(z1, z2, _) in &self.rows {
            let w = weight(z1, z2).max(0.0);
            meat[0][0] += w * z1 * z1;
            meat[0][1] += w * z1 * z2;
            meat[1][1] += w * z2 * z2;
        }
        meat[1][0] = meat[0][1];
        let mut left = [[0.0f64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                left[i][j] = inv[i][0] * meat[0][j] + inv[i][1] * meat[1][j];
            }
        }
        let mut cov = [[0.0f64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] = left[i][0] * inv[0][j] + left[i][1] * inv[1][j];
            }
        }
        // Exact symmetry for downstream eigenvalue checks.
        let off = 0.5 * (cov[0][1] + cov[1][0]);
        cov[0][1] = off;
        cov[1][0] = off;
        cov
    }
}

/// CLS fit of (a, a') from the regression of S_{i+1} on (S_i, T_i).
pub fn cls_survival(data: &CompleteDataset) -> Result<SurvivalFit, InferenceError> {
    validated(data)?;
    let mut cls = TwoColumnCls::new();
    for path in &data.populations {
        for i in 0..path.cycles() {
            cls.push(
                path.old_seeds[i] as f64,
                path.new_seeds[i] as f64,
                path.next_old_seeds(i) as f64,
            );
        }
    }
    let (a_hat, a_prime_hat) = cls.solve(("a", "a'"))?;
    let covariance = cls.sandwich(|s, t| {
        a_hat * (1.0 - a_hat) * s + a_prime_hat * (1.0 - a_prime_hat) * t
    });
    Ok(SurvivalFit {
        a_hat,
        a_prime_hat,
        covariance,
    })
}

/// CLS fit of (b, b') from the regression of R_i on (S_i, T_i).
pub fn cls_germination(data: &CompleteDataset) -> Result<GerminationFit, InferenceError> {
    validated(data)?;
    let mut cls = TwoColumnCls::new();
    for path in &data.populations {
        for i in 0..path.cycles() {
            cls.push(
                path.old_seeds[i] as f64,
                path.new_seeds[i] as f64,
                path.rosettes[i] as f64,
            );
        }
    }
    let (b_hat, b_prime_hat) = cls.solve(("b", "b'"))?;
    let covariance = cls.sandwich(|s, t| {
        b_hat * (1.0 - b_hat) * s + b_prime_hat * (1.0 - b_prime_hat) * t
    });
    Ok(GerminationFit {
        b_hat,
        b_prime_hat,
        covariance,
    })
}

/// CLS fit of (m, u) from the regression of T_{i+1} on (F_i, 1).
///
/// The sandwich weights delta^2 F_i + rho^2 need the offspring and
/// immigration variances, which the conditional mean does not identify;
/// they are plugged in by regressing squared residuals on (F_i, 1) and
/// flooring both coefficients at zero.
pub fn cls_reproduction(data: &CompleteDataset) -> Result<ReproductionFit, InferenceError> {
    validated(data)?;
    let mut cls = TwoColumnCls::new();
    for path in &data.populations {
        for i in 0..path.cycles() {
            cls.push(path.mature[i] as f64, 1.0, path.next_new_seeds(i) as f64);
        }
    }
    if cls.g11 == 0.0 {
        return Err(InferenceError::Collinear {
            parameter: "m",
            detail: "no mature plants were observed".to_string(),
        });
    }
    let det = cls.g11 * cls.g22 - cls.g12 * cls.g12;
    if det <= 1e-12 * cls.g11 * cls.g22 {
        return Err(InferenceError::Collinear {
            parameter: "m",
            detail: "mature-plant counts are constant across observations".to_string(),
        });
    }
    let (m_hat, u_hat) = cls.solve(("m", "u"))?;

    // Residual regression for the variance plug-ins.
    let mut var_cls = TwoColumnCls::new();
    for &(f, _, y) in &cls.rows {
        let residual = y - m_hat * f - u_hat;
        var_cls.push(f, 1.0, residual * residual);
    }
    let (delta2, rho2) = var_cls.solve(("delta^2", "rho^2"))?;
    let offspring_variance = delta2.max(0.0);
    let immigration_variance = rho2.max(0.0);

    let covariance = cls.sandwich(|f, _| offspring_variance * f + immigration_variance);
    Ok(ReproductionFit {
        m_hat,
        u_hat,
        covariance,
        offspring_variance,
        immigration_variance,
    })
}

/// Poisson MLEs of the initial seed means: the sample means of S_0 and T_0.
pub fn estimate_initial(data: &CompleteDataset) -> Result<InitialFit, InferenceError> {
    validated(data)?;
    let k = data.population_count() as f64;
    let sigma_hat = data.populations.iter().map(|p| p.old_seeds[0] as f64).sum::<f64>() / k;
    let tau_hat = data.populations.iter().map(|p| p.new_seeds[0] as f64).sum::<f64>() / k;
    Ok(InitialFit { sigma_hat, tau_hat })
}

/// Run every complete-observation estimator and collect warnings.
pub fn estimate_complete(data: &CompleteDataset) -> Result<CompleteEstimates, InferenceError> {
    let cd = estimate_cd(data)?;
    let survival = cls_survival(data)?;
    let germination = cls_germination(data)?;
    let reproduction = cls_reproduction(data)?;
    let initial = estimate_initial(data)?;

    let mut warnings = Vec::new();
    for (name, value) in [
        ("c", cd.c_hat),
        ("d", cd.d_hat),
        ("a", survival.a_hat),
        ("a'", survival.a_prime_hat),
        ("b", germination.b_hat),
        ("b'", germination.b_prime_hat),
    ] {
        if !(0.0..=1.0).contains(&value) {
            warnings.push(format!("estimate {name} = {value} lies outside [0, 1]"));
        }
    }

    Ok(CompleteEstimates {
        cd,
        survival,
        germination,
        reproduction,
        initial,
        populations: data.population_count(),
        warnings,
    })
}

impl CompleteEstimates {
    /// The ten `parameter,estimate,std_error` rows of the estimate report.
    pub fn report_rows(&self) -> Vec<ReportRow> {
        let k = self.populations as f64;
        vec![
            ReportRow::new("c", self.cd.c_hat, Some(self.cd.var_c.sqrt())),
            ReportRow::new("d", self.cd.d_hat, Some(self.cd.var_d.sqrt())),
            ReportRow::new("a", self.survival.a_hat, Some(self.survival.covariance[0][0].sqrt())),
            ReportRow::new(
                "a_prime",
                self.survival.a_prime_hat,
                Some(self.survival.covariance[1][1].sqrt()),
            ),
            ReportRow::new("b", self.germination.b_hat, Some(self.germination.covariance[0][0].sqrt())),
            ReportRow::new(
                "b_prime",
                self.germination.b_prime_hat,
                Some(self.germination.covariance[1][1].sqrt()),
            ),
            ReportRow::new("m", self.reproduction.m_hat, Some(self.reproduction.covariance[0][0].sqrt())),
            ReportRow::new("u", self.reproduction.u_hat, Some(self.reproduction.covariance[1][1].sqrt())),
            ReportRow::new("sigma", self.initial.sigma_hat, Some((self.initial.sigma_hat / k).sqrt())),
            ReportRow::new("tau", self.initial.tau_hat, Some((self.initial.tau_hat / k).sqrt())),
        ]
    }
}

fn log_poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)
}

fn log_binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let (kf, nf) = (k as f64, n as f64);
    ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0)
        + kf * p.ln()
        + (nf - kf) * (1.0 - p).ln()
}

/// log M(n; p1, p2)(x1, x2) with the implicit third cell n - x1 - x2.
fn log_multinomial_pair_pmf(n: u64, p1: f64, p2: f64, x1: u64, x2: u64) -> f64 {
    if x1 + x2 > n {
        return f64::NEG_INFINITY;
    }
    let rest = n - x1 - x2;
    let q = 1.0 - p1 - p2;
    let mut log_pmf = ln_gamma(n as f64 + 1.0)
        - ln_gamma(x1 as f64 + 1.0)
        - ln_gamma(x2 as f64 + 1.0)
        - ln_gamma(rest as f64 + 1.0)
        + x1 as f64 * p1.ln()
        + x2 as f64 * p2.ln();
    if rest > 0 {
        if q <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_pmf += rest as f64 * q.ln();
    }
    log_pmf
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// log of the joint pmf of (S_{i+1}, R_i) given (S_i, T_i), i.e. the
/// convolution of the two fate multinomials, evaluated by direct summation
/// over the admissible lattice.
fn log_seed_transition_pmf(
    s: u64,
    t: u64,
    s_next: u64,
    r: u64,
    params: &DemographicParams,
) -> Result<f64, InferenceError> {
    let (a, b, a_prime, b_prime) = (params.a, params.b, params.a_prime, params.b_prime);
    for count in [s, t] {
        if count > MAX_CONVOLUTION_COUNT {
            return Err(InferenceError::CountTooLarge { count });
        }
    }
    let mut terms = Vec::new();
    for s1 in 0..=s.min(s_next) {
        let s2 = s_next - s1;
        for r1 in 0..=r.min(s.saturating_sub(s1)) {
            let r2 = r - r1;
            if s2 + r2 > t {
                continue;
            }
            let term = log_multinomial_pair_pmf(s, a, b, s1, r1)
                + log_multinomial_pair_pmf(t, a_prime, b_prime, s2, r2);
            if term > f64::NEG_INFINITY {
                terms.push(term);
            }
        }
    }
    Ok(log_sum_exp(&terms))
}

/// Exact log-likelihood of a complete dataset when both the offspring and
/// immigration laws are Poisson.
///
/// Sums the five separable factor groups: initial seed pair, vernalization,
/// maturation, reproduction (Poisson(m f + u) for the next surface seeds) and
/// the seed transition (the multinomial convolution). Populations are reduced
/// in index order so the result is deterministic.
pub fn complete_loglik_poisson(
    data: &CompleteDataset,
    params: &DemographicParams,
) -> Result<f64, InferenceError> {
    validated(data)?;
    params.validate()?;
    if params.offspring.kind() != DistributionKind::Poisson
        || params.immigration.kind() != DistributionKind::Poisson
    {
        return Err(InferenceError::NotPoisson);
    }
    let m = params.offspring.mean();
    let u = params.immigration.mean();

    let mut total = 0.0;
    for path in &data.populations {
        total += log_poisson_pmf(path.old_seeds[0], params.sigma);
        total += log_poisson_pmf(path.new_seeds[0], params.tau);
        for i in 0..path.cycles() {
            total += log_binomial_pmf(path.vernalized[i], path.rosettes[i], params.c);
            total += log_binomial_pmf(path.mature[i], path.vernalized[i], params.d);
            total += log_poisson_pmf(path.next_new_seeds(i), m * path.mature[i] as f64 + u);
            total += log_seed_transition_pmf(
                path.old_seeds[i],
                path.new_seeds[i],
                path.next_old_seeds(i),
                path.rosettes[i],
                params,
            )?;
        }
    }
    Ok(total)
}
