//! Likelihood fits of the identifiable transform from partial observations.
//!
//! Two fits are provided. The *reduced* fit holds `a` and `g = a'b/b'` fixed
//! (the protocol used throughout the robustness experiments): the intensity
//! is then linear in `(bm, bu, bs, bt)`, so the Poisson likelihood is
//! globally concave on the positive orthant and Fisher scoring with box
//! projection and step halving converges fast and monotonically. The *full*
//! six-dimensional fit is a box-constrained ascent with the analytic
//! intensity gradients and the expected-information metric, seeded by
//! profiling the reduced fit over a coarse `(a, g)` grid plus
//! Latin-hypercube perturbations; the nonlinearity in `(a, g)` makes this
//! a genuinely harder problem, so multiple starts are kept and the best
//! local optimum is reported.
//!
//! Horizons below three cycles cannot identify all six components; the full
//! fit then estimates the identifiable functionals instead and says so.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::identifiability::{identifiable_set, IdentifiabilityReport};
use crate::intensity::{
    fisher_matrix, incomplete_loglik, lambda_gradient, IdentifiableParams, IntensityError,
    PhiBounds, PHI_NAMES,
};
use crate::dynamics::ObservedDataset;
use crate::io::ReportRow;

/// Fisher matrices with a larger condition number than this are not inverted;
/// the report flags near-singularity instead.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("design is collinear: {parameter} is unidentified ({detail})")]
    Collinear { parameter: String, detail: String },
    #[error("known parameter {name} = {value} is outside its admissible range")]
    BadKnownParameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Intensity(#[from] IntensityError),
}

/// Stopping rules and search configuration shared by both fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative log-likelihood change below which iteration stops.
    pub loglik_rel_tol: f64,
    /// Step norm below which iteration stops.
    pub step_tol: f64,
    /// Number of starts for the full fit (profile seed plus perturbations).
    pub starts: usize,
    pub bounds: PhiBounds,
    /// Seed of the deterministic stream that draws the start perturbations.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            loglik_rel_tol: 1e-10,
            step_tol: 1e-8,
            starts: 8,
            bounds: PhiBounds::default(),
            seed: 0,
        }
    }
}

/// Where the full fit takes its primary start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitStrategy {
    /// Profile the reduced fit over a coarse (a, g) grid and start from the
    /// best point found.
    GridProfile,
    /// Start from a caller-supplied vector (perturbed starts are still added).
    From(IdentifiableParams),
}

/// Result of a six-component fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiEstimateReport {
    pub phi: IdentifiableParams,
    pub loglik: f64,
    /// Empirical Fisher information at the estimate (per-population scale).
    pub fisher: [[f64; 6]; 6],
    /// Estimated covariance of the estimate, absent when the information
    /// matrix is numerically singular. Fixed components have zero rows.
    pub covariance: Option<[[f64; 6]; 6]>,
    pub iterations: usize,
    pub converged: bool,
    /// Components sitting on a box bound at the optimum.
    pub active_bounds: [bool; 6],
    /// Components held fixed during the fit (the reduced fit fixes a and g).
    pub fixed: [bool; 6],
    pub warnings: Vec<String>,
}

impl PhiEstimateReport {
    /// `parameter,estimate,std_error` rows in phi component order.
    pub fn report_rows(&self) -> Vec<ReportRow> {
        let values = self.phi.as_array();
        (0..6)
            .map(|p| {
                let se = self
                    .covariance
                    .map(|cov| cov[p][p].max(0.0).sqrt())
                    .filter(|_| !self.fixed[p]);
                ReportRow::new(PHI_NAMES[p], values[p], se)
            })
            .collect()
    }

    /// Flat key-value diagnostics for the report file.
    pub fn diagnostics(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("loglik".to_string(), format!("{:.6}", self.loglik)),
            ("iterations".to_string(), self.iterations.to_string()),
            ("converged".to_string(), self.converged.to_string()),
        ];
        let active: Vec<&str> = (0..6)
            .filter(|&p| self.active_bounds[p])
            .map(|p| PHI_NAMES[p])
            .collect();
        pairs.push(("active_bounds".to_string(), if active.is_empty() { "none".to_string() } else { active.join(",") }));
        let fixed: Vec<&str> = (0..6).filter(|&p| self.fixed[p]).map(|p| PHI_NAMES[p]).collect();
        pairs.push(("fixed".to_string(), if fixed.is_empty() { "none".to_string() } else { fixed.join(",") }));
        for warning in &self.warnings {
            pairs.push(("warning".to_string(), warning.clone()));
        }
        pairs
    }
}

/// Estimates of the identifiable functionals when the horizon (or a
/// degeneracy) rules out the full six-component fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFit {
    pub identifiability: IdentifiabilityReport,
    /// `(symbol, estimate, standard error)` per identifiable functional.
    pub estimates: Vec<(String, f64, Option<f64>)>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl PartialFit {
    pub fn report_rows(&self) -> Vec<ReportRow> {
        self.estimates
            .iter()
            .map(|(symbol, estimate, se)| ReportRow::new(symbol, *estimate, *se))
            .collect()
    }
}

/// Outcome of [`fit_phi_full`]: the full transform when identifiable, the
/// identifiable subset otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum FullFitResult {
    Full(Box<PhiEstimateReport>),
    Partial(PartialFit),
}

// ---------------------------------------------------------------------------
// Linear-intensity Poisson fit (the shared scoring core)
// ---------------------------------------------------------------------------

struct LinearModel {
    /// Row-major design, one row per (population, cycle).
    design: DMatrix<f64>,
    response: DVector<f64>,
}

struct LinearFitOutcome {
    beta: DVector<f64>,
    loglik: f64,
    /// Unnormalized information sum_rows x x^T / lambda at the optimum.
    info: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    /// Log-likelihood after every accepted step; read by the monotonicity test.
    #[cfg_attr(not(test), allow(dead_code))]
    trace: Vec<f64>,
}

impl LinearModel {
    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        let lambda = &self.design * beta;
        let mut total = 0.0;
        for (i, &l) in lambda.iter().enumerate() {
            let r = self.response[i];
            if l <= 0.0 {
                if r > 0.0 {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            total += r * l.ln() - l;
        }
        total
    }

    fn score_and_info(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.design.ncols();
        let lambda = &self.design * beta;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for (i, &l) in lambda.iter().enumerate() {
            if l <= 0.0 {
                continue;
            }
            let row = self.design.row(i);
            let weight = self.response[i] / l - 1.0;
            for a in 0..p {
                score[a] += weight * row[a];
                for b in a..p {
                    info[(a, b)] += row[a] * row[b] / l;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        (score, info)
    }

    /// Reject designs whose information matrix is numerically rank deficient,
    /// naming the parameter that dominates the flat direction.
    fn check_rank(&self, beta: &DVector<f64>, names: &[&str]) -> Result<(), FitError> {
        let (_, info) = self.score_and_info(beta);
        let eigen = info.symmetric_eigen();
        let max = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let (min_idx, min) = eigen
            .eigenvalues
            .iter()
            .cloned()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if min <= 1e-12 * max.max(1e-300) {
            let null = eigen.eigenvectors.column(min_idx);
            let mut involved: Vec<(f64, &str)> = names
                .iter()
                .enumerate()
                .map(|(j, name)| (null[j].abs(), *name))
                .collect();
            involved.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let parameter = involved[0].1.to_string();
            let detail = involved
                .iter()
                .filter(|(weight, _)| *weight > 0.3)
                .map(|(weight, name)| format!("{name} (weight {weight:.2})"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(FitError::Collinear {
                parameter,
                detail: format!("flat likelihood direction along {detail}"),
            });
        }
        Ok(())
    }

    /// Monotone Fisher scoring with projection onto [lower, upper]^p.
    fn fit(
        &self,
        init: DVector<f64>,
        lower: f64,
        upper: f64,
        options: &FitOptions,
    ) -> LinearFitOutcome {
        let project = |beta: &mut DVector<f64>| {
            for value in beta.iter_mut() {
                *value = value.clamp(lower, upper);
            }
        };
        let mut beta = init;
        project(&mut beta);
        let mut loglik = self.loglik(&beta);
        let mut iterations = 0;
        let mut converged = false;
        let mut trace = vec![loglik];

        while iterations < options.max_iterations {
            iterations += 1;
            let (score, info) = self.score_and_info(&beta);
            let Some(direction) = solve_spd(&info, &score) else {
                break;
            };
            let mut accepted = false;
            let mut t = 1.0f64;
            while t > 1e-12 {
                let mut candidate = &beta + &direction * t;
                project(&mut candidate);
                let candidate_loglik = self.loglik(&candidate);
                if candidate_loglik > loglik {
                    let step_norm = (&candidate - &beta).norm();
                    let rel = (candidate_loglik - loglik) / loglik.abs().max(1.0);
                    beta = candidate;
                    loglik = candidate_loglik;
                    trace.push(loglik);
                    accepted = true;
                    if rel < options.loglik_rel_tol || step_norm < options.step_tol {
                        converged = true;
                    }
                    break;
                }
                t /= 2.0;
            }
            if !accepted {
                // No improving point along the scoring direction: stationary
                // (up to the box) as far as this model can tell.
                converged = true;
                break;
            }
            if converged {
                break;
            }
        }

        let (_, info) = self.score_and_info(&beta);
        LinearFitOutcome {
            beta,
            loglik,
            info,
            iterations,
            converged,
            trace,
        }
    }
}

/// Cholesky solve with escalating ridge for near-singular matrices.
fn solve_spd(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let p = matrix.nrows();
    let scale = matrix.trace().abs() / p as f64;
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut work = matrix.clone();
        if ridge > 0.0 {
            for j in 0..p {
                work[(j, j)] += ridge;
            }
        }
        if let Some(chol) = work.cholesky() {
            return Some(chol.solve(rhs));
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 100.0 };
        if !ridge.is_finite() || ridge == 0.0 {
            ridge = 1e-10;
        }
    }
    None
}

/// Symmetric inverse with a condition-number gate.
/// Returns the condition number alongside the inverse when it exists.
fn invert_information(matrix: &DMatrix<f64>) -> (Option<DMatrix<f64>>, f64) {
    let eigen = matrix.clone().symmetric_eigen();
    let max = eigen.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if min.is_nan() || min <= 0.0 || condition > MAX_CONDITION {
        return (None, condition);
    }
    let p = matrix.nrows();
    let mut inverse = DMatrix::zeros(p, p);
    for j in 0..p {
        let v = eigen.eigenvectors.column(j);
        let w = 1.0 / eigen.eigenvalues[j];
        for r in 0..p {
            for c in 0..p {
                inverse[(r, c)] += w * v[r] * v[c];
            }
        }
    }
    (Some(inverse), condition)
}

// ---------------------------------------------------------------------------
// Reduced fit: a and g known, intensity linear in (bm, bu, bs, bt)
// ---------------------------------------------------------------------------

/// Design rows for the reduced fit: the intensity coefficients of
/// (bm, bu, bs, bt) at fixed (a, g), which are exactly the corresponding
/// analytic gradient components.
fn reduced_design(data: &ObservedDataset, a: f64, g: f64) -> LinearModel {
    let probe = IdentifiableParams {
        a,
        g,
        bm: 1.0,
        bu: 1.0,
        bs: 1.0,
        bt: 1.0,
    };
    let mut rows = Vec::new();
    let mut response = Vec::new();
    for path in &data.populations {
        let n = path.cycles() - 1;
        let gradients = lambda_gradient(&probe, &path.mature[..n]);
        for (i, grad) in gradients.iter().enumerate() {
            rows.push([grad[2], grad[3], grad[4], grad[5]]);
            response.push(path.rosettes[i] as f64);
        }
    }
    let design = DMatrix::from_fn(rows.len(), 4, |r, c| rows[r][c]);
    LinearModel {
        design,
        response: DVector::from_vec(response),
    }
}

/// Ordinary least squares on the linear design, used only to seed the
/// scoring iteration; clamped away from the boundary.
fn least_squares_seed(model: &LinearModel, lower: f64, upper: f64) -> DVector<f64> {
    let p = model.design.ncols();
    let gram = model.design.transpose() * &model.design;
    let rhs = model.design.transpose() * &model.response;
    let seed = solve_spd(&gram, &rhs)
        .unwrap_or_else(|| DVector::from_element(p, model.response.mean().max(1.0)));
    let floor = lower.max(1e-3);
    DVector::from_fn(p, |j, _| seed[j].clamp(floor, upper))
}

/// Maximum likelihood for `(bm, bu, bs, bt)` with `(a, g)` known.
pub fn fit_phi_reduced(
    data: &ObservedDataset,
    a_known: f64,
    g_known: f64,
    init: Option<[f64; 4]>,
    options: &FitOptions,
) -> Result<PhiEstimateReport, FitError> {
    data.validate().map_err(IntensityError::from)?;
    if !(a_known > 0.0 && a_known < 1.0) {
        return Err(FitError::BadKnownParameter {
            name: "a",
            value: a_known,
        });
    }
    if g_known.is_nan() || g_known <= 0.0 || !g_known.is_finite() {
        return Err(FitError::BadKnownParameter {
            name: "g",
            value: g_known,
        });
    }

    let model = reduced_design(data, a_known, g_known);
    let lower = options.bounds.scale_min;
    let upper = options.bounds.scale_max;
    let seed = match init {
        Some(values) => DVector::from_fn(4, |j, _| values[j].clamp(lower, upper)),
        None => least_squares_seed(&model, lower, upper),
    };
    model.check_rank(&seed, &["bm", "bu", "bs", "bt"])?;
    let outcome = model.fit(seed, lower, upper, options);

    let phi = IdentifiableParams {
        a: a_known,
        g: g_known,
        bm: outcome.beta[0],
        bu: outcome.beta[1],
        bs: outcome.beta[2],
        bt: outcome.beta[3],
    };
    let fisher = fisher_matrix(&phi, data)?;
    let mut warnings = Vec::new();
    let (free_cov, condition) = invert_information(&outcome.info);
    if free_cov.is_none() {
        warnings.push(format!(
            "information matrix is near-singular (condition {condition:.3e}); no covariance reported"
        ));
    }
    let covariance = free_cov.map(|inner| {
        let mut cov = [[0.0f64; 6]; 6];
        for a in 0..4 {
            for b in 0..4 {
                cov[a + 2][b + 2] = inner[(a, b)];
            }
        }
        cov
    });

    let mut active_bounds = [false; 6];
    for (j, &value) in outcome.beta.iter().enumerate() {
        active_bounds[j + 2] = value <= lower || value >= upper;
    }
    if !outcome.converged {
        warnings.push(format!(
            "scoring did not converge within {} iterations",
            options.max_iterations
        ));
    }
    Ok(PhiEstimateReport {
        phi,
        loglik: outcome.loglik,
        fisher,
        covariance,
        iterations: outcome.iterations,
        converged: outcome.converged,
        active_bounds,
        fixed: [true, true, false, false, false, false],
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Partial fits for short horizons (identifiable-subset models)
// ---------------------------------------------------------------------------

/// Fit the identifiable functionals at horizons 0..=2.
fn fit_identifiable_subset(
    data: &ObservedDataset,
    options: &FitOptions,
) -> Result<PartialFit, FitError> {
    let n = data.last_cycle();
    let identifiability = identifiable_set(n);
    let k = data.population_count() as f64;
    let lower = options.bounds.scale_min;
    let upper = options.bounds.scale_max;

    if n == 0 {
        // Poisson MLE of the single intensity: the mean rosette count.
        let c0 = data
            .populations
            .iter()
            .map(|p| p.rosettes[0] as f64)
            .sum::<f64>()
            / k;
        let loglik = data
            .populations
            .iter()
            .map(|p| {
                let r = p.rosettes[0] as f64;
                if c0 > 0.0 {
                    r * c0.ln() - c0
                } else {
                    0.0
                }
            })
            .sum();
        let se = (c0 / k).sqrt();
        return Ok(PartialFit {
            identifiability,
            estimates: vec![("c0".to_string(), c0, Some(se))],
            loglik,
            iterations: 0,
            converged: true,
            warnings: Vec::new(),
        });
    }

    // Linear parameterizations: n = 1 uses (bm, c0, c1); n = 2 uses
    // (bm, gbm, c0, c1, c2) with g recovered as gbm / bm.
    let (names, dims): (Vec<&str>, usize) = if n == 1 {
        (vec!["bm", "c0", "c1"], 3)
    } else {
        (vec!["bm", "gbm", "c0", "c1", "c2"], 5)
    };
    let mut rows = Vec::new();
    let mut response = Vec::new();
    for path in &data.populations {
        for i in 0..=n {
            let mut row = vec![0.0; dims];
            if n == 1 {
                match i {
                    0 => row[1] = 1.0,
                    _ => {
                        row[0] = path.mature[0] as f64;
                        row[2] = 1.0;
                    }
                }
            } else {
                match i {
                    0 => row[2] = 1.0,
                    1 => {
                        row[0] = path.mature[0] as f64;
                        row[3] = 1.0;
                    }
                    _ => {
                        row[0] = path.mature[1] as f64;
                        row[1] = path.mature[0] as f64;
                        row[4] = 1.0;
                    }
                }
            }
            rows.push(row);
            response.push(path.rosettes[i] as f64);
        }
    }
    let model = LinearModel {
        design: DMatrix::from_fn(rows.len(), dims, |r, c| rows[r][c]),
        response: DVector::from_vec(response),
    };
    let seed = least_squares_seed(&model, lower, upper);
    model.check_rank(&seed, &names)?;
    let outcome = model.fit(seed, lower, upper, options);
    let (inverse, condition) = invert_information(&outcome.info);
    let mut warnings = Vec::new();
    if inverse.is_none() {
        warnings.push(format!(
            "information matrix is near-singular (condition {condition:.3e}); no standard errors"
        ));
    }
    let mut estimates: Vec<(String, f64, Option<f64>)> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = inverse.as_ref().map(|m| m[(j, j)].max(0.0).sqrt());
            (name.to_string(), outcome.beta[j], se)
        })
        .collect();
    if n == 2 {
        // Derived cross ratio; its uncertainty is not propagated here.
        let g = outcome.beta[1] / outcome.beta[0];
        estimates.push(("g".to_string(), g, None));
    }
    Ok(PartialFit {
        identifiability,
        estimates,
        loglik: outcome.loglik,
        iterations: outcome.iterations,
        converged: outcome.converged,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Full six-component fit
// ---------------------------------------------------------------------------

struct FullObjective<'a> {
    data: &'a ObservedDataset,
}

impl FullObjective<'_> {
    fn loglik(&self, values: &[f64; 6]) -> f64 {
        let phi = IdentifiableParams::from_array(*values);
        incomplete_loglik(&phi, self.data).unwrap_or(f64::NEG_INFINITY)
    }

    /// Score vector and expected-information matrix at phi, both summed over
    /// all populations and cycles (unnormalized).
    fn score_and_info(&self, values: &[f64; 6]) -> (DVector<f64>, DMatrix<f64>) {
        let phi = IdentifiableParams::from_array(*values);
        let mut score = DVector::zeros(6);
        let mut info = DMatrix::zeros(6, 6);
        for path in &self.data.populations {
            let n = path.cycles() - 1;
            let intensities = crate::intensity::lambda_sequence(&phi, &path.mature[..n]);
            let gradients = lambda_gradient(&phi, &path.mature[..n]);
            for i in 0..=n {
                let lambda = intensities.lambda[i];
                if lambda <= 0.0 {
                    continue;
                }
                let weight = path.rosettes[i] as f64 / lambda - 1.0;
                let grad = &gradients[i];
                for a in 0..6 {
                    score[a] += weight * grad[a];
                    for b in a..6 {
                        info[(a, b)] += grad[a] * grad[b] / lambda;
                    }
                }
            }
        }
        for a in 0..6 {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        (score, info)
    }
}

struct AscentOutcome {
    values: [f64; 6],
    loglik: f64,
    iterations: usize,
    converged: bool,
    made_progress: bool,
}

/// Projected expected-information ascent from one start.
fn ascend(
    objective: &FullObjective,
    start: [f64; 6],
    options: &FitOptions,
) -> AscentOutcome {
    let lower = options.bounds.lower();
    let upper = options.bounds.upper();
    let project = |values: &mut [f64; 6]| {
        for p in 0..6 {
            values[p] = values[p].clamp(lower[p], upper[p]);
        }
    };
    let mut values = start;
    project(&mut values);
    let mut loglik = objective.loglik(&values);
    let mut iterations = 0;
    let mut converged = false;
    let mut made_progress = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let (score, info) = objective.score_and_info(&values);
        let Some(direction) = solve_spd(&info, &score) else {
            break;
        };
        let mut accepted = false;
        let mut t = 1.0f64;
        while t > 1e-12 {
            let mut candidate = values;
            for p in 0..6 {
                candidate[p] += t * direction[p];
            }
            project(&mut candidate);
            let candidate_loglik = objective.loglik(&candidate);
            if candidate_loglik > loglik {
                let step_norm: f64 = (0..6)
                    .map(|p| (candidate[p] - values[p]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let rel = (candidate_loglik - loglik) / loglik.abs().max(1.0);
                values = candidate;
                loglik = candidate_loglik;
                accepted = true;
                made_progress = true;
                if rel < options.loglik_rel_tol || step_norm < options.step_tol {
                    converged = true;
                }
                break;
            }
            t /= 2.0;
        }
        if !accepted {
            converged = made_progress;
            break;
        }
        if converged {
            break;
        }
    }

    AscentOutcome {
        values,
        loglik,
        iterations,
        converged,
        made_progress,
    }
}

/// Coarse (a, g) profile of the reduced fit, returning the best seed found.
fn grid_profile_seed(
    data: &ObservedDataset,
    options: &FitOptions,
) -> Option<([f64; 6], f64)> {
    let mut short = *options;
    short.max_iterations = 60;
    let mut best: Option<([f64; 6], f64)> = None;
    let a_grid = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];
    let g_grid = [0.001, 0.005, 0.02, 0.1, 0.3];
    for &a in &a_grid {
        for &g in &g_grid {
            let Ok(report) = fit_phi_reduced(data, a, g, None, &short) else {
                continue;
            };
            if best.as_ref().is_none_or(|(_, ll)| report.loglik > *ll) {
                best = Some((report.phi.as_array(), report.loglik));
            }
        }
    }
    best
}

/// Latin-hypercube perturbations of the primary seed, inside the box.
fn perturbed_starts(
    seed: [f64; 6],
    count: usize,
    options: &FitOptions,
) -> Vec<[f64; 6]> {
    use rand::Rng;
    use crate::stochastic::RngHandle;

    if count == 0 {
        return Vec::new();
    }
    let mut rng = RngHandle::new(options.seed, u64::MAX);
    // One stratum permutation per dimension.
    let strata: Vec<Vec<usize>> = (0..6)
        .map(|_| {
            let mut perm: Vec<usize> = (0..count).collect();
            for i in (1..count).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            perm
        })
        .collect();
    let lower = options.bounds.lower();
    let upper = options.bounds.upper();
    (0..count)
        .map(|s| {
            let mut start = seed;
            for p in 0..6 {
                let u = (strata[p][s] as f64 + rng.random::<f64>()) / count as f64;
                if p == 0 {
                    start[0] = (seed[0] + (u - 0.5) * 0.5).clamp(lower[0], upper[0]);
                } else {
                    // Multiplicative jitter spanning roughly [1/4, 4].
                    start[p] = (seed[p] * (2.0f64.ln() * 4.0 * (u - 0.5)).exp())
                        .clamp(lower[p], upper[p]);
                }
            }
            start
        })
        .collect()
}

/// Maximum likelihood over the full six-component box.
///
/// Horizons below three cycles return the identifiable-subset fit instead;
/// an optimum with `a` and `g` numerically indistinguishable is reported
/// through its four identifiable functionals rather than as a spurious
/// six-component estimate.
pub fn fit_phi_full(
    data: &ObservedDataset,
    init: InitStrategy,
    options: &FitOptions,
) -> Result<FullFitResult, FitError> {
    data.validate().map_err(IntensityError::from)?;
    if data.last_cycle() < 3 {
        let mut partial = fit_identifiable_subset(data, options)?;
        partial.warnings.push(format!(
            "horizon n = {} identifies only a subset of phi (n >= 3 required)",
            data.last_cycle()
        ));
        return Ok(FullFitResult::Partial(partial));
    }

    let objective = FullObjective { data };
    let primary = match init {
        InitStrategy::From(phi) => Some((phi.as_array(), objective.loglik(&phi.as_array()))),
        InitStrategy::GridProfile => grid_profile_seed(data, options),
    };
    let primary_seed = primary.map(|(seed, _)| seed).unwrap_or([0.5, 0.01, 1.0, 1.0, 1.0, 1.0]);

    let mut starts = vec![primary_seed];
    starts.extend(perturbed_starts(
        primary_seed,
        options.starts.saturating_sub(1),
        options,
    ));

    let mut best: Option<AscentOutcome> = None;
    let mut any_progress = false;
    let mut total_iterations = 0;
    for start in starts {
        let outcome = ascend(&objective, start, options);
        total_iterations += outcome.iterations;
        any_progress |= outcome.made_progress;
        if best.as_ref().is_none_or(|b| outcome.loglik > b.loglik) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");
    let mut warnings = Vec::new();
    if !any_progress && !best.converged {
        warnings.push("no start produced an improving step; optimization failed".to_string());
    }

    let phi = IdentifiableParams::from_array(best.values);
    // Degenerate ridge a = g: the six components are not separately
    // identifiable, so report the surviving functionals.
    if (phi.a - phi.g).abs() < 1e-3 * phi.a {
        let mut partial_warnings = warnings;
        partial_warnings.push(format!(
            "optimum has a = {:.6} and g = {:.6} numerically equal; only (a, bm, bu, bs+bt) are identifiable",
            phi.a, phi.g
        ));
        let mut identifiability = identifiable_set(data.last_cycle());
        identifiability.fully_identifiable = false;
        return Ok(FullFitResult::Partial(PartialFit {
            identifiability,
            estimates: vec![
                ("a".to_string(), phi.a, None),
                ("bm".to_string(), phi.bm, None),
                ("bu".to_string(), phi.bu, None),
                ("bs+bt".to_string(), phi.bs + phi.bt, None),
            ],
            loglik: best.loglik,
            iterations: total_iterations,
            converged: best.converged,
            warnings: partial_warnings,
        }));
    }
    if (phi.a - phi.g).abs() < 1e-2 * phi.a {
        warnings.push(format!(
            "a = {:.6} and g = {:.6} are close; the fit is near the nonidentifiable ridge",
            phi.a, phi.g
        ));
    }

    let fisher = fisher_matrix(&phi, data)?;
    let fisher_matrix_na = DMatrix::from_fn(6, 6, |r, c| fisher[r][c]);
    let (inverse, condition) = invert_information(&fisher_matrix_na);
    if inverse.is_none() {
        warnings.push(format!(
            "Fisher matrix is near-singular (condition {condition:.3e}); no covariance reported"
        ));
    }
    let k = data.population_count() as f64;
    let covariance = inverse.map(|m| {
        let mut cov = [[0.0f64; 6]; 6];
        for r in 0..6 {
            for c in 0..6 {
                cov[r][c] = m[(r, c)] / k;
            }
        }
        cov
    });

    let lower = options.bounds.lower();
    let upper = options.bounds.upper();
    let mut active_bounds = [false; 6];
    for p in 0..6 {
        active_bounds[p] = best.values[p] <= lower[p] || best.values[p] >= upper[p];
    }

    Ok(FullFitResult::Full(Box::new(PhiEstimateReport {
        phi,
        loglik: best.loglik,
        fisher,
        covariance,
        iterations: total_iterations,
        converged: best.converged,
        active_bounds,
        fixed: [false; 6],
        warnings,
    })))
}
