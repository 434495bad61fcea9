//! The rosette-intensity recursion for partially observed trajectories.
//!
//! When the seed stages are hidden and all count laws are Poisson, the
//! conditional law of the rosette count given the observed past is Poisson
//! with an intensity that is an explicit function of the mature-plant
//! history and of the six-dimensional parameter transform
//! `phi = (a, a'b/b', b'm, b'u, b sigma, b' tau)`. Everything observable
//! depends on the full parameter vector only through `phi`, which is why
//! `phi` is the natural estimation target.
//!
//! Writing `gamma_i` for the seed-bank contribution `b Gamma_i` and
//! `gamma'_i` for the fresh-seed contribution `b' Gamma'_i`, the intensity
//! satisfies the two-term recursion
//!
//! ```text
//! gamma_0 = bs,  gamma'_0 = bt,
//! gamma_i = a gamma_{i-1} + g gamma'_{i-1},   gamma'_i = bm F_{i-1} + bu,
//! Lambda_i = gamma_i + gamma'_i,
//! ```
//!
//! which this module evaluates in O(n) alongside its expanded polynomial
//! form (used as an independent cross-check) and the six analytic partial
//! derivatives that drive the likelihood fits.

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{DemographicParams, ObservedDataset, ObservedPath};
use crate::stochastic::{sample_binomial, sample_poisson, RngHandle, SampleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntensityError {
    #[error("phi component {name} = {value} is outside its admissible range")]
    OutOfBox { name: &'static str, value: f64 },
    #[error("intensity vanished at cycle {cycle} while rosettes were observed")]
    ZeroIntensity { cycle: usize },
    #[error("dataset has no populations")]
    EmptyData,
    #[error(transparent)]
    Data(#[from] crate::dynamics::DynamicsError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// The parameter transform estimable from partial observations.
///
/// Components, in the fixed order used for gradients and Fisher matrices:
/// `a` (seed-bank survival), `g = a'b/b'` (cross-germination ratio),
/// `bm = b'm`, `bu = b'u`, `bs = b sigma`, `bt = b' tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifiableParams {
    pub a: f64,
    pub g: f64,
    pub bm: f64,
    pub bu: f64,
    pub bs: f64,
    pub bt: f64,
}

pub const PHI_NAMES: [&str; 6] = ["a", "g", "bm", "bu", "bs", "bt"];

impl IdentifiableParams {
    /// The transform phi(theta) of a full demographic parameter vector.
    pub fn from_demographic(params: &DemographicParams) -> Self {
        Self {
            a: params.a,
            g: params.a_prime * params.b / params.b_prime,
            bm: params.b_prime * params.offspring.mean(),
            bu: params.b_prime * params.immigration.mean(),
            bs: params.b * params.sigma,
            bt: params.b_prime * params.tau,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.a, self.g, self.bm, self.bu, self.bs, self.bt]
    }

    pub fn from_array(values: [f64; 6]) -> Self {
        Self {
            a: values[0],
            g: values[1],
            bm: values[2],
            bu: values[3],
            bs: values[4],
            bt: values[5],
        }
    }

    /// Domain check used by the likelihood: a in (0, 1), the scale
    /// components nonnegative and finite.
    pub fn validate(&self) -> Result<(), IntensityError> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(IntensityError::OutOfBox {
                name: "a",
                value: self.a,
            });
        }
        for (name, value) in [
            ("g", self.g),
            ("bm", self.bm),
            ("bu", self.bu),
            ("bs", self.bs),
            ("bt", self.bt),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(IntensityError::OutOfBox { name, value });
            }
        }
        Ok(())
    }
}

/// Compact search box for phi: the five scale components live in
/// `[scale_min, scale_max]`, the survival probability in `[a_min, a_max]`.
/// The default constants are configuration choices, not model quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiBounds {
    pub scale_min: f64,
    pub scale_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for PhiBounds {
    fn default() -> Self {
        Self {
            scale_min: 1e-6,
            scale_max: 1e6,
            a_min: 1e-3,
            a_max: 1.0 - 1e-3,
        }
    }
}

impl PhiBounds {
    pub fn lower(&self) -> [f64; 6] {
        [
            self.a_min,
            self.scale_min,
            self.scale_min,
            self.scale_min,
            self.scale_min,
            self.scale_min,
        ]
    }

    pub fn upper(&self) -> [f64; 6] {
        [
            self.a_max,
            self.scale_max,
            self.scale_max,
            self.scale_max,
            self.scale_max,
            self.scale_max,
        ]
    }

    pub fn contains(&self, phi: &IdentifiableParams) -> bool {
        let values = phi.as_array();
        let lower = self.lower();
        let upper = self.upper();
        (0..6).all(|p| values[p] >= lower[p] && values[p] <= upper[p])
    }

    pub fn project(&self, values: [f64; 6]) -> [f64; 6] {
        let lower = self.lower();
        let upper = self.upper();
        let mut out = values;
        for p in 0..6 {
            out[p] = out[p].clamp(lower[p], upper[p]);
        }
        out
    }
}

/// Intensity decomposition along one trajectory: `gamma[i]` is the seed-bank
/// share, `gamma_prime[i]` the fresh-seed share, `lambda[i]` their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPath {
    pub gamma: Vec<f64>,
    pub gamma_prime: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl IntensityPath {
    pub fn cycles(&self) -> usize {
        self.lambda.len()
    }
}

/// Intensities Lambda_0..Lambda_n from the mature-plant history F_0..F_{n-1},
/// computed incrementally in O(n).
pub fn lambda_sequence(phi: &IdentifiableParams, f_history: &[u64]) -> IntensityPath {
    let cycles = f_history.len() + 1;
    let mut path = IntensityPath {
        gamma: Vec::with_capacity(cycles),
        gamma_prime: Vec::with_capacity(cycles),
        lambda: Vec::with_capacity(cycles),
    };
    let mut gamma = phi.bs;
    let mut gamma_prime = phi.bt;
    path.gamma.push(gamma);
    path.gamma_prime.push(gamma_prime);
    path.lambda.push(gamma + gamma_prime);
    for &f in f_history {
        let next_gamma = phi.a * gamma + phi.g * gamma_prime;
        let next_prime = phi.bm * f as f64 + phi.bu;
        gamma = next_gamma;
        gamma_prime = next_prime;
        path.gamma.push(gamma);
        path.gamma_prime.push(gamma_prime);
        path.lambda.push(gamma + gamma_prime);
    }
    path
}

/// The cycle constant c_i(phi): the part of Lambda_i not driven by the
/// mature-plant history (initial seeds propagated through the bank plus the
/// accumulated immigration pressure).
pub fn cycle_constant(phi: &IdentifiableParams, i: usize) -> f64 {
    match i {
        0 => phi.bs + phi.bt,
        1 => phi.a * phi.bs + phi.g * phi.bt + phi.bu,
        _ => {
            let a_pow_im1 = phi.a.powi(i as i32 - 1);
            let geometric: f64 = (0..=i - 2).map(|j| phi.a.powi(j as i32)).sum();
            phi.a.powi(i as i32) * phi.bs
                + a_pow_im1 * phi.g * phi.bt
                + phi.g * phi.bu * geometric
                + phi.bu
        }
    }
}

/// Lambda_i evaluated from its expanded polynomial form, term by term.
/// Algebraically identical to `lambda_sequence`; kept as an independent
/// evaluation route for cross-checking the recursion.
pub fn lambda_expanded(phi: &IdentifiableParams, f_history: &[u64], i: usize) -> f64 {
    assert!(i <= f_history.len(), "cycle {i} needs F_0..F_{}", i.max(1) - 1);
    if i == 0 {
        return cycle_constant(phi, 0);
    }
    let mut value = phi.bm * f_history[i - 1] as f64 + cycle_constant(phi, i);
    if i >= 2 {
        let weighted: f64 = (0..=i - 2)
            .map(|j| phi.a.powi((i - 2 - j) as i32) * f_history[j] as f64)
            .sum();
        value += phi.g * phi.bm * weighted;
    }
    value
}

/// Analytic gradients `d Lambda_i / d phi_p` for i = 0..=n, in the component
/// order of [`PHI_NAMES`]. Terms whose index ranges are empty are zero.
pub fn lambda_gradient(phi: &IdentifiableParams, f_history: &[u64]) -> Vec<[f64; 6]> {
    let n = f_history.len();
    let mut gradients = Vec::with_capacity(n + 1);
    gradients.push([0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);

    // Running accumulators held at the current cycle i:
    //   weighted     = sum_{j=0}^{i-2} a^{i-2-j} F_j   (the F-sum in Lambda_i)
    //   weighted_da  = d(weighted)/da
    //   geometric    = sum_{j=0}^{i-2} a^j = (1 - a^{i-1}) / (1 - a)
    //   geometric_da = d(geometric)/da = sum_{j=1}^{i-2} j a^{j-1}
    let mut weighted = 0.0f64;
    let mut weighted_da = 0.0f64;
    let mut geometric = 0.0f64;
    let mut geometric_da = 0.0f64;
    let mut a_im1 = 1.0f64; // a^{i-1}
    let mut a_im2 = 0.0f64; // a^{i-2}; only multiplied by i-1 = 0 at i = 1

    for i in 1..=n {
        let a_i = a_im1 * phi.a;
        let d_a = phi.g * phi.bm * weighted_da
            + phi.bs * i as f64 * a_im1
            + phi.g * phi.bt * (i - 1) as f64 * a_im2
            + phi.g * phi.bu * geometric_da;
        let d_g = phi.bm * weighted + phi.bt * a_im1 + phi.bu * geometric;
        let d_bm = f_history[i - 1] as f64 + phi.g * weighted;
        let d_bu = 1.0 + phi.g * geometric;
        gradients.push([d_a, d_g, d_bm, d_bu, a_i, phi.g * a_im1]);

        // Advance every accumulator from cycle i to i + 1.
        weighted_da = weighted + phi.a * weighted_da;
        weighted = phi.a * weighted + f_history[i - 1] as f64;
        geometric_da += (i - 1) as f64 * a_im2;
        geometric += a_im1;
        a_im2 = a_im1;
        a_im1 = a_i;
    }
    gradients
}

/// Poisson log-likelihood of the rosette counts given phi, omitting the
/// phi-free term `-log r!`. Values are therefore comparable across parameter
/// vectors but are not absolute log-probabilities.
pub fn incomplete_loglik(
    phi: &IdentifiableParams,
    data: &ObservedDataset,
) -> Result<f64, IntensityError> {
    phi.validate()?;
    data.validate()?;
    let mut total = 0.0;
    for path in &data.populations {
        total += path_loglik(phi, path)?;
    }
    Ok(total)
}

fn path_loglik(phi: &IdentifiableParams, path: &ObservedPath) -> Result<f64, IntensityError> {
    let n = path.cycles() - 1;
    let intensities = lambda_sequence(phi, &path.mature[..n]);
    let mut total = 0.0;
    for (i, (&r, &lambda)) in path.rosettes.iter().zip(&intensities.lambda).enumerate() {
        if lambda <= 0.0 {
            if r > 0 {
                return Err(IntensityError::ZeroIntensity { cycle: i });
            }
            continue; // 0 * log 0 - 0, by convention 0
        }
        total += r as f64 * lambda.ln() - lambda;
    }
    Ok(total)
}

/// Empirical Fisher information of phi on a dataset:
/// `I_pq = (1/K) sum_k sum_i (1/lambda_i^k) dlambda_i^k/dphi_p dlambda_i^k/dphi_q`.
pub fn fisher_matrix(
    phi: &IdentifiableParams,
    data: &ObservedDataset,
) -> Result<[[f64; 6]; 6], IntensityError> {
    phi.validate()?;
    data.validate()?;
    let mut info = [[0.0f64; 6]; 6];
    for path in &data.populations {
        let n = path.cycles() - 1;
        let intensities = lambda_sequence(phi, &path.mature[..n]);
        let gradients = lambda_gradient(phi, &path.mature[..n]);
        for (lambda, grad) in intensities.lambda.iter().zip(&gradients) {
            if *lambda <= 0.0 {
                continue;
            }
            for p in 0..6 {
                for q in p..6 {
                    info[p][q] += grad[p] * grad[q] / lambda;
                }
            }
        }
    }
    let k = data.population_count() as f64;
    for p in 0..6 {
        for q in p..6 {
            info[p][q] /= k;
            info[q][p] = info[p][q];
        }
    }
    Ok(info)
}

/// Simulate the observed process directly from its intensity representation:
/// rosettes are Poisson draws at the running intensity, then the two
/// binomial thinnings. No seed-stage bookkeeping is involved, yet the law of
/// the output matches `observe(simulate(..))` at matched phi exactly.
pub fn simulate_via_intensity(
    phi: &IdentifiableParams,
    cycles: usize,
    population_count: usize,
    master_seed: u64,
    c: f64,
    d: f64,
) -> Result<ObservedDataset, IntensityError> {
    phi.validate()?;
    if population_count == 0 {
        return Err(IntensityError::EmptyData);
    }
    let populations = (0..population_count)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngHandle::new(master_seed, k as u64);
            let mut path = ObservedPath {
                rosettes: Vec::with_capacity(cycles + 1),
                vernalized: Vec::with_capacity(cycles + 1),
                mature: Vec::with_capacity(cycles + 1),
            };
            let mut gamma = phi.bs;
            let mut gamma_prime = phi.bt;
            for _ in 0..=cycles {
                let lambda = gamma + gamma_prime;
                let rosettes = sample_poisson(lambda, &mut rng)?;
                let vernalized = sample_binomial(rosettes, c, &mut rng)?;
                let mature = sample_binomial(vernalized, d, &mut rng)?;
                path.rosettes.push(rosettes);
                path.vernalized.push(vernalized);
                path.mature.push(mature);
                let next_gamma = phi.a * gamma + phi.g * gamma_prime;
                gamma_prime = phi.bm * mature as f64 + phi.bu;
                gamma = next_gamma;
            }
            Ok(path)
        })
        .collect::<Result<Vec<_>, SampleError>>()?;
    Ok(ObservedDataset { populations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{observe, simulate};
    use crate::experiment::ExperimentConfig;
    use approx::assert_relative_eq;

    fn study_phi() -> IdentifiableParams {
        IdentifiableParams {
            a: 0.15,
            g: 0.006,
            bm: 6.5,
            bu: 40.0,
            bs: 25.0,
            bt: 25.0,
        }
    }

    fn observed(rosettes: Vec<u64>, mature: Vec<u64>) -> ObservedDataset {
        let vernalized = mature.clone();
        ObservedDataset {
            populations: vec![ObservedPath {
                rosettes,
                vernalized,
                mature,
            }],
        }
    }

    #[test]
    fn phi_transform_of_study_parameters() {
        let params = ExperimentConfig::default().demographic_params(None).unwrap();
        let phi = IdentifiableParams::from_demographic(&params);
        assert_relative_eq!(phi.a, 0.15);
        assert_relative_eq!(phi.g, 0.006, epsilon = 1e-12);
        assert_relative_eq!(phi.bm, 6.5);
        assert_relative_eq!(phi.bu, 40.0);
        assert_relative_eq!(phi.bs, 25.0);
        assert_relative_eq!(phi.bt, 25.0);
    }

    #[test]
    fn lambda_hand_computed_values() {
        let phi = study_phi();
        let path = lambda_sequence(&phi, &[]);
        assert_relative_eq!(path.lambda[0], 50.0);

        let path = lambda_sequence(&phi, &[2]);
        assert_relative_eq!(path.lambda[1], 56.9, epsilon = 1e-12);

        let path = lambda_sequence(&phi, &[2, 3]);
        assert_relative_eq!(path.lambda[2], 60.403, epsilon = 1e-12);
        for i in 0..path.cycles() {
            assert_relative_eq!(path.lambda[i], path.gamma[i] + path.gamma_prime[i]);
        }
    }

    #[test]
    fn recursion_matches_expanded_form() {
        let mut rng = RngHandle::new(77, 0);
        for case in 0..200u64 {
            let phi = IdentifiableParams {
                a: 0.05 + 0.9 * ((case % 17) as f64 / 17.0),
                g: 10f64.powf(-3.0 + 3.0 * ((case % 13) as f64 / 13.0)),
                bm: 0.1 + (case % 7) as f64,
                bu: 0.1 + (case % 11) as f64 * 10.0,
                bs: 0.1 + (case % 5) as f64 * 12.0,
                bt: 0.1 + (case % 3) as f64 * 20.0,
            };
            let n = (case % 10) as usize + 1;
            let f_history: Vec<u64> = (0..n)
                .map(|_| sample_poisson(3.0, &mut rng).unwrap())
                .collect();
            let path = lambda_sequence(&phi, &f_history);
            for i in 0..=n {
                let expanded = lambda_expanded(&phi, &f_history, i);
                assert_relative_eq!(path.lambda[i], expanded, max_relative = 1e-12);
            }
        }
    }

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        fn arbitrary_phi() -> impl Strategy<Value = IdentifiableParams> {
            (
                0.001f64..0.999,
                0.0f64..2.0,
                0.0f64..100.0,
                0.0f64..100.0,
                0.0f64..100.0,
                0.0f64..100.0,
            )
                .prop_map(|(a, g, bm, bu, bs, bt)| IdentifiableParams {
                    a,
                    g,
                    bm,
                    bu,
                    bs,
                    bt,
                })
        }

        proptest! {
            // The O(n) recursion and the expanded polynomial evaluation are
            // the same function, and the stored decomposition always sums to
            // the intensity.
            #[test]
            fn recursion_expansion_and_decomposition_agree(
                phi in arbitrary_phi(),
                f_history in proptest::collection::vec(0u64..200, 0..8),
            ) {
                let path = lambda_sequence(&phi, &f_history);
                for i in 0..path.cycles() {
                    let expanded = lambda_expanded(&phi, &f_history, i);
                    let tolerance = 1e-12 * expanded.abs().max(1.0);
                    prop_assert!((path.lambda[i] - expanded).abs() <= tolerance);
                    prop_assert!(path.lambda[i] >= 0.0);
                    prop_assert_eq!(path.lambda[i], path.gamma[i] + path.gamma_prime[i]);
                }
            }
        }
    }

    #[test]
    fn loglik_hand_computed_values() {
        let phi = study_phi();
        assert_relative_eq!(
            incomplete_loglik(&phi, &observed(vec![0], vec![0])).unwrap(),
            -50.0
        );
        assert_relative_eq!(
            incomplete_loglik(&phi, &observed(vec![50], vec![0])).unwrap(),
            50.0 * 50.0f64.ln() - 50.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn loglik_population_order_invariance() {
        let phi = study_phi();
        let params = ExperimentConfig::default().demographic_params(None).unwrap();
        let data = observe(&simulate(&params, 3, 40, 321).unwrap());
        let forward = incomplete_loglik(&phi, &data).unwrap();
        let mut reversed = data.clone();
        reversed.populations.reverse();
        let backward = incomplete_loglik(&phi, &reversed).unwrap();
        assert_relative_eq!(forward, backward, max_relative = 1e-12);
    }

    #[test]
    fn loglik_domain_errors() {
        let mut phi = study_phi();
        phi.a = 1.5;
        assert!(matches!(
            incomplete_loglik(&phi, &observed(vec![1], vec![0])),
            Err(IntensityError::OutOfBox { name: "a", .. })
        ));
        let mut phi = study_phi();
        phi.bm = -1.0;
        assert!(incomplete_loglik(&phi, &observed(vec![1], vec![0])).is_err());
    }

    #[test]
    fn gradient_initial_cycle() {
        let grads = lambda_gradient(&study_phi(), &[]);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0], [0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_bank_component_is_power_of_a() {
        let phi = study_phi();
        let grads = lambda_gradient(&phi, &[2, 3, 1]);
        for (i, grad) in grads.iter().enumerate() {
            assert_relative_eq!(grad[4], phi.a.powi(i as i32), epsilon = 1e-12);
        }
        assert_relative_eq!(grads[2][4], 0.0225, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = RngHandle::new(88, 0);
        for case in 0..100u64 {
            let phi = IdentifiableParams {
                a: 0.05 + 0.85 * ((case as f64 * 0.37) % 1.0),
                g: 10f64.powf(-3.0 + 3.0 * ((case as f64 * 0.51) % 1.0)),
                bm: 0.5 + 30.0 * ((case as f64 * 0.73) % 1.0),
                bu: 0.5 + 80.0 * ((case as f64 * 0.29) % 1.0),
                bs: 0.5 + 50.0 * ((case as f64 * 0.61) % 1.0),
                bt: 0.5 + 50.0 * ((case as f64 * 0.83) % 1.0),
            };
            let n = (case % 6) as usize + 1;
            let f_history: Vec<u64> = (0..n)
                .map(|_| sample_poisson(4.0, &mut rng).unwrap())
                .collect();
            let analytic = lambda_gradient(&phi, &f_history);
            let lambda = lambda_sequence(&phi, &f_history);
            for p in 0..6 {
                let scale = 1e-6 * phi.as_array()[p].abs().max(1.0);
                let mut plus = phi.as_array();
                let mut minus = phi.as_array();
                plus[p] += scale;
                minus[p] -= scale;
                let lambda_plus = lambda_sequence(&IdentifiableParams::from_array(plus), &f_history);
                let lambda_minus =
                    lambda_sequence(&IdentifiableParams::from_array(minus), &f_history);
                for i in 0..=n {
                    let fd = (lambda_plus.lambda[i] - lambda_minus.lambda[i]) / (2.0 * scale);
                    // The denominator floor tracks the cancellation noise of
                    // the central difference, which scales with Lambda itself.
                    let reference = analytic[i][p]
                        .abs()
                        .max(fd.abs())
                        .max(1e-3 * (1.0 + lambda.lambda[i]));
                    assert!(
                        (fd - analytic[i][p]).abs() / reference < 1e-6,
                        "case {case}, cycle {i}, component {}: fd {fd} vs analytic {}",
                        PHI_NAMES[p],
                        analytic[i][p]
                    );
                }
            }
        }
    }

    #[test]
    fn fisher_rank_one_at_single_cycle() {
        let phi = study_phi();
        let data = ObservedDataset {
            populations: vec![
                ObservedPath {
                    rosettes: vec![40],
                    vernalized: vec![9],
                    mature: vec![0],
                },
                ObservedPath {
                    rosettes: vec![55],
                    vernalized: vec![12],
                    mature: vec![1],
                },
            ],
        };
        let info = fisher_matrix(&phi, &data).unwrap();
        for p in 0..6 {
            for q in 0..6 {
                let expected = if p >= 4 && q >= 4 { 0.02 } else { 0.0 };
                assert_relative_eq!(info[p][q], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fisher_is_symmetric() {
        let phi = study_phi();
        let params = ExperimentConfig::default().demographic_params(None).unwrap();
        let data = observe(&simulate(&params, 4, 50, 99).unwrap());
        let info = fisher_matrix(&phi, &data).unwrap();
        for p in 0..6 {
            for q in 0..6 {
                assert_eq!(info[p][q], info[q][p]);
            }
        }
    }

    #[test]
    fn intensity_simulator_matches_initial_mean_and_is_deterministic() {
        let phi = study_phi();
        let data = simulate_via_intensity(&phi, 0, 100_000, 5150, 0.21, 0.01).unwrap();
        let mean_r0 = data
            .populations
            .iter()
            .map(|p| p.rosettes[0] as f64)
            .sum::<f64>()
            / data.population_count() as f64;
        assert!((mean_r0 - 50.0).abs() < 4.0 * (50.0f64 / 100_000.0).sqrt());

        let again = simulate_via_intensity(&phi, 0, 100_000, 5150, 0.21, 0.01).unwrap();
        assert_eq!(data, again);
    }

    /// The intensity simulator and the full five-stage simulator agree in
    /// law on the observable stages: first two moments of R_i and F_i match
    /// within Monte Carlo error at matched phi.
    #[test]
    fn intensity_simulator_agrees_with_projection() {
        let config = ExperimentConfig::default();
        let params = config.demographic_params(None).unwrap();
        let phi = IdentifiableParams::from_demographic(&params);
        let k = 10_000usize;
        let full = observe(&simulate(&params, 4, k, 2024).unwrap());
        let direct = simulate_via_intensity(&phi, 4, k, 4048, params.c, params.d).unwrap();

        // Mean, variance, and the sampling variance of the variance estimate
        // (fourth-central-moment formula; the normal-theory 2 v^2 / n would be
        // far too tight for these skewed counts).
        let moments = |data: &ObservedDataset, i: usize, stage: fn(&ObservedPath) -> &Vec<u64>| {
            let values: Vec<f64> = data.populations.iter().map(|p| stage(p)[i] as f64).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
            (mean, var, (m4 - var * var).max(0.0) / n, n)
        };
        for i in 0..=4usize {
            for stage in [
                (|p: &ObservedPath| &p.rosettes) as fn(&ObservedPath) -> &Vec<u64>,
                |p: &ObservedPath| &p.mature,
            ] {
                let (m1, v1, var_of_var1, n1) = moments(&full, i, stage);
                let (m2, v2, var_of_var2, n2) = moments(&direct, i, stage);
                let se_mean = (v1 / n1 + v2 / n2).sqrt().max(1e-9);
                assert!(
                    (m1 - m2).abs() < 4.0 * se_mean,
                    "cycle {i}: means {m1} vs {m2}"
                );
                let se_var = (var_of_var1 + var_of_var2).sqrt().max(1e-9);
                assert!(
                    (v1 - v2).abs() < 4.0 * se_var,
                    "cycle {i}: variances {v1} vs {v2}"
                );
            }
        }
    }
}
