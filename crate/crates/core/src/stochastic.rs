//! Seedable sampling for the count distributions the life cycle needs.
//!
//! Every random draw in this crate flows through an [`RngHandle`], a ChaCha
//! stream addressed by `(master_seed, stream_index)`. Two handles built from
//! the same pair produce bit-identical draw sequences regardless of how many
//! other streams are in use or on how many threads, which is what makes the
//! simulators and the experiment harness reproducible.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use thiserror::Error;

/// Sum of multinomial cell probabilities may exceed 1 by at most this much
/// before we reject the parameter vector (floating-point slack only).
const PROB_SUM_SLACK: f64 = 1e-9;

/// Errors from invalid sampling parameters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("multinomial cell probabilities sum to {0} > 1")]
    CellMassExceedsOne(f64),
    #[error("negative cell probability {0}")]
    NegativeCellProbability(f64),
    #[error("mean {0} is negative, too large to sample, or not finite")]
    InvalidMean(f64),
    #[error("negative binomial needs variance > mean > 0 (got mean {mean}, variance {variance})")]
    NotOverdispersed { mean: f64, variance: f64 },
    #[error("spec is {found:?} but a {expected:?} distribution is required")]
    WrongKind {
        expected: DistributionKind,
        found: DistributionKind,
    },
}

/// Family of a count distribution used for offspring or immigration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    Poisson,
    NegativeBinomial,
}

/// A count distribution pinned down by its first two moments.
///
/// Poisson specs carry `variance == mean`; negative binomial specs require
/// strict overdispersion (`variance > mean > 0`) and are sampled as a
/// gamma-Poisson mixture with moment-matched shape `mean^2 / (variance - mean)`
/// and success probability `mean / variance`. Non-integer shapes are fine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    kind: DistributionKind,
    mean: f64,
    variance: f64,
}

impl DistributionSpec {
    /// Poisson with the given mean (variance equals the mean).
    pub fn poisson(mean: f64) -> Result<Self, SampleError> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(SampleError::InvalidMean(mean));
        }
        Ok(Self {
            kind: DistributionKind::Poisson,
            mean,
            variance: mean,
        })
    }

    /// Negative binomial with the given mean and variance, variance > mean > 0.
    pub fn negative_binomial(mean: f64, variance: f64) -> Result<Self, SampleError> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(SampleError::InvalidMean(mean));
        }
        if !(variance.is_finite() && variance > mean && mean > 0.0) {
            return Err(SampleError::NotOverdispersed { mean, variance });
        }
        Ok(Self {
            kind: DistributionKind::NegativeBinomial,
            mean,
            variance,
        })
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Moment-matched gamma shape `r = mean^2 / (variance - mean)`.
    /// Only meaningful for negative binomial specs.
    pub fn shape(&self) -> f64 {
        self.mean * self.mean / (self.variance - self.mean)
    }

    /// Moment-matched success probability `mean / variance`.
    pub fn success_probability(&self) -> f64 {
        self.mean / self.variance
    }

    /// Gamma scale of the mixing distribution, `(1 - p) / p = (variance - mean) / mean`.
    fn gamma_scale(&self) -> f64 {
        (self.variance - self.mean) / self.mean
    }
}

/// A deterministic random stream addressed by `(master_seed, stream_index)`.
///
/// Streams with distinct indices are independent; a single handle must not be
/// shared across threads (it is `Send` but deliberately not clonable).
#[derive(Debug)]
pub struct RngHandle {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Mix a salt into a master seed, giving a derived seed for sub-experiments.
///
/// SplitMix64 finalizer; distinct salts give effectively independent seeds
/// while keeping the derivation order-free and thread-count-free.
pub fn derive_seed(master_seed: u64, salt: u64) -> u64 {
    let mut z = master_seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw from Binomial(n, p).
pub fn sample_binomial(n: u64, p: f64, rng: &mut RngHandle) -> Result<u64, SampleError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(SampleError::ProbabilityOutOfRange(p));
    }
    if n == 0 || p == 0.0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(n);
    }
    let dist = Binomial::new(n, p).expect("parameters validated above");
    Ok(dist.sample(rng))
}

/// Draw the explicit cells of Multinomial(n; probs, 1 - sum(probs)).
///
/// The residual mass `1 - sum(probs)` is an implicit cell whose count is not
/// returned (here: death). Sampling is by sequential conditional binomials,
/// so the result is exact and consumes a bounded number of draws.
pub fn sample_multinomial(
    n: u64,
    probs: &[f64],
    rng: &mut RngHandle,
) -> Result<Vec<u64>, SampleError> {
    let mut total = 0.0;
    for &p in probs {
        if p < 0.0 || p.is_nan() {
            return Err(SampleError::NegativeCellProbability(p));
        }
        total += p;
    }
    if total > 1.0 + PROB_SUM_SLACK {
        return Err(SampleError::CellMassExceedsOne(total));
    }

    let mut counts = Vec::with_capacity(probs.len());
    let mut remaining = n;
    let mut mass_left = 1.0;
    for &p in probs {
        if remaining == 0 || p == 0.0 {
            counts.push(0);
            mass_left -= p;
            continue;
        }
        let conditional = (p / mass_left).clamp(0.0, 1.0);
        let x = sample_binomial(remaining, conditional, rng)?;
        counts.push(x);
        remaining -= x;
        mass_left -= p;
    }
    Ok(counts)
}

/// Draw from Poisson(lambda); lambda = 0 is the point mass at 0.
pub fn sample_poisson(lambda: f64, rng: &mut RngHandle) -> Result<u64, SampleError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(SampleError::InvalidMean(lambda));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    // The sampler itself rejects lambda beyond its internal limit (~1.8e19).
    let dist = Poisson::new(lambda).map_err(|_| SampleError::InvalidMean(lambda))?;
    let draw: f64 = dist.sample(rng);
    Ok(draw as u64)
}

/// Poisson draw with a gamma-distributed mean: Poisson(Gamma(shape, scale)).
fn sample_gamma_poisson(shape: f64, scale: f64, rng: &mut RngHandle) -> Result<u64, SampleError> {
    let gamma = Gamma::new(shape, scale).map_err(|_| SampleError::InvalidMean(shape * scale))?;
    let lambda: f64 = gamma.sample(rng);
    sample_poisson(lambda.max(0.0), rng)
}

/// Draw from the negative binomial described by `spec`.
pub fn sample_negative_binomial(
    spec: &DistributionSpec,
    rng: &mut RngHandle,
) -> Result<u64, SampleError> {
    if spec.kind != DistributionKind::NegativeBinomial {
        return Err(SampleError::WrongKind {
            expected: DistributionKind::NegativeBinomial,
            found: spec.kind,
        });
    }
    sample_gamma_poisson(spec.shape(), spec.gamma_scale(), rng)
}

/// One draw from whichever distribution the spec describes.
pub fn sample_count(spec: &DistributionSpec, rng: &mut RngHandle) -> Result<u64, SampleError> {
    match spec.kind {
        DistributionKind::Poisson => sample_poisson(spec.mean, rng),
        DistributionKind::NegativeBinomial => sample_negative_binomial(spec, rng),
    }
}

/// Sum of `f` independent draws from `spec` (total offspring of `f` parents).
///
/// Both families are closed under convolution at fixed success probability:
/// the sum of f Poisson(m) draws is Poisson(f m), and the sum of f negative
/// binomials with shape r is a negative binomial with shape f r. A single
/// draw from the aggregate therefore has exactly the right law.
pub fn sample_offspring_total(
    f: u64,
    spec: &DistributionSpec,
    rng: &mut RngHandle,
) -> Result<u64, SampleError> {
    if f == 0 {
        return Ok(0);
    }
    match spec.kind {
        DistributionKind::Poisson => sample_poisson(f as f64 * spec.mean, rng),
        DistributionKind::NegativeBinomial => {
            sample_gamma_poisson(f as f64 * spec.shape(), spec.gamma_scale(), rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_and_var(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn binomial_edge_cases() {
        let mut rng = RngHandle::new(1, 0);
        assert_eq!(sample_binomial(0, 0.5, &mut rng).unwrap(), 0);
        assert_eq!(sample_binomial(7, 1.0, &mut rng).unwrap(), 7);
        assert_eq!(sample_binomial(7, 0.0, &mut rng).unwrap(), 0);
        assert!(sample_binomial(5, 1.5, &mut rng).is_err());
        assert!(sample_binomial(5, -0.1, &mut rng).is_err());
    }

    #[test]
    fn binomial_single_large_draw_within_clt_bound() {
        let mut rng = RngHandle::new(7, 0);
        let n = 1_000_000u64;
        let p = 0.21;
        let x = sample_binomial(n, p, &mut rng).unwrap() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((x - 210_000.0).abs() < 3.0 * sd, "x = {x}");
    }

    #[test]
    fn multinomial_edge_cases() {
        let mut rng = RngHandle::new(2, 0);
        assert_eq!(
            sample_multinomial(5, &[1.0, 0.0], &mut rng).unwrap(),
            vec![5, 0]
        );
        assert_eq!(
            sample_multinomial(0, &[0.15, 0.5], &mut rng).unwrap(),
            vec![0, 0]
        );
        assert!(sample_multinomial(5, &[0.7, 0.4], &mut rng).is_err());
        assert!(sample_multinomial(5, &[-0.1, 0.4], &mut rng).is_err());
    }

    #[test]
    fn multinomial_cell_means_within_clt_bound() {
        let mut rng = RngHandle::new(3, 0);
        let n = 100_000u64;
        let counts = sample_multinomial(n, &[0.15, 0.5], &mut rng).unwrap();
        let sd0 = (n as f64 * 0.15 * 0.85).sqrt();
        let sd1 = (n as f64 * 0.5 * 0.5).sqrt();
        assert!((counts[0] as f64 - 15_000.0).abs() < 3.0 * sd0);
        assert!((counts[1] as f64 - 50_000.0).abs() < 3.0 * sd1);
        assert!(counts[0] + counts[1] <= n);
    }

    #[test]
    fn poisson_edge_and_moments() {
        let mut rng = RngHandle::new(4, 0);
        assert_eq!(sample_poisson(0.0, &mut rng).unwrap(), 0);
        assert!(sample_poisson(-1.0, &mut rng).is_err());

        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_poisson(50.0, &mut rng).unwrap() as f64)
            .collect();
        let (mean, _) = mean_and_var(&draws);
        let se = (50.0f64 / 100_000.0).sqrt();
        assert!((mean - 50.0).abs() < 3.0 * se, "mean = {mean}");

        let draws13: Vec<f64> = (0..100_000)
            .map(|_| sample_poisson(13.0, &mut rng).unwrap() as f64)
            .collect();
        let (_, var) = mean_and_var(&draws13);
        assert!((var - 13.0).abs() < 0.05 * 13.0, "var = {var}");
    }

    #[test]
    fn negative_binomial_moment_matching() {
        let spec = DistributionSpec::negative_binomial(13.0, 26.0).unwrap();
        assert!((spec.shape() - 13.0).abs() < 1e-12);
        assert!((spec.success_probability() - 0.5).abs() < 1e-12);

        // Boundary variance == mean is rejected; Poisson should be used instead.
        assert!(DistributionSpec::negative_binomial(13.0, 13.0).is_err());
        assert!(DistributionSpec::negative_binomial(0.0, 5.0).is_err());
    }

    #[test]
    fn negative_binomial_extreme_overdispersion_mean() {
        let spec = DistributionSpec::negative_binomial(80.0, 80.0 * 1000.0).unwrap();
        let mut rng = RngHandle::new(5, 0);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_negative_binomial(&spec, &mut rng).unwrap() as f64;
        }
        let mean = sum / n as f64;
        let se = (spec.variance() / n as f64).sqrt();
        assert!((mean - 80.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn offspring_total_edge_and_additivity() {
        let poisson = DistributionSpec::poisson(13.0).unwrap();
        let negbin = DistributionSpec::negative_binomial(13.0, 26.0).unwrap();
        let mut rng = RngHandle::new(6, 0);
        assert_eq!(sample_offspring_total(0, &poisson, &mut rng).unwrap(), 0);
        assert_eq!(sample_offspring_total(0, &negbin, &mut rng).unwrap(), 0);

        // f = 3 Poisson(13) parents: total is Poisson(39).
        let n = 100_000usize;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_offspring_total(3, &poisson, &mut rng).unwrap() as f64)
            .collect();
        let (mean, var) = mean_and_var(&draws);
        let se = (39.0f64 / n as f64).sqrt();
        assert!((mean - 39.0).abs() < 3.0 * se, "mean = {mean}");
        assert!((var - 39.0).abs() < 0.05 * 39.0, "var = {var}");

        // f = 2 NegBin(13, 26) parents: mean 26, variance 52.
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_offspring_total(2, &negbin, &mut rng).unwrap() as f64)
            .collect();
        let (mean, _) = mean_and_var(&draws);
        let se = (52.0f64 / n as f64).sqrt();
        assert!((mean - 26.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let seq = |seed, stream| {
            let mut rng = RngHandle::new(seed, stream);
            (0..64).map(|_| rng.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(seq(99, 0), seq(99, 0));
        assert_eq!(seq(99, 3), seq(99, 3));
        assert_ne!(seq(99, 0), seq(99, 1));
        assert_ne!(seq(98, 0), seq(99, 0));

        // Interleaving draws on another stream does not perturb a stream.
        let mut a = RngHandle::new(99, 0);
        let mut b = RngHandle::new(99, 1);
        let mut interleaved = Vec::new();
        for _ in 0..64 {
            b.next_u64();
            interleaved.push(a.next_u64());
            b.next_u64();
        }
        assert_eq!(interleaved, seq(99, 0));
    }

    #[test]
    fn spec_moments_match_empirically() {
        let specs = [
            DistributionSpec::poisson(13.0).unwrap(),
            DistributionSpec::poisson(80.0).unwrap(),
            DistributionSpec::negative_binomial(13.0, 26.0).unwrap(),
            DistributionSpec::negative_binomial(13.0, 65.0).unwrap(),
            DistributionSpec::negative_binomial(80.0, 800.0).unwrap(),
        ];
        let n = 200_000usize;
        for (idx, spec) in specs.iter().enumerate() {
            let mut rng = RngHandle::new(1000 + idx as u64, 0);
            let draws: Vec<f64> = (0..n)
                .map(|_| sample_count(spec, &mut rng).unwrap() as f64)
                .collect();
            let (mean, var) = mean_and_var(&draws);
            let se_mean = (spec.variance() / n as f64).sqrt();
            assert!(
                (mean - spec.mean()).abs() < 4.0 * se_mean,
                "spec {idx}: mean {mean} vs {}",
                spec.mean()
            );
            // SE of the sample variance via the fourth-moment normal-ish bound
            // 2 var^2 / n is too tight for heavy-tailed mixtures, so allow a
            // generous multiple plus a relative floor.
            let se_var = (2.0 * spec.variance() * spec.variance() / n as f64).sqrt();
            let tol = (4.0 * se_var).max(0.05 * spec.variance());
            assert!(
                (var - spec.variance()).abs() < tol,
                "spec {idx}: var {var} vs {}",
                spec.variance()
            );
        }
    }

    // Splitting a Poisson count multinomially yields independent Poisson cells.
    #[test]
    fn poisson_thinning_gof_and_independence() {
        let lambda = 20.0;
        let probs = [0.3, 0.5];
        let n = 100_000usize;
        let mut rng = RngHandle::new(20, 0);
        let mut cells = vec![[0u64; 3]; n];
        for cell in cells.iter_mut() {
            let total = sample_poisson(lambda, &mut rng).unwrap();
            let split = sample_multinomial(total, &probs, &mut rng).unwrap();
            *cell = [split[0], split[1], total - split[0] - split[1]];
        }

        let cell_lambdas = [
            probs[0] * lambda,
            probs[1] * lambda,
            (1.0 - probs[0] - probs[1]) * lambda,
        ];
        for (j, &cl) in cell_lambdas.iter().enumerate() {
            let observed: Vec<f64> = cells.iter().map(|c| c[j] as f64).collect();
            let stat = poisson_gof_statistic(&observed, cl);
            assert!(
                stat.statistic < stat.critical_1pct,
                "cell {j}: chi2 {} >= {}",
                stat.statistic,
                stat.critical_1pct
            );
        }

        // Pairwise correlations within 4 / sqrt(n) of zero.
        for (j, k) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let xs: Vec<f64> = cells.iter().map(|c| c[j] as f64).collect();
            let ys: Vec<f64> = cells.iter().map(|c| c[k] as f64).collect();
            let r = sample_correlation(&xs, &ys);
            assert!(r.abs() < 4.0 / (n as f64).sqrt(), "corr({j},{k}) = {r}");
        }
    }

    pub(crate) struct GofStatistic {
        pub statistic: f64,
        pub critical_1pct: f64,
    }

    /// Pearson chi-square of integer samples against Poisson(lambda), with
    /// tail bins merged so every expected count is at least 5.
    pub(crate) fn poisson_gof_statistic(samples: &[f64], lambda: f64) -> GofStatistic {
        use statrs::distribution::{ChiSquared, ContinuousCDF};

        let n = samples.len() as f64;
        let max = samples.iter().cloned().fold(0.0f64, f64::max) as usize;
        let mut observed = vec![0.0; max + 1];
        for &s in samples {
            observed[s as usize] += 1.0;
        }
        // Expected counts from the pmf, merging the right tail.
        let mut bins_obs = Vec::new();
        let mut bins_exp = Vec::new();
        let mut acc_obs = 0.0;
        let mut acc_exp = 0.0;
        let mut log_pmf = -lambda; // log pmf at 0
        let mut cdf = 0.0;
        for k in 0..=max {
            if k > 0 {
                log_pmf += lambda.ln() - (k as f64).ln();
            }
            let expected = n * log_pmf.exp();
            cdf += log_pmf.exp();
            acc_obs += observed[k];
            acc_exp += expected;
            if acc_exp >= 5.0 {
                bins_obs.push(acc_obs);
                bins_exp.push(acc_exp);
                acc_obs = 0.0;
                acc_exp = 0.0;
            }
        }
        // Remaining mass beyond max and any unfinished bin.
        acc_exp += n * (1.0 - cdf).max(0.0);
        if acc_exp > 0.0 {
            bins_obs.push(acc_obs);
            bins_exp.push(acc_exp);
        }
        let statistic: f64 = bins_obs
            .iter()
            .zip(&bins_exp)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let dof = (bins_obs.len() - 1).max(1) as f64;
        let critical_1pct = ChiSquared::new(dof).unwrap().inverse_cdf(0.99);
        GofStatistic {
            statistic,
            critical_1pct,
        }
    }

    pub(crate) fn sample_correlation(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
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

    mod properties {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            // The explicit cells never exceed the trial count and repeat
            // exactly under the same stream.
            #[test]
            fn multinomial_cells_bounded_and_reproducible(
                n in 0u64..5000,
                u1 in 0.0f64..1.0,
                u2 in 0.0f64..1.0,
                seed in any::<u64>(),
                stream in any::<u64>(),
            ) {
                let p1 = u1;
                let p2 = u2 * (1.0 - u1);
                let draw = || {
                    let mut rng = RngHandle::new(seed, stream);
                    sample_multinomial(n, &[p1, p2], &mut rng).unwrap()
                };
                let cells = draw();
                prop_assert_eq!(cells.len(), 2);
                prop_assert!(cells[0] + cells[1] <= n);
                prop_assert_eq!(draw(), cells);
            }

            #[test]
            fn binomial_within_trial_count(
                n in 0u64..100_000,
                p in 0.0f64..=1.0,
                seed in any::<u64>(),
            ) {
                let mut rng = RngHandle::new(seed, 0);
                let x = sample_binomial(n, p, &mut rng).unwrap();
                prop_assert!(x <= n);
            }
        }
    }
}
