//! Exact simulation of the five-stage annual-plant life cycle.
//!
//! A population is tracked through five integer stages per cycle: old seeds
//! in the soil bank (S), new seeds on the surface (T), rosettes before
//! winter (R), vernalized rosettes (V) and mature plants (F). Within cycle
//! `i`, each old seed independently survives into the next bank with
//! probability `a` or germinates into a rosette with probability `b` (else
//! dies); new seeds do the same with probabilities `a'` and `b'`. Rosettes
//! vernalize with probability `c`, vernalized rosettes mature with
//! probability `d`, and each mature plant sheds a random number of new seeds
//! which, together with an immigration draw, form the next cycle's surface
//! seeds.
//!
//! The one crucial simulation detail is that the rosette count `R_i` and the
//! surviving bank `S_{i+1}` must come from the *same* multinomial draw over
//! the fate of each seed; drawing them independently would break their joint
//! law (seeds compete: one seed cannot both survive and germinate). The
//! trajectory engine draws one multinomial per seed pool per cycle and feeds
//! both outputs into the path.

use rayon::prelude::*;
use thiserror::Error;

use crate::stochastic::{
    sample_binomial, sample_count, sample_multinomial, sample_offspring_total, sample_poisson,
    DistributionSpec, RngHandle, SampleError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("probability {name} = {value} must lie in (0, 1)")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("sum {name} = {value} must lie in (0, 1]")]
    FateMassOutOfRange { name: &'static str, value: f64 },
    #[error("initial seed mean {name} = {value} must be nonnegative and finite")]
    InvalidInitialMean { name: &'static str, value: f64 },
    #[error("at least one population is required")]
    NoPopulations,
    #[error("population {population} has ragged stage columns")]
    RaggedTrajectory { population: usize },
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Full parameter vector for one life cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemographicParams {
    /// Old-seed survival in the bank, P(S -> S').
    pub a: f64,
    /// Old-seed germination, P(S -> R).
    pub b: f64,
    /// New-seed entry into the bank, P(T -> S').
    pub a_prime: f64,
    /// New-seed germination, P(T -> R).
    pub b_prime: f64,
    /// Vernalization, P(R -> V).
    pub c: f64,
    /// Maturation, P(V -> F).
    pub d: f64,
    /// Seeds shed per mature plant.
    pub offspring: DistributionSpec,
    /// Seeds immigrating each cycle.
    pub immigration: DistributionSpec,
    /// Poisson mean of the initial seed bank S_0.
    pub sigma: f64,
    /// Poisson mean of the initial surface seeds T_0.
    pub tau: f64,
}

impl DemographicParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let probs = [
            ("a", self.a),
            ("b", self.b),
            ("a'", self.a_prime),
            ("b'", self.b_prime),
            ("c", self.c),
            ("d", self.d),
        ];
        for (name, value) in probs {
            if !(value > 0.0 && value < 1.0) {
                return Err(DynamicsError::ProbabilityOutOfRange { name, value });
            }
        }
        if !(self.a + self.b > 0.0 && self.a + self.b <= 1.0) {
            return Err(DynamicsError::FateMassOutOfRange {
                name: "a + b",
                value: self.a + self.b,
            });
        }
        if !(self.a_prime + self.b_prime > 0.0 && self.a_prime + self.b_prime <= 1.0) {
            return Err(DynamicsError::FateMassOutOfRange {
                name: "a' + b'",
                value: self.a_prime + self.b_prime,
            });
        }
        for (name, value) in [("sigma", self.sigma), ("tau", self.tau)] {
            if !value.is_finite() || value < 0.0 {
                return Err(DynamicsError::InvalidInitialMean { name, value });
            }
        }
        Ok(())
    }
}

/// Stage counts of one population at one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PopulationState {
    /// S: seeds in the soil bank.
    pub old_seeds: u64,
    /// T: seeds on the surface.
    pub new_seeds: u64,
    /// R: rosettes before winter.
    pub rosettes: u64,
    /// V: vernalized rosettes.
    pub vernalized: u64,
    /// F: mature plants.
    pub mature: u64,
}

/// One population's trajectory, stored column-per-stage, cycles 0..=n,
/// plus the terminal seed pair (S_{n+1}, T_{n+1}).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationPath {
    pub old_seeds: Vec<u64>,
    pub new_seeds: Vec<u64>,
    pub rosettes: Vec<u64>,
    pub vernalized: Vec<u64>,
    pub mature: Vec<u64>,
    pub terminal_old_seeds: u64,
    pub terminal_new_seeds: u64,
}

impl PopulationPath {
    /// Number of stored cycles, n + 1.
    pub fn cycles(&self) -> usize {
        self.old_seeds.len()
    }

    pub fn state(&self, i: usize) -> PopulationState {
        PopulationState {
            old_seeds: self.old_seeds[i],
            new_seeds: self.new_seeds[i],
            rosettes: self.rosettes[i],
            vernalized: self.vernalized[i],
            mature: self.mature[i],
        }
    }

    /// S_{i+1}: the bank count following cycle i (terminal pair at i = n).
    pub fn next_old_seeds(&self, i: usize) -> u64 {
        if i + 1 < self.cycles() {
            self.old_seeds[i + 1]
        } else {
            self.terminal_old_seeds
        }
    }

    /// T_{i+1}: the surface count following cycle i (terminal pair at i = n).
    pub fn next_new_seeds(&self, i: usize) -> u64 {
        if i + 1 < self.cycles() {
            self.new_seeds[i + 1]
        } else {
            self.terminal_new_seeds
        }
    }
}

/// K independent trajectories observed on all five stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteDataset {
    pub populations: Vec<PopulationPath>,
}

impl CompleteDataset {
    /// K, the number of populations.
    pub fn population_count(&self) -> usize {
        self.populations.len()
    }

    /// n, the index of the last stored cycle.
    pub fn last_cycle(&self) -> usize {
        self.populations[0].cycles() - 1
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.populations.is_empty() {
            return Err(DynamicsError::NoPopulations);
        }
        let cycles = self.populations[0].cycles();
        for (population, path) in self.populations.iter().enumerate() {
            let rectangular = path.cycles() == cycles
                && path.new_seeds.len() == cycles
                && path.rosettes.len() == cycles
                && path.vernalized.len() == cycles
                && path.mature.len() == cycles;
            if !rectangular {
                return Err(DynamicsError::RaggedTrajectory { population });
            }
        }
        Ok(())
    }
}

/// One population's trajectory restricted to the observable stages (R, V, F).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedPath {
    pub rosettes: Vec<u64>,
    pub vernalized: Vec<u64>,
    pub mature: Vec<u64>,
}

impl ObservedPath {
    pub fn cycles(&self) -> usize {
        self.rosettes.len()
    }
}

/// K independent trajectories with the seed stages hidden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedDataset {
    pub populations: Vec<ObservedPath>,
}

impl ObservedDataset {
    pub fn population_count(&self) -> usize {
        self.populations.len()
    }

    pub fn last_cycle(&self) -> usize {
        self.populations[0].cycles() - 1
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.populations.is_empty() || self.populations[0].cycles() == 0 {
            return Err(DynamicsError::NoPopulations);
        }
        let cycles = self.populations[0].cycles();
        for (population, path) in self.populations.iter().enumerate() {
            let rectangular = path.cycles() == cycles
                && path.vernalized.len() == cycles
                && path.mature.len() == cycles;
            if !rectangular {
                return Err(DynamicsError::RaggedTrajectory { population });
            }
        }
        Ok(())
    }
}

/// Everything one cycle produces from the seed pair (S_i, T_i).
struct CycleOutcome {
    rosettes: u64,
    vernalized: u64,
    mature: u64,
    next_old_seeds: u64,
    next_new_seeds: u64,
}

/// Run one full cycle from the seed pair. The two multinomials are drawn
/// exactly once, so R_i and S_{i+1} share the underlying seed fates.
fn run_cycle(
    params: &DemographicParams,
    old_seeds: u64,
    new_seeds: u64,
    rng: &mut RngHandle,
) -> Result<CycleOutcome, DynamicsError> {
    let bank_fates = sample_multinomial(old_seeds, &[params.a, params.b], rng)?;
    let surface_fates = sample_multinomial(new_seeds, &[params.a_prime, params.b_prime], rng)?;
    let rosettes = bank_fates[1] + surface_fates[1];
    let vernalized = sample_binomial(rosettes, params.c, rng)?;
    let mature = sample_binomial(vernalized, params.d, rng)?;
    let next_old_seeds = bank_fates[0] + surface_fates[0];
    let next_new_seeds =
        sample_offspring_total(mature, &params.offspring, rng)? + sample_count(&params.immigration, rng)?;
    Ok(CycleOutcome {
        rosettes,
        vernalized,
        mature,
        next_old_seeds,
        next_new_seeds,
    })
}

/// Draw an initial state X_0: independent Poisson seed pools, then the
/// germination and thinning stages.
pub fn init_population(
    params: &DemographicParams,
    rng: &mut RngHandle,
) -> Result<PopulationState, DynamicsError> {
    params.validate()?;
    let old_seeds = sample_poisson(params.sigma, rng)?;
    let new_seeds = sample_poisson(params.tau, rng)?;
    let rosettes =
        sample_binomial(old_seeds, params.b, rng)? + sample_binomial(new_seeds, params.b_prime, rng)?;
    let vernalized = sample_binomial(rosettes, params.c, rng)?;
    let mature = sample_binomial(vernalized, params.d, rng)?;
    Ok(PopulationState {
        old_seeds,
        new_seeds,
        rosettes,
        vernalized,
        mature,
    })
}

/// Advance a state by one full cycle.
///
/// The seed-fate multinomials are drawn once from (S_i, T_i); their bank
/// shares form S_{i+1} while their rosette shares are the ones already
/// realized in `state.rosettes`, so they are discarded here. The new cycle's
/// R, V, F are then drawn by the three thinnings from the fresh seed pair.
pub fn step(
    params: &DemographicParams,
    state: &PopulationState,
    rng: &mut RngHandle,
) -> Result<PopulationState, DynamicsError> {
    params.validate()?;
    let bank_fates = sample_multinomial(state.old_seeds, &[params.a, params.b], rng)?;
    let surface_fates =
        sample_multinomial(state.new_seeds, &[params.a_prime, params.b_prime], rng)?;
    let old_seeds = bank_fates[0] + surface_fates[0];
    let new_seeds = sample_offspring_total(state.mature, &params.offspring, rng)?
        + sample_count(&params.immigration, rng)?;
    let rosettes =
        sample_binomial(old_seeds, params.b, rng)? + sample_binomial(new_seeds, params.b_prime, rng)?;
    let vernalized = sample_binomial(rosettes, params.c, rng)?;
    let mature = sample_binomial(vernalized, params.d, rng)?;
    Ok(PopulationState {
        old_seeds,
        new_seeds,
        rosettes,
        vernalized,
        mature,
    })
}

fn simulate_path(
    params: &DemographicParams,
    cycles: usize,
    rng: &mut RngHandle,
) -> Result<PopulationPath, DynamicsError> {
    let len = cycles + 1;
    let mut path = PopulationPath {
        old_seeds: Vec::with_capacity(len),
        new_seeds: Vec::with_capacity(len),
        rosettes: Vec::with_capacity(len),
        vernalized: Vec::with_capacity(len),
        mature: Vec::with_capacity(len),
        terminal_old_seeds: 0,
        terminal_new_seeds: 0,
    };
    let mut old_seeds = sample_poisson(params.sigma, rng)?;
    let mut new_seeds = sample_poisson(params.tau, rng)?;
    for _ in 0..=cycles {
        let outcome = run_cycle(params, old_seeds, new_seeds, rng)?;
        path.old_seeds.push(old_seeds);
        path.new_seeds.push(new_seeds);
        path.rosettes.push(outcome.rosettes);
        path.vernalized.push(outcome.vernalized);
        path.mature.push(outcome.mature);
        old_seeds = outcome.next_old_seeds;
        new_seeds = outcome.next_new_seeds;
    }
    path.terminal_old_seeds = old_seeds;
    path.terminal_new_seeds = new_seeds;
    Ok(path)
}

/// Simulate K independent populations over cycles 0..=n plus the terminal
/// seed pair. Population k consumes stream k of the master seed, so results
/// are bit-identical whatever the thread count. Extinct populations are
/// carried to the end; every trajectory has the same length.
pub fn simulate(
    params: &DemographicParams,
    cycles: usize,
    population_count: usize,
    master_seed: u64,
) -> Result<CompleteDataset, DynamicsError> {
    params.validate()?;
    if population_count == 0 {
        return Err(DynamicsError::NoPopulations);
    }
    let populations = (0..population_count)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngHandle::new(master_seed, k as u64);
            simulate_path(params, cycles, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompleteDataset { populations })
}

/// Project a complete dataset onto the observable stages, dropping the seed
/// columns and the terminal seed pair.
pub fn observe(data: &CompleteDataset) -> ObservedDataset {
    ObservedDataset {
        populations: data
            .populations
            .iter()
            .map(|path| ObservedPath {
                rosettes: path.rosettes.clone(),
                vernalized: path.vernalized.clone(),
                mature: path.mature.clone(),
            })
            .collect(),
    }
}
