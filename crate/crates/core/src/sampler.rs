//! Classical QUBO minimizers behind a common sampling interface.
//!
//! [`SimulatedAnnealer`] runs independent single-flip Metropolis reads over a
//! geometric inverse-temperature schedule. [`ExhaustiveSolver`] enumerates every
//! state and is the ground-truth oracle for small models.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qubo::QuboModel;
use crate::seeds::derive_seed;

/// Hard cap on the exhaustive oracle.
pub const EXHAUSTIVE_MAX_VARS: usize = 26;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("exhaustive search over {0} variables exceeds the cap of {EXHAUSTIVE_MAX_VARS}")]
    TooManyVariables(usize),
    #[error("invalid sampler configuration: {0}")]
    Config(String),
}

/// A QUBO minimizer. Implementations must be deterministic for a given model
/// and configuration.
pub trait Sampler: Sync {
    fn sample(&self, model: &QuboModel) -> Result<SampleSet, SamplerError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub bits: Vec<u8>,
    pub energy: f64,
    pub occurrences: usize,
}

/// Distinct samples ordered by ascending energy, ties by bit pattern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

impl SampleSet {
    /// Aggregates raw states, re-evaluating each energy on the model.
    pub fn from_states(model: &QuboModel, states: Vec<Vec<u8>>) -> Self {
        let mut counts: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for s in states {
            *counts.entry(s).or_insert(0) += 1;
        }
        let mut samples: Vec<Sample> = counts
            .into_iter()
            .map(|(bits, occurrences)| {
                let energy = model.energy(&bits).expect("sampler produced a state of the wrong length");
                Sample { bits, energy, occurrences }
            })
            .collect();
        samples.sort_by(|a, b| a.energy.total_cmp(&b.energy).then_with(|| a.bits.cmp(&b.bits)));
        Self { samples }
    }

    pub fn best(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_reads(&self) -> usize {
        self.samples.iter().map(|s| s.occurrences).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_reads: usize,
    pub sweeps_per_read: usize,
    /// `(beta_min, beta_max)`; derived from the model when absent.
    pub beta_range: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_reads: 200,
            sweeps_per_read: 2000,
            beta_range: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.num_reads == 0 || self.sweeps_per_read == 0 {
            return Err(SamplerError::Config("reads and sweeps must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.beta_range {
            if !(lo > 0.0 && lo < hi) {
                return Err(SamplerError::Config(format!(
                    "beta range must satisfy 0 < beta_min < beta_max, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse symmetric view of a model for incremental flip evaluation.
struct Adjacency {
    linear: Vec<f64>,
    start: Vec<usize>,
    neighbor: Vec<usize>,
    weight: Vec<f64>,
}

impl Adjacency {
    fn new(model: &QuboModel) -> Self {
        let n = model.num_vars();
        let mut degree = vec![0usize; n];
        for &(i, j) in model.quadratic().keys() {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + degree[i];
        }
        let mut fill = start.clone();
        let mut neighbor = vec![0usize; start[n]];
        let mut weight = vec![0.0; start[n]];
        for (&(i, j), &q) in model.quadratic() {
            neighbor[fill[i]] = j;
            weight[fill[i]] = q;
            fill[i] += 1;
            neighbor[fill[j]] = i;
            weight[fill[j]] = q;
            fill[j] += 1;
        }
        Self {
            linear: model.linear().to_vec(),
            start,
            neighbor,
            weight,
        }
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.start[i]..self.start[i + 1];
        self.neighbor[range.clone()]
            .iter()
            .copied()
            .zip(self.weight[range].iter().copied())
    }
}

/// Default inverse temperatures: `1/ΔE_max` and `1/ΔE_min`, where `ΔE_max`
/// bounds the largest single-flip energy change and `ΔE_min` is the smallest
/// non-zero coefficient magnitude.
pub fn default_beta_range(model: &QuboModel) -> (f64, f64) {
    let adj = Adjacency::new(model);
    let mut max_delta: f64 = 0.0;
    let mut min_delta = f64::INFINITY;
    for i in 0..model.num_vars() {
        let h = adj.linear[i];
        let mut pos = h.max(0.0);
        let mut neg = h.min(0.0);
        if h != 0.0 {
            min_delta = min_delta.min(h.abs());
        }
        for (_, q) in adj.neighbors(i) {
            if q > 0.0 {
                pos += q;
            } else {
                neg += q;
            }
            min_delta = min_delta.min(q.abs());
        }
        max_delta = max_delta.max(pos.max(-neg));
    }
    if max_delta == 0.0 || !min_delta.is_finite() {
        return (0.1, 1.0);
    }
    let beta_min = 1.0 / max_delta;
    let mut beta_max = 1.0 / min_delta;
    if beta_max <= beta_min {
        beta_max = beta_min * 10.0;
    }
    (beta_min, beta_max)
}

#[derive(Debug, Clone, Default)]
pub struct SimulatedAnnealer {
    pub config: SamplerConfig,
}

impl SimulatedAnnealer {
    pub fn new(config: SamplerConfig) -> Self {
        Self { config }
    }

    fn schedule(&self, model: &QuboModel) -> Vec<f64> {
        let (lo, hi) = self.config.beta_range.unwrap_or_else(|| default_beta_range(model));
        let sweeps = self.config.sweeps_per_read;
        if sweeps == 1 {
            return vec![hi];
        }
        let ratio = (hi / lo).ln() / (sweeps - 1) as f64;
        (0..sweeps).map(|s| lo * (ratio * s as f64).exp()).collect()
    }
}

fn anneal_read(adj: &Adjacency, schedule: &[f64], seed: u64) -> Vec<u8> {
    let n = adj.linear.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2u8)).collect();
    // field[i] = h_i + Σ_j J_ij x_j; flipping i changes the energy by (1 - 2x_i)·field[i].
    let mut field = adj.linear.clone();
    for i in 0..n {
        if bits[i] == 1 {
            for (j, q) in adj.neighbors(i) {
                field[j] += q;
            }
        }
    }
    for &beta in schedule {
        for i in 0..n {
            let delta = if bits[i] == 0 { field[i] } else { -field[i] };
            // Moves less likely than e^-36 are rejected without a draw.
            let barrier = beta * delta;
            let accept = barrier <= 0.0 || (barrier < 36.0 && rng.gen::<f64>() < (-barrier).exp());
            if accept {
                let sign = if bits[i] == 0 { 1.0 } else { -1.0 };
                bits[i] ^= 1;
                for (j, q) in adj.neighbors(i) {
                    field[j] += sign * q;
                }
            }
        }
    }
    bits
}

impl Sampler for SimulatedAnnealer {
    fn sample(&self, model: &QuboModel) -> Result<SampleSet, SamplerError> {
        self.config.validate()?;
        let adj = Adjacency::new(model);
        let schedule = self.schedule(model);
        let states: Vec<Vec<u8>> = (0..self.config.num_reads)
            .into_par_iter()
            .map(|read| anneal_read(&adj, &schedule, derive_seed(self.config.seed, read as u64)))
            .collect();
        Ok(SampleSet::from_states(model, states))
    }
}

/// Enumerates all `2^n` states in Gray-code order and keeps the `keep`
/// lowest-energy ones.
#[derive(Debug, Clone)]
pub struct ExhaustiveSolver {
    pub keep: usize,
}

impl Default for ExhaustiveSolver {
    fn default() -> Self {
        Self { keep: 1024 }
    }
}

#[derive(PartialEq)]
struct Ranked(f64, u32);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl Sampler for ExhaustiveSolver {
    fn sample(&self, model: &QuboModel) -> Result<SampleSet, SamplerError> {
        let n = model.num_vars();
        if n > EXHAUSTIVE_MAX_VARS {
            return Err(SamplerError::TooManyVariables(n));
        }
        let keep = self.keep.max(1);
        let adj = Adjacency::new(model);
        let mut state: u32 = 0;
        let mut field = adj.linear.clone();
        let mut energy = model.offset();
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::new();
        heap.push(Ranked(energy, 0));
        for step in 1u64..(1u64 << n) {
            let i = step.trailing_zeros() as usize;
            let was_set = state >> i & 1 == 1;
            energy += if was_set { -field[i] } else { field[i] };
            let sign = if was_set { -1.0 } else { 1.0 };
            for (j, q) in adj.neighbors(i) {
                field[j] += sign * q;
            }
            state ^= 1 << i;
            let candidate = Ranked(energy, state);
            if heap.len() < keep {
                heap.push(candidate);
            } else if heap.peek().is_some_and(|worst| candidate < *worst) {
                heap.pop();
                heap.push(candidate);
            }
        }
        let states = heap
            .into_iter()
            .map(|Ranked(_, s)| (0..n).map(|k| (s >> k & 1) as u8).collect())
            .collect();
        Ok(SampleSet::from_states(model, states))
    }
}
