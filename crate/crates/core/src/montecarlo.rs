//! Monte Carlo oracle.
//!
//! Samples the structural equations draw by draw, independently of the
//! affine algebra in `scm`, and accumulates one-pass moments. Draw `i` uses
//! two Philox4x32-10 blocks keyed by the seed with counter `(i, block)`, so
//! every draw is addressable and results do not depend on thread count.
//! Draws are split into [`JACKKNIFE_GROUPS`] contiguous groups; groups run in
//! parallel and are merged in index order.

use nalgebra::{DMatrix, DVector};
use rand_philox::{philox4x32_10, splitmix64};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::belief::{fit, FittedModel};
use crate::dag::{Dag, CANONICAL_ORDER};
use crate::error::{Error, Result};
use crate::gaussian::GaussianJoint;
use crate::scm::{LinearStrategy, Scenario, Structure};

/// Number of contiguous draw groups used for jackknife standard errors.
pub const JACKKNIFE_GROUPS: usize = 32;

/// Below this many draws the 5-SE sampling bands are not trustworthy.
pub const MIN_RELIABLE_DRAWS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimConfig {
    pub draws: u64,
    pub seed: u64,
    /// Draws accumulated per fresh accumulator before merging into the group.
    pub chunk_size: u64,
}

impl SimConfig {
    pub fn new(draws: u64, seed: u64) -> Self {
        SimConfig {
            draws,
            seed,
            chunk_size: 1 << 16,
        }
    }

    pub fn with_chunk_size(self, chunk_size: u64) -> Self {
        SimConfig { chunk_size, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::invalid("draws", "must be at least 1"));
        }
        if self.chunk_size == 0 {
            return Err(Error::invalid("chunk_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Four independent uniforms on `(0, 1)` for draw `index`: 53-bit
/// midpoints built from two Philox4x32-10 blocks.
pub fn uniforms(seed: u64, index: u64) -> [f64; 4] {
    let k = splitmix64(seed);
    let key = [k as u32, (k >> 32) as u32];
    let (lo, hi) = (index as u32, (index >> 32) as u32);
    let b0 = philox4x32_10([lo, hi, 0, 0], key);
    let b1 = philox4x32_10([lo, hi, 1, 0], key);
    let words = [b0[0], b0[1], b0[2], b0[3], b1[0], b1[1], b1[2], b1[3]];
    std::array::from_fn(|j| {
        let bits = (u64::from(words[2 * j]) | (u64::from(words[2 * j + 1]) << 32)) >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    })
}

/// Four independent standard normals for draw `index`, by inverse CDF.
pub fn standard_normals(seed: u64, index: u64) -> [f64; 4] {
    let standard = Normal::standard();
    uniforms(seed, index).map(|u| standard.inverse_cdf(u))
}

/// `(theta, a, x, y)` for one draw of the shocks `(theta, nu, eps, eta)`
/// in standard units.
pub fn structural_draw(scenario: &Scenario, strategy: &LinearStrategy, z: [f64; 4]) -> [f64; 4] {
    let theta = scenario.var_theta().sqrt() * z[0];
    let nu = strategy.tremble_variance.sqrt() * z[1];
    let eps = scenario.var_eps().sqrt() * z[2];
    let eta = scenario.var_eta().sqrt() * z[3];
    let a = strategy.intercept + strategy.slope * theta + nu;
    let (x, y) = match scenario.structure() {
        Structure::Main { gamma, lambda } | Structure::ReverseOnly { gamma, lambda } => {
            let x = theta - gamma * a + eps;
            (x, x - lambda * a + eta)
        }
        Structure::ExogeneityOnly {
            kappa,
            alpha,
            delta,
        } => {
            let y = delta * a + eta;
            (theta - kappa * a + alpha * y + eps, y)
        }
    };
    [theta, a, x, y]
}

/// Streaming mean and co-moment (Welford; Chan et al. for merges).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<const D: usize> {
    count: u64,
    mean: [f64; D],
    comoment: [[f64; D]; D],
}

impl<const D: usize> Default for Moments<D> {
    fn default() -> Self {
        Moments {
            count: 0,
            mean: [0.0; D],
            comoment: [[0.0; D]; D],
        }
    }
}

impl<const D: usize> Moments<D> {
    pub fn push(&mut self, v: [f64; D]) {
        self.count += 1;
        let n = self.count as f64;
        let delta: [f64; D] = std::array::from_fn(|i| v[i] - self.mean[i]);
        for i in 0..D {
            self.mean[i] += delta[i] / n;
        }
        for i in 0..D {
            let after = v[i] - self.mean[i];
            for j in 0..D {
                self.comoment[j][i] += delta[j] * after;
            }
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let delta: [f64; D] = std::array::from_fn(|i| other.mean[i] - self.mean[i]);
        Moments {
            count,
            mean: std::array::from_fn(|i| self.mean[i] + delta[i] * nb / n),
            comoment: std::array::from_fn(|i| {
                std::array::from_fn(|j| {
                    self.comoment[i][j] + other.comoment[i][j] + delta[i] * delta[j] * na * nb / n
                })
            }),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> [f64; D] {
        self.mean
    }

    /// Sample covariance with divisor `n - 1`; zero for fewer than two draws.
    pub fn covariance(&self) -> [[f64; D]; D] {
        if self.count < 2 {
            return [[0.0; D]; D];
        }
        let d = (self.count - 1) as f64;
        std::array::from_fn(|i| {
            std::array::from_fn(|j| 0.5 * (self.comoment[i][j] + self.comoment[j][i]) / d)
        })
    }
}

/// Accumulates `f(draw index)` over all draws: the total, and the
/// contiguous jackknife groups (fewer than [`JACKKNIFE_GROUPS`] only when
/// there are fewer draws).
fn accumulate<const D: usize, F>(config: &SimConfig, f: F) -> (Moments<D>, Vec<Moments<D>>)
where
    F: Fn(u64) -> [f64; D] + Sync,
{
    let n = config.draws;
    let groups = (JACKKNIFE_GROUPS as u64).min(n);
    let bound = |g: u64| g * n / groups;
    let per_group: Vec<Moments<D>> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let (start, end) = (bound(g), bound(g + 1));
            let mut acc = Moments::default();
            let mut lo = start;
            while lo < end {
                let hi = (lo + config.chunk_size).min(end);
                let mut chunk = Moments::default();
                for i in lo..hi {
                    chunk.push(f(i));
                }
                acc = acc.merge(&chunk);
                lo = hi;
            }
            acc
        })
        .collect();
    let total = per_group
        .iter()
        .fold(Moments::default(), |acc, m| acc.merge(m));
    (total, per_group)
}

/// Leave-one-group-out accumulators, built from prefix and suffix merges
/// in fixed order.
fn leave_one_out<const D: usize>(groups: &[Moments<D>]) -> Vec<Moments<D>> {
    let g = groups.len();
    let mut prefix = vec![Moments::default(); g + 1];
    let mut suffix = vec![Moments::default(); g + 1];
    for i in 0..g {
        prefix[i + 1] = prefix[i].merge(&groups[i]);
        suffix[g - 1 - i] = groups[g - 1 - i].merge(&suffix[g - i]);
    }
    (0..g).map(|i| prefix[i].merge(&suffix[i + 1])).collect()
}

/// Jackknife standard error from leave-one-group-out estimates.
fn jackknife_se(values: &[f64]) -> f64 {
    let g = values.len();
    if g < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / g as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    ((g as f64 - 1.0) / g as f64 * ss).sqrt()
}

/// Sample moments of `(theta, a, x, y)` with jackknife standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalJoint {
    pub variables: Vec<String>,
    pub sample_mean: DVector<f64>,
    pub sample_covariance: DMatrix<f64>,
    pub draws: u64,
    pub mean_se: DVector<f64>,
    pub covariance_se: DMatrix<f64>,
}

impl EmpiricalJoint {
    /// The Gaussian with the sample mean and covariance.
    pub fn to_gaussian(&self) -> Result<GaussianJoint> {
        GaussianJoint::new(
            self.variables.clone(),
            self.sample_mean.clone(),
            self.sample_covariance.clone(),
        )
    }
}

/// Simulates `config.draws` i.i.d. draws of the scenario under `strategy`.
pub fn simulate(
    scenario: &Scenario,
    strategy: &LinearStrategy,
    config: &SimConfig,
) -> Result<EmpiricalJoint> {
    config.validate()?;
    let (total, groups) = accumulate::<4, _>(config, |i| {
        structural_draw(scenario, strategy, standard_normals(config.seed, i))
    });
    let loo = leave_one_out(&groups);
    let mean = total.mean();
    let cov = total.covariance();
    let loo_mean: Vec<[f64; 4]> = loo.iter().map(Moments::mean).collect();
    let loo_cov: Vec<[[f64; 4]; 4]> = loo.iter().map(Moments::covariance).collect();
    Ok(EmpiricalJoint {
        variables: CANONICAL_ORDER.iter().map(|s| s.to_string()).collect(),
        sample_mean: DVector::from_fn(4, |i, _| mean[i]),
        sample_covariance: DMatrix::from_fn(4, 4, |i, j| cov[i][j]),
        draws: total.count(),
        mean_se: DVector::from_fn(4, |i, _| {
            jackknife_se(&loo_mean.iter().map(|m| m[i]).collect::<Vec<_>>())
        }),
        covariance_se: DMatrix::from_fn(4, 4, |i, j| {
            jackknife_se(&loo_cov.iter().map(|c| c[i][j]).collect::<Vec<_>>())
        }),
    })
}

/// Finite-sample OLS of `dag`'s recursive system on simulated data.
pub fn empirical_fit(empirical: &EmpiricalJoint, dag: &Dag) -> Result<FittedModel> {
    fit(&empirical.to_gaussian()?, dag)
}

/// A sample mean with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
    pub draws: u64,
}

/// Sample mean of `-(x - a)^2`.
pub fn empirical_welfare(
    scenario: &Scenario,
    strategy: &LinearStrategy,
    config: &SimConfig,
) -> Result<Estimate> {
    config.validate()?;
    let (total, groups) = accumulate::<1, _>(config, |i| {
        let [_, a, x, _] = structural_draw(scenario, strategy, standard_normals(config.seed, i));
        [-(x - a).powi(2)]
    });
    let loo: Vec<f64> = leave_one_out(&groups).iter().map(|m| m.mean()[0]).collect();
    Ok(Estimate {
        mean: total.mean()[0],
        standard_error: jackknife_se(&loo),
        draws: total.count(),
    })
}
