//! Personal equilibrium over linear strategies.
//!
//! The decision maker best-replies to the belief `E_G(x | theta, a)` that the
//! strategy itself induces. With `c = (c0, c1, c2)` the intercept and the
//! `theta`, `a` coefficients of that conditional, the first-order condition
//! `a = E_G(x | theta, a)` pins down `b = c0 / (1 - c2)` and
//! `k = c1 / (1 - c2)`. The solver works on the equivalent residual
//! `R(b, k) = (c0 - (1 - c2) b, c1 - (1 - c2) k)`, which has no pole where
//! `c2` crosses 1.

use serde::Serialize;

use crate::belief::subjective_conditional;
use crate::dag::{ACTION, X};
use crate::error::{Error, Result};
use crate::scm::{LinearStrategy, Scenario, Structure, DEFAULT_TREMBLE};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Smallest accepted `|1 - c2|`.
pub const DEGENERATE_FOC_MARGIN: f64 = 1e-9;

/// Trembles, relative to `var_theta`, at which equilibria are solved before
/// extrapolating to zero.
pub const EXTRAPOLATION_TREMBLES: [f64; 3] = [1e-4, 1e-6, 1e-8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterationMethod {
    /// Newton steps on the first-order-condition residual with a
    /// non-monotone backtracking line search. When the belief does not depend on the
    /// strategy this step coincides with a best reply.
    #[default]
    Newton,
    /// Plain best-reply iteration, damped by 0.5 once it oscillates.
    /// Diverges when the best-reply map has slope below -3 at the fixed
    /// point (reverse-only with `tau > 3`).
    BestReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub method: IterationMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            method: IterationMethod::Newton,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

/// One solve at a fixed tremble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrembleSolve {
    pub tremble_variance: f64,
    pub intercept: f64,
    pub slope: f64,
    pub iterations: usize,
    pub residual: f64,
    pub c2_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub strategy: LinearStrategy,
    /// Largest iteration count over the tremble solves.
    pub iterations: usize,
    /// Largest final `|dk| + |db|` over the tremble solves.
    pub residual: f64,
    /// Smallest `|1 - c2|` over the tremble solves.
    pub c2_margin: f64,
    pub welfare: f64,
    pub benchmark_strategy: LinearStrategy,
    pub welfare_benchmark: f64,
    /// The individual solves; one entry for a single-tremble solve.
    pub trembles: Vec<TrembleSolve>,
}

impl EquilibriumReport {
    pub fn welfare_gap(&self) -> f64 {
        self.welfare_benchmark - self.welfare
    }
}

/// Optimal strategy when the decision maker's DAG is the true one.
pub fn benchmark_strategy(scenario: &Scenario) -> LinearStrategy {
    let slope = match scenario.structure() {
        Structure::Main { gamma, .. } | Structure::ReverseOnly { gamma, .. } => 1.0 / (1.0 + gamma),
        Structure::ExogeneityOnly {
            kappa,
            alpha,
            delta,
        } => 1.0 / (1.0 + kappa - alpha * delta),
    };
    LinearStrategy::pure(0.0, slope)
}

/// Equilibrium strategy in closed form for the family's default subjective
/// DAG (overrides are ignored).
///
/// The main family uses `(1 - beta) / ((1 - beta)(1 + gamma) + beta (1 - lambda))`,
/// which equals `1 / (1 + gamma + tau (1 - lambda))` and stays finite at
/// `var_eta = 0`.
pub fn closed_form_strategy(scenario: &Scenario) -> Result<LinearStrategy> {
    let slope = match scenario.structure() {
        Structure::Main { gamma, lambda } => {
            let beta = if scenario.var_eps() == 0.0 {
                0.0
            } else {
                scenario.beta()?
            };
            let margin = (1.0 - beta) * (1.0 + gamma) + beta * (1.0 - lambda);
            if margin < DEGENERATE_FOC_MARGIN {
                return Err(Error::DegenerateFoc { margin });
            }
            (1.0 - beta) / margin
        }
        Structure::ExogeneityOnly { kappa, .. } => 1.0 / (1.0 + kappa),
        Structure::ReverseOnly { gamma, .. } => 1.0 / (1.0 + gamma),
    };
    Ok(LinearStrategy::pure(0.0, slope))
}

/// Coefficients of `E_G(x | theta, a)` under the joint induced by `strategy`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Foc {
    c0: f64,
    c1: f64,
    c2: f64,
}

impl Foc {
    fn residual(&self, intercept: f64, slope: f64) -> [f64; 2] {
        let m = 1.0 - self.c2;
        [self.c0 - m * intercept, self.c1 - m * slope]
    }
}

fn effective_tremble(scenario: &Scenario, strategy: &LinearStrategy) -> f64 {
    if strategy.tremble_variance > 0.0 {
        strategy.tremble_variance
    } else {
        DEFAULT_TREMBLE * scenario.var_theta()
    }
}

fn foc_at(scenario: &Scenario, intercept: f64, slope: f64, tremble: f64) -> Result<Foc> {
    let strategy = LinearStrategy::new(intercept, slope, tremble)?;
    let belief = subjective_conditional(scenario, &scenario.objective_joint(&strategy))?;
    Ok(Foc {
        c0: belief.intercept(),
        c1: belief.theta_coefficient(),
        c2: belief.action_coefficient(),
    })
}

/// The strategy solving `a = E_G(x | theta, a)` against the belief induced by
/// `current`. A pure `current` is evaluated at the default tremble; the
/// returned strategy keeps `current`'s tremble.
pub fn best_reply(scenario: &Scenario, current: &LinearStrategy) -> Result<LinearStrategy> {
    let foc = foc_at(
        scenario,
        current.intercept,
        current.slope,
        effective_tremble(scenario, current),
    )?;
    reply_from(foc, current.tremble_variance)
}

fn reply_from(foc: Foc, tremble: f64) -> Result<LinearStrategy> {
    let margin = (1.0 - foc.c2).abs();
    if !(margin >= DEGENERATE_FOC_MARGIN) {
        return Err(Error::DegenerateFoc { margin });
    }
    let m = 1.0 - foc.c2;
    Ok(LinearStrategy {
        intercept: foc.c0 / m,
        slope: foc.c1 / m,
        tremble_variance: tremble,
    })
}

/// Solves for the personal equilibrium at `init`'s tremble (the default
/// tremble if `init` is pure), starting from `init`.
pub fn solve_personal_equilibrium(
    scenario: &Scenario,
    init: &LinearStrategy,
    config: &SolverConfig,
) -> Result<EquilibriumReport> {
    config.validate()?;
    let tremble = effective_tremble(scenario, init);
    let solve = solve_at_tremble(scenario, init, tremble, config)?;
    let strategy = LinearStrategy {
        intercept: solve.intercept,
        slope: solve.slope,
        tremble_variance: init.tremble_variance,
    };
    Ok(report(scenario, strategy, vec![solve]))
}

/// Solves at each of [`EXTRAPOLATION_TREMBLES`] (scaled by `var_theta`), each
/// from `init`, and extrapolates intercept and slope to zero tremble. The
/// reported strategy is pure.
pub fn solve_extrapolated(
    scenario: &Scenario,
    init: &LinearStrategy,
    config: &SolverConfig,
) -> Result<EquilibriumReport> {
    config.validate()?;
    let solves = EXTRAPOLATION_TREMBLES
        .iter()
        .map(|&rel| solve_at_tremble(scenario, init, rel * scenario.var_theta(), config))
        .collect::<Result<Vec<_>>>()?;
    let at = |f: fn(&TrembleSolve) -> f64| -> Vec<(f64, f64)> {
        solves.iter().map(|s| (s.tremble_variance, f(s))).collect()
    };
    let strategy = LinearStrategy::pure(
        extrapolate_to_zero(&at(|s| s.intercept)),
        extrapolate_to_zero(&at(|s| s.slope)),
    );
    Ok(report(scenario, strategy, solves))
}

fn report(
    scenario: &Scenario,
    strategy: LinearStrategy,
    trembles: Vec<TrembleSolve>,
) -> EquilibriumReport {
    let benchmark = benchmark_strategy(scenario);
    EquilibriumReport {
        strategy,
        iterations: trembles.iter().map(|s| s.iterations).max().unwrap_or(0),
        residual: trembles.iter().map(|s| s.residual).fold(0.0, f64::max),
        c2_margin: trembles
            .iter()
            .map(|s| s.c2_margin)
            .fold(f64::INFINITY, f64::min),
        welfare: objective_welfare(scenario, &strategy),
        benchmark_strategy: benchmark,
        welfare_benchmark: objective_welfare(scenario, &benchmark),
        trembles,
    }
}

/// Polynomial (Lagrange) extrapolation of `(t, value)` samples to `t = 0`.
pub fn extrapolate_to_zero(points: &[(f64, f64)]) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(i, &(ti, vi))| {
            let w: f64 = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &(tj, _))| tj / (tj - ti))
                .product();
            w * vi
        })
        .sum()
}

fn solve_at_tremble(
    scenario: &Scenario,
    init: &LinearStrategy,
    tremble: f64,
    config: &SolverConfig,
) -> Result<TrembleSolve> {
    let mut s = [init.intercept, init.slope];
    let mut trace = Vec::new();
    let mut previous_step: Option<[f64; 2]> = None;
    let mut damped = false;

    for iteration in 1..=config.max_iter {
        let next = match config.method {
            IterationMethod::Newton => newton_step(scenario, s, tremble)?,
            IterationMethod::BestReply => {
                let reply = reply_from(foc_at(scenario, s[0], s[1], tremble)?, tremble)?;
                let raw = [reply.intercept - s[0], reply.slope - s[1]];
                if let Some(prev) = previous_step {
                    if raw[0] * prev[0] < 0.0 || raw[1] * prev[1] < 0.0 {
                        damped = true;
                    }
                }
                previous_step = Some(raw);
                let w = if damped { 0.5 } else { 1.0 };
                [s[0] + w * raw[0], s[1] + w * raw[1]]
            }
        };
        let step = (next[0] - s[0]).abs() + (next[1] - s[1]).abs();
        trace.push(step);
        s = next;
        if !step.is_finite() {
            break;
        }
        if step <= config.tol {
            let foc = foc_at(scenario, s[0], s[1], tremble)?;
            let margin = (1.0 - foc.c2).abs();
            if !(margin >= DEGENERATE_FOC_MARGIN) {
                return Err(Error::DegenerateFoc { margin });
            }
            return Ok(TrembleSolve {
                tremble_variance: tremble,
                intercept: s[0],
                slope: s[1],
                iterations: iteration,
                residual: step,
                c2_margin: margin,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: trace.len(),
        residual: trace.last().copied().unwrap_or(f64::NAN),
        last_k: s[1],
        last_b: s[0],
        trace,
    })
}

fn norm(r: [f64; 2]) -> f64 {
    r[0].hypot(r[1])
}

/// One Newton step on the first-order-condition residual, with a
/// central-difference Jacobian.
fn newton_step(scenario: &Scenario, s: [f64; 2], tremble: f64) -> Result<[f64; 2]> {
    let residual_at = |p: [f64; 2]| -> Result<[f64; 2]> {
        Ok(foc_at(scenario, p[0], p[1], tremble)?.residual(p[0], p[1]))
    };
    let r0 = residual_at(s)?;
    let mut jac = [[0.0; 2]; 2];
    for j in 0..2 {
        let h = 1e-6 * s[j].abs().max(1.0);
        let (mut up, mut down) = (s, s);
        up[j] += h;
        down[j] -= h;
        let (ru, rd) = (residual_at(up)?, residual_at(down)?);
        for i in 0..2 {
            jac[i][j] = (ru[i] - rd[i]) / (2.0 * h);
        }
    }
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    if !(det.abs() > 0.0 && det.is_finite()) {
        // Singular Jacobian: fall back to a plain best reply.
        let reply = reply_from(foc_at(scenario, s[0], s[1], tremble)?, tremble)?;
        return Ok([reply.intercept, reply.slope]);
    }
    let delta = [
        -(jac[1][1] * r0[0] - jac[0][1] * r0[1]) / det,
        -(-jac[1][0] * r0[0] + jac[0][0] * r0[1]) / det,
    ];
    // Non-monotone backtracking: the reverse-only residual has a bump of
    // width ~sqrt(tremble) around k = 0 that a full step must cross.
    let full = [s[0] + delta[0], s[1] + delta[1]];
    let base = norm(r0);
    let mut alpha = 1.0;
    for _ in 0..5 {
        let candidate = [s[0] + alpha * delta[0], s[1] + alpha * delta[1]];
        if let Ok(r) = residual_at(candidate) {
            if norm(r) <= base {
                return Ok(candidate);
            }
        }
        alpha *= 0.5;
    }
    Ok(full)
}

/// Exact `E[-(x - a)^2]` under the objective joint induced by `strategy`.
pub fn objective_welfare(scenario: &Scenario, strategy: &LinearStrategy) -> f64 {
    let joint = scenario.objective_joint(strategy);
    let (mean, var) = joint
        .linear_moments(&[(X, 1.0), (ACTION, -1.0)])
        .expect("x and a are in every objective joint");
    -(mean * mean + var)
}

/// Welfare at the benchmark minus welfare at the extrapolated equilibrium.
pub fn welfare_gap(scenario: &Scenario) -> Result<f64> {
    let report = solve_extrapolated(
        scenario,
        &LinearStrategy::pure(0.0, 0.0),
        &SolverConfig::default(),
    )?;
    Ok(report.welfare_gap())
}
