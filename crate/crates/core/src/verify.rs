//! Analytic vs closed-form vs simulation check matrix.
//!
//! Sampling checks report deviations in jackknife standard errors; the rest
//! report absolute deviations. `closed_form_shift` perturbs every
//! closed-form denominator (`k = 1 / (d + shift)`) and exists so the matrix
//! can be shown to catch a corrupted formula.

use serde::Serialize;

use crate::belief::belief_under;
use crate::dag::CANONICAL_ORDER;
use crate::equilibrium::{
    benchmark_strategy, closed_form_strategy, objective_welfare, solve_extrapolated,
    solve_personal_equilibrium, SolverConfig,
};
use crate::error::Result;
use crate::montecarlo::{
    empirical_fit, empirical_welfare, simulate, uniforms, SimConfig, MIN_RELIABLE_DRAWS,
};
use crate::scm::{LinearStrategy, NoiseVariances, Scenario, Structure};

pub const DEFAULT_DRAWS: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Sampling bands, in standard errors.
pub const SE_BAND: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub draws: u64,
    pub seed: u64,
    pub closed_form_shift: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            draws: DEFAULT_DRAWS,
            seed: DEFAULT_SEED,
            closed_form_shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub worst_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Unit of `worst_deviation`: `abs` or `se`.
    pub unit: &'static str,
    pub points: usize,
}

impl Check {
    fn absolute(name: &'static str, deviations: &[f64], tolerance: f64) -> Check {
        let worst = deviations.iter().copied().fold(0.0, nan_max);
        Check {
            name,
            worst_deviation: worst,
            tolerance,
            passed: worst <= tolerance,
            unit: "abs",
            points: deviations.len(),
        }
    }

    fn sampling(name: &'static str, z_scores: &[f64]) -> Check {
        Check {
            unit: "se",
            ..Check::absolute(name, z_scores, SE_BAND)
        }
    }
}

/// `max` that propagates NaN, so a NaN deviation fails its check.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const TAUS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 10.0];
const THIRDS: [f64; 3] = [0.25, 0.5, 0.75];

pub fn run(options: &VerifyOptions) -> Result<VerifyReport> {
    let mut warnings = Vec::new();
    if options.draws < MIN_RELIABLE_DRAWS {
        warnings.push(format!(
            "{} draws: sampling tolerances are unreliable below {MIN_RELIABLE_DRAWS}",
            options.draws
        ));
    }
    let shifted = |k: f64| 1.0 / (1.0 / k + options.closed_form_shift);
    let solver = SolverConfig::default();
    let zero = LinearStrategy::pure(0.0, 0.0);
    let solve = |s: &Scenario, init: &LinearStrategy| solve_extrapolated(s, init, &solver);
    let mut checks = Vec::new();

    // Main closed form.
    let mut dev = Vec::new();
    for &g in &GRID {
        for &l in &GRID {
            for &tau in &TAUS {
                let s = Scenario::main(g, l, NoiseVariances::new(1.0, tau, 1.0))?;
                let k = solve(&s, &zero)?.strategy.slope;
                dev.push((k - shifted(closed_form_strategy(&s)?.slope)).abs());
            }
        }
    }
    checks.push(Check::absolute("main closed form", &dev, 1e-6));

    // Benchmark: the true DAG as the subjective DAG.
    let mut dev = Vec::new();
    for structure in [
        Structure::Main {
            gamma: 0.3,
            lambda: 0.6,
        },
        Structure::ReverseOnly {
            gamma: 0.7,
            lambda: 0.2,
        },
        Structure::ExogeneityOnly {
            kappa: 0.4,
            alpha: 0.6,
            delta: 0.5,
        },
    ] {
        for &ve in &[0.5, 1.0, 4.0] {
            for &vh in &[0.5, 1.0, 4.0] {
                let s = Scenario::new(structure, NoiseVariances::new(1.0, ve, vh))?;
                let s = s.clone().with_subjective_dag(s.true_dag())?;
                let k = solve(&s, &zero)?.strategy.slope;
                dev.push((k - shifted(benchmark_strategy(&s).slope)).abs());
            }
        }
    }
    checks.push(Check::absolute("true-DAG benchmark", &dev, 1e-9));

    // lambda = 1: no welfare loss.
    let (mut dev, mut gaps) = (Vec::new(), Vec::new());
    for &g in &GRID {
        for &tau in &TAUS {
            let s = Scenario::main(g, 1.0, NoiseVariances::new(1.0, tau, 1.0))?;
            let r = solve(&s, &zero)?;
            dev.push((r.strategy.slope - shifted(r.benchmark_strategy.slope)).abs());
            gaps.push(r.welfare_gap().max(0.0));
        }
    }
    checks.push(Check::absolute("lambda=1 matches benchmark", &dev, 1e-6));
    checks.push(Check::absolute("lambda=1 welfare gap", &gaps, 1e-9));

    // tau rigidity: the largest step along each tau sweep must be negative.
    let mut rises = Vec::new();
    for &g in &GRID {
        for &l in &GRID[..4] {
            let ks = [0.1, 1.0, 10.0, 100.0, 1e4]
                .iter()
                .map(|&tau| {
                    Ok(solve(
                        &Scenario::main(g, l, NoiseVariances::new(1.0, tau, 1.0))?,
                        &zero,
                    )?
                    .strategy
                    .slope)
                })
                .collect::<Result<Vec<f64>>>()?;
            let worst_rise = ks
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max);
            rises.push(if worst_rise < 0.0 {
                0.0
            } else {
                worst_rise.max(f64::MIN_POSITIVE)
            });
        }
    }
    checks.push(Check::absolute(
        "tau sweep strictly decreasing",
        &rises,
        0.0,
    ));
    let k = solve(
        &Scenario::main(0.0, 0.0, NoiseVariances::new(1.0, 1e4, 1.0))?,
        &zero,
    )?
    .strategy
    .slope;
    checks.push(Check::absolute("k at tau=1e4 below 1e-3", &[k], 1e-3));

    // Exogeneity-only closed forms, variance invariance, magnification.
    let (mut dev, mut spread, mut falls) = (Vec::new(), Vec::new(), Vec::new());
    for &kappa in &THIRDS {
        for &alpha in &THIRDS {
            let mut prev_gap = f64::NEG_INFINITY;
            for &delta in &THIRDS {
                let structure = Structure::ExogeneityOnly {
                    kappa,
                    alpha,
                    delta,
                };
                let mut ks = Vec::new();
                for noise in [NoiseVariances::unit(), NoiseVariances::new(2.0, 0.5, 3.0)] {
                    let s = Scenario::new(structure, noise)?;
                    let r = solve(&s, &zero)?;
                    dev.push((r.strategy.slope - shifted(1.0 / (1.0 + kappa))).abs());
                    let truth = s.clone().with_subjective_dag(s.true_dag())?;
                    let kb = solve(&truth, &zero)?.strategy.slope;
                    dev.push((kb - shifted(1.0 / (1.0 + kappa - alpha * delta))).abs());
                    ks.push(r.strategy.slope);
                    if noise == NoiseVariances::unit() {
                        let gap = r.welfare_gap();
                        falls.push(if gap > prev_gap {
                            0.0
                        } else {
                            prev_gap - gap + f64::MIN_POSITIVE
                        });
                        prev_gap = gap;
                    }
                }
                spread.push((ks[0] - ks[1]).abs());
            }
        }
    }
    checks.push(Check::absolute("exogeneity-only closed forms", &dev, 1e-9));
    checks.push(Check::absolute(
        "exogeneity-only variance invariance",
        &spread,
        1e-9,
    ));
    checks.push(Check::absolute(
        "exogeneity-only gap increasing in delta",
        &falls,
        0.0,
    ));

    // Reverse-only coincides with the benchmark.
    let mut dev = Vec::new();
    for &g in &GRID {
        for &tau in &[0.1, 1.0, 10.0] {
            for &k0 in &[0.0, 2.0] {
                let s = Scenario::reverse_only(g, 0.5, NoiseVariances::new(1.0, tau, 1.0))?;
                let k = solve(&s, &LinearStrategy::pure(0.0, k0))?.strategy.slope;
                dev.push((k - shifted(closed_form_strategy(&s)?.slope)).abs());
            }
        }
    }
    checks.push(Check::absolute("reverse-only coincidence", &dev, 1e-6));

    // Welfare formula on a reproducible random sample.
    let mut dev = Vec::new();
    for i in 0..20 {
        let u = uniforms(options.seed, 1_000_000_000 + i);
        let v = uniforms(options.seed, 2_000_000_000 + i);
        let (gamma, lambda) = (u[0], u[1]);
        let noise = NoiseVariances::new(0.2 + 2.0 * u[2], 2.0 * u[3], 0.1 + v[0]);
        let st = LinearStrategy::new(v[1] - 0.5, 1.5 * v[2], v[3])?;
        let s = Scenario::main(gamma, lambda, noise)?;
        let formula = -((1.0 - (1.0 + gamma) * st.slope).powi(2) * noise.var_theta
            + (1.0 + gamma).powi(2) * (st.intercept.powi(2) + st.tremble_variance)
            + noise.var_eps);
        dev.push((objective_welfare(&s, &st) - formula).abs());
    }
    checks.push(Check::absolute("welfare formula", &dev, 1e-12));

    // Simulation vs analytic joint.
    let sim = SimConfig::new(options.draws, options.seed);
    let mut z = Vec::new();
    for (i, s) in spot_checks()?.iter().enumerate() {
        let st = LinearStrategy::new(0.3, closed_form_strategy(s)?.slope, 0.5 * s.var_theta())?;
        let emp = simulate(
            s,
            &st,
            &SimConfig {
                seed: options.seed + i as u64,
                ..sim
            },
        )?;
        let p = s.objective_joint(&st);
        for a in 0..4 {
            z.push(z_score(emp.sample_mean[a], p.mean()[a], emp.mean_se[a]));
            for b in a..4 {
                z.push(z_score(
                    emp.sample_covariance[(a, b)],
                    p.covariance()[(a, b)],
                    emp.covariance_se[(a, b)],
                ));
            }
        }
    }
    checks.push(Check::sampling("simulated moments", &z));

    // Subjective DAG fitted to simulated data recovers the conditional.
    let s = Scenario::main(0.5, 0.5, NoiseVariances::unit())?;
    let st = LinearStrategy::new(0.0, 0.5, s.var_theta())?;
    let fitted = empirical_fit(&simulate(&s, &st, &sim)?, &s.subjective_dag())?;
    let x = fitted.factor(CANONICAL_ORDER[2]).expect("x is a node");
    let dev: Vec<f64> = x
        .coefficients
        .iter()
        .zip([0.5, 0.0, 0.5])
        .map(|(c, w)| (c - w).abs())
        .collect();
    checks.push(Check::absolute(
        "simulated fit of subjective DAG",
        &dev,
        1e-2,
    ));

    // Learning: the belief fitted to simulated play of the equilibrium (at
    // the simulated tremble, which moves the reverse-only fixed point)
    // reproduces its slope.
    let mut dev = Vec::new();
    for (i, s) in spot_checks()?.iter().enumerate() {
        let init = LinearStrategy::new(0.0, 0.0, s.var_theta())?;
        let st = solve_personal_equilibrium(s, &init, &solver)?.strategy;
        let emp = simulate(
            s,
            &st,
            &SimConfig {
                seed: options.seed + 100 + i as u64,
                ..sim
            },
        )?;
        let b = belief_under(&s.subjective_dag(), &emp.to_gaussian()?)?;
        dev.push((b.theta_coefficient() / (1.0 - b.action_coefficient()) - st.slope).abs());
    }
    checks.push(Check::absolute("learned best reply", &dev, 1e-2));

    // Simulated welfare.
    let mut z = Vec::new();
    for (i, s) in spot_checks()?.iter().enumerate() {
        for st in [closed_form_strategy(s)?, benchmark_strategy(s)] {
            let w = empirical_welfare(
                s,
                &st,
                &SimConfig {
                    seed: options.seed + 200 + i as u64,
                    ..sim
                },
            )?;
            z.push(z_score(w.mean, objective_welfare(s, &st), w.standard_error));
        }
    }
    checks.push(Check::sampling("simulated welfare", &z));

    Ok(VerifyReport {
        options: *options,
        checks,
        warnings,
    })
}

/// `|estimate - truth| / se`; a zero standard error demands agreement to
/// rounding.
fn z_score(estimate: f64, truth: f64, se: f64) -> f64 {
    let diff = (estimate - truth).abs();
    if se > 0.0 {
        diff / se
    } else if diff <= 1e-12 * (1.0 + truth.abs()) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Three parameter points per family.
pub fn spot_checks() -> Result<Vec<Scenario>> {
    Ok(vec![
        Scenario::main(0.5, 0.5, NoiseVariances::unit())?,
        Scenario::main(0.25, 0.75, NoiseVariances::new(2.0, 0.5, 1.5))?,
        Scenario::main(1.0, 0.0, NoiseVariances::new(0.5, 3.0, 1.0))?,
        Scenario::exogeneity_only(0.5, 0.5, 0.5, NoiseVariances::unit())?,
        Scenario::exogeneity_only(0.25, 0.75, 0.5, NoiseVariances::new(1.5, 1.0, 2.0))?,
        Scenario::exogeneity_only(0.75, 0.25, 0.75, NoiseVariances::new(1.0, 0.5, 0.5))?,
        Scenario::reverse_only(0.5, 0.5, NoiseVariances::unit())?,
        Scenario::reverse_only(0.0, 1.0, NoiseVariances::new(2.0, 1.0, 1.0))?,
        Scenario::reverse_only(0.75, 0.25, NoiseVariances::new(1.0, 10.0, 1.0))?,
    ])
}
