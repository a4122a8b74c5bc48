//! Property suites shared by the `properties` test target and the acceptance
//! harness. Each suite runs a deterministic proptest runner and returns the
//! first counterexample as an error string.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

use revcause_core::belief::{belief_under, compose, fit};
use revcause_core::dag::{Dag, ACTION, CANONICAL_ORDER, THETA, X, Y};
use revcause_core::equilibrium::{
    benchmark_strategy, closed_form_strategy, solve_extrapolated, solve_personal_equilibrium,
    welfare_gap, SolverConfig,
};
use revcause_core::gaussian::{signal_extraction_weight, GaussianJoint};
use revcause_core::montecarlo::{empirical_welfare, simulate, SimConfig};
use revcause_core::scm::{LinearStrategy, NoiseVariances, Scenario, Structure, DEFAULT_TREMBLE};

pub type Suite = (&'static str, fn(u32) -> Result<(), String>);

/// Every suite with its default case count.
pub const SUITES: &[(Suite, u32)] = &[
    (("dag: order, parents, reconstruction", dag_invariants), 128),
    (
        ("gaussian: condition round-trip", condition_round_trip),
        128,
    ),
    (
        ("gaussian: law of total variance", law_of_total_variance),
        128,
    ),
    (
        ("gaussian: signal-extraction equivalence", signal_extraction),
        128,
    ),
    (
        (
            "gaussian: marginalize then condition",
            marginalize_then_condition,
        ),
        128,
    ),
    (
        (
            "scm: objective joint linear in variances",
            objective_joint_linear,
        ),
        128,
    ),
    (
        ("scm: structural conditionals", structural_conditionals),
        128,
    ),
    (
        ("belief: fit-compose fixed point", fit_compose_fixed_point),
        128,
    ),
    (
        ("belief: marginal preservation", marginal_preservation),
        128,
    ),
    (("belief: main-model conditional", main_belief_formula), 128),
    (
        (
            "belief: y independent of theta and a under G",
            composed_y_independent,
        ),
        128,
    ),
    (
        (
            "equilibrium: solver matches closed form",
            solver_matches_closed_form,
        ),
        256,
    ),
    (("equilibrium: tremble stability", tremble_stability), 64),
    (("equilibrium: rigidity", rigidity), 128),
    (("equilibrium: monotonicity", monotonicity), 128),
    (
        (
            "equilibrium: benchmark variance invariance",
            benchmark_invariance,
        ),
        128,
    ),
    (
        (
            "equilibrium: exogeneity-only variance invariance",
            exo_invariance,
        ),
        64,
    ),
    (("equilibrium: magnification in delta", magnification), 64),
    (
        ("equilibrium: welfare gap nonnegative", gap_nonnegative),
        128,
    ),
    (
        ("equilibrium: zero intercept and E(y)", zero_intercept),
        128,
    ),
    (("montecarlo: chunking invariance", chunking_invariance), 16),
    (("montecarlo: determinism", determinism), 16),
];

fn run<S>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

macro_rules! close {
    ($got:expr, $want:expr, $tol:expr) => {{
        let (g, w): (f64, f64) = ($got, $want);
        prop_assert!(
            (g - w).abs() <= $tol,
            "{} = {g:e}, expected {w:e} within {:e}",
            stringify!($got),
            $tol
        );
    }};
}

fn err(e: revcause_core::Error) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

pub fn structure() -> impl Strategy<Value = Structure> {
    prop_oneof![
        (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(gamma, lambda)| Structure::Main { gamma, lambda }),
        (0.01..0.99f64, 0.01..0.99f64, 0.01..0.99f64).prop_map(|(kappa, alpha, delta)| {
            Structure::ExogeneityOnly {
                kappa,
                alpha,
                delta,
            }
        }),
        (0.0..=1.0f64, 0.0..=1.0f64)
            .prop_map(|(gamma, lambda)| Structure::ReverseOnly { gamma, lambda }),
    ]
}

pub fn noise() -> impl Strategy<Value = NoiseVariances> {
    (0.2..5.0f64, 0.05..10.0f64, 0.1..5.0f64).prop_map(|(t, e, h)| NoiseVariances::new(t, e, h))
}

pub fn scenario() -> impl Strategy<Value = Scenario> {
    (structure(), noise()).prop_map(|(s, n)| Scenario::new(s, n).expect("in range"))
}

fn strategy_with_tremble() -> impl Strategy<Value = LinearStrategy> {
    (-1.0..1.0f64, -0.5..2.0f64, 0.01..2.0f64)
        .prop_map(|(b, k, t)| LinearStrategy::new(b, k, t).expect("valid strategy"))
}

/// A joint over `v0..v{n-1}` with a random, well-conditioned covariance.
fn random_joint(n: usize) -> impl Strategy<Value = GaussianJoint> {
    (
        prop::collection::vec(-2.0..2.0f64, n * n),
        prop::collection::vec(-3.0..3.0f64, n),
    )
        .prop_map(move |(entries, mean)| {
            let mut a = DMatrix::from_row_slice(n, n, &entries);
            for i in 0..n {
                a[(i, i)] = a[(i, i)].abs() + 0.5;
            }
            GaussianJoint::from_factor(
                (0..n).map(|i| format!("v{i}")).collect(),
                DVector::from_vec(mean),
                a,
            )
            .expect("finite factor")
        })
}

pub fn dag_invariants(cases: u32) -> Result<(), String> {
    let nodes = Just(CANONICAL_ORDER.to_vec()).prop_shuffle();
    run(cases, (nodes, 0u8..64), |(order, mask)| {
        // Edges only run forward in a random order, so the graph is acyclic.
        let mut edges = Vec::new();
        let mut bit = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                if mask & (1 << bit) != 0 {
                    edges.push((order[i], order[j]));
                }
                bit += 1;
            }
        }
        let dag = Dag::from_names(&CANONICAL_ORDER, &edges).map_err(err)?;
        let topo = dag.topological_order();
        let as_set: BTreeSet<&str> = topo.iter().copied().collect();
        prop_assert_eq!(topo.len(), 4);
        prop_assert_eq!(
            as_set,
            CANONICAL_ORDER.iter().copied().collect::<BTreeSet<_>>()
        );
        let pos = |n: &str| topo.iter().position(|m| *m == n).unwrap();
        for (c, e) in dag.edges() {
            prop_assert!(pos(c) < pos(e), "{c}->{e} out of order in {topo:?}");
        }
        for n in CANONICAL_ORDER {
            let got: BTreeSet<&str> = dag.parents(n).map_err(err)?.into_iter().collect();
            let want: BTreeSet<&str> = edges
                .iter()
                .filter(|(_, e)| *e == n)
                .map(|(c, _)| *c)
                .collect();
            prop_assert_eq!(got, want);
        }
        let owned: Vec<(String, String)> = dag
            .edges()
            .map(|(c, e)| (c.to_string(), e.to_string()))
            .collect();
        let rebuilt = Dag::new(dag.nodes().to_vec(), owned).map_err(err)?;
        prop_assert_eq!(rebuilt, dag);
        Ok(())
    })
}

pub fn condition_round_trip(cases: u32) -> Result<(), String> {
    let params = (
        random_joint(2),
        -3.0..3.0f64,
        prop::collection::vec(-2.0..2.0f64, 2),
        0.1..3.0f64,
    );
    run(cases, params, |(given, intercept, coefs, resid)| {
        // target = intercept + coefs . given + sqrt(resid) * fresh shock
        let l = given.factor();
        let mut factor = DMatrix::zeros(3, l.ncols() + 1);
        factor.view_mut((0, 0), (2, l.ncols())).copy_from(l);
        for j in 0..l.ncols() {
            factor[(2, j)] = coefs[0] * l[(0, j)] + coefs[1] * l[(1, j)];
        }
        factor[(2, l.ncols())] = resid.sqrt();
        let m = given.mean();
        let mean = DVector::from_vec(vec![
            m[0],
            m[1],
            intercept + coefs[0] * m[0] + coefs[1] * m[1],
        ]);
        let joint =
            GaussianJoint::from_factor(vec!["v0".into(), "v1".into(), "t".into()], mean, factor)
                .map_err(err)?;
        let c = joint.condition("t", &["v0", "v1"]).map_err(err)?;
        close!(c.intercept, intercept, 1e-9);
        close!(c.coefficients[0], coefs[0], 1e-9);
        close!(c.coefficients[1], coefs[1], 1e-9);
        close!(c.residual_variance, resid, 1e-9);
        Ok(())
    })
}

pub fn law_of_total_variance(cases: u32) -> Result<(), String> {
    run(
        cases,
        (random_joint(4), 0usize..4, 0u8..8),
        |(joint, target, mask)| {
            let names = ["v0", "v1", "v2", "v3"];
            let given: Vec<&str> = (0..4)
                .filter(|&i| i != target)
                .enumerate()
                .filter(|(bit, _)| mask & (1 << bit) != 0)
                .map(|(_, i)| names[i])
                .collect();
            let c = joint.condition(names[target], &given).map_err(err)?;
            let mut explained = 0.0;
            for (i, a) in given.iter().enumerate() {
                for (j, b) in given.iter().enumerate() {
                    explained += c.coefficients[i]
                        * c.coefficients[j]
                        * joint.covariance_between(a, b).map_err(err)?;
                }
            }
            let var = joint.variance_of(names[target]).map_err(err)?;
            close!(explained + c.residual_variance, var, 1e-9);
            Ok(())
        },
    )
}

pub fn signal_extraction(cases: u32) -> Result<(), String> {
    run(cases, (0.01..10.0f64, 0.01..10.0f64), |(ve, vh)| {
        let joint = GaussianJoint::from_parts(&["eps", "sum"], &[0.0, 0.0], &[ve, ve, ve, ve + vh])
            .map_err(err)?;
        let c = joint.condition("eps", &["sum"]).map_err(err)?;
        close!(
            c.coefficients[0],
            signal_extraction_weight(ve, vh).map_err(err)?,
            1e-12
        );
        Ok(())
    })
}

pub fn marginalize_then_condition(cases: u32) -> Result<(), String> {
    run(cases, random_joint(4), |joint| {
        let direct = joint.condition("v0", &["v1", "v2"]).map_err(err)?;
        let reduced = joint.marginalize(&["v0", "v1", "v2"]).map_err(err)?;
        let via = reduced.condition("v0", &["v1", "v2"]).map_err(err)?;
        close!(via.intercept, direct.intercept, 1e-9);
        close!(via.coefficients[0], direct.coefficients[0], 1e-9);
        close!(via.coefficients[1], direct.coefficients[1], 1e-9);
        close!(via.residual_variance, direct.residual_variance, 1e-9);
        Ok(())
    })
}

pub fn objective_joint_linear(cases: u32) -> Result<(), String> {
    run(cases, (scenario(), strategy_with_tremble()), |(s, st)| {
        let p = s.objective_joint(&st);
        let doubled = s
            .with_noise(s.noise().scaled(2.0))
            .map_err(err)?
            .objective_joint(&st.with_tremble(2.0 * st.tremble_variance));
        let scale = p.covariance().amax();
        for (a, b) in p.covariance().iter().zip(doubled.covariance().iter()) {
            close!(*b, 2.0 * a, 1e-12 * scale);
        }
        prop_assert_eq!(p.mean(), doubled.mean());
        Ok(())
    })
}

pub fn structural_conditionals(cases: u32) -> Result<(), String> {
    run(cases, (scenario(), strategy_with_tremble()), |(s, st)| {
        let p = s.objective_joint(&st);
        match s.structure() {
            Structure::Main { gamma, lambda } => {
                let x = p.condition(X, &[THETA, ACTION]).map_err(err)?;
                close!(x.coefficients[0], 1.0, 1e-9);
                close!(x.coefficients[1], -gamma, 1e-9);
                close!(x.residual_variance, s.var_eps(), 1e-9);
                let y = p.condition(Y, &[ACTION, X]).map_err(err)?;
                close!(y.coefficients[0], -lambda, 1e-9);
                close!(y.coefficients[1], 1.0, 1e-9);
                close!(y.residual_variance, s.var_eta(), 1e-9);
            }
            Structure::ExogeneityOnly { delta, .. } => {
                let y = p.condition(Y, &[ACTION]).map_err(err)?;
                close!(y.coefficients[0], delta, 1e-9);
                close!(y.residual_variance, s.var_eta(), 1e-9);
            }
            Structure::ReverseOnly { .. } => {}
        }
        Ok(())
    })
}

pub fn fit_compose_fixed_point(cases: u32) -> Result<(), String> {
    run(cases, (scenario(), strategy_with_tremble()), |(s, st)| {
        let p = s.objective_joint(&st);
        let q = compose(&fit(&p, &s.true_dag()).map_err(err)?).map_err(err)?;
        for (a, b) in p.covariance().iter().zip(q.covariance().iter()) {
            close!(*b, *a, 1e-9);
        }
        for (a, b) in p.mean().iter().zip(q.mean().iter()) {
            close!(*b, *a, 1e-9);
        }
        Ok(())
    })
}

/// True when every node in `node`'s ancestral set has pairwise adjacent
/// parents. Only then is the node's marginal carried over by composition.
pub fn perfect_ancestry(dag: &Dag, node: &str) -> bool {
    let mut stack = vec![node.to_string()];
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if !seen.insert(n.clone()) {
            continue;
        }
        let parents = dag.parents(&n).expect("known node");
        for (i, a) in parents.iter().enumerate() {
            for b in &parents[i + 1..] {
                if !dag.has_edge(a, b) && !dag.has_edge(b, a) {
                    return false;
                }
            }
        }
        stack.extend(parents.iter().map(|p| p.to_string()));
    }
    true
}

/// Means survive composition for every node; variances for every node with
/// perfect ancestry. Under the subjective DAGs `x` has parents `theta` and
/// `y` that are not adjacent, so its variance generally changes.
pub fn marginal_preservation(cases: u32) -> Result<(), String> {
    run(cases, (scenario(), strategy_with_tremble()), |(s, st)| {
        let p = s.objective_joint(&st);
        for dag in [s.subjective_dag(), s.true_dag()] {
            let q = compose(&fit(&p, &dag).map_err(err)?).map_err(err)?;
            for n in CANONICAL_ORDER {
                close!(q.mean_of(n).map_err(err)?, p.mean_of(n).map_err(err)?, 1e-9);
                if perfect_ancestry(&dag, n) {
                    close!(
                        q.variance_of(n).map_err(err)?,
                        p.variance_of(n).map_err(err)?,
                        1e-9
                    );
                }
            }
        }
        Ok(())
    })
}

fn main_scenario() -> impl Strategy<Value = Scenario> {
    (0.0..=1.0f64, 0.0..=1.0f64, noise())
        .prop_map(|(g, l, n)| Scenario::main(g, l, n).expect("in range"))
}

pub fn main_belief_formula(cases: u32) -> Result<(), String> {
    run(
        cases,
        (main_scenario(), -1.0..1.0f64, -0.5..2.0f64),
        |(s, b, k)| {
            let Structure::Main { gamma, lambda } = s.structure() else {
                unreachable!()
            };
            let beta = s.beta().map_err(err)?;
            let want = [1.0 - beta, beta * lambda + beta * gamma - gamma];
            let mut previous = None;
            for t in [DEFAULT_TREMBLE, 1e-8] {
                let st = LinearStrategy::new(b, k, t * s.var_theta()).map_err(err)?;
                let belief =
                    belief_under(&s.subjective_dag(), &s.objective_joint(&st)).map_err(err)?;
                let got = [belief.theta_coefficient(), belief.action_coefficient()];
                close!(got[0], want[0], 1e-6);
                close!(got[1], want[1], 1e-6);
                if let Some(prev) = previous {
                    // Shrinking the tremble moves the belief no further from the limit.
                    let before: [f64; 2] = prev;
                    prop_assert!(
                        (got[1] - want[1]).abs() <= (before[1] - want[1]).abs() + 1e-12,
                        "tremble 1e-8 moved away: {got:?} vs {before:?}"
                    );
                }
                previous = Some(got);
            }
            Ok(())
        },
    )
}

pub fn composed_y_independent(cases: u32) -> Result<(), String> {
    run(
        cases,
        (main_scenario(), strategy_with_tremble()),
        |(s, st)| {
            let belief = belief_under(&s.subjective_dag(), &s.objective_joint(&st)).map_err(err)?;
            let scale = belief.joint.covariance().amax();
            close!(
                belief.joint.covariance_between(Y, THETA).map_err(err)?,
                0.0,
                1e-12 * scale
            );
            close!(
                belief.joint.covariance_between(Y, ACTION).map_err(err)?,
                0.0,
                1e-12 * scale
            );
            Ok(())
        },
    )
}

fn solve(
    s: &Scenario,
    b: f64,
    k: f64,
) -> Result<revcause_core::equilibrium::EquilibriumReport, TestCaseError> {
    solve_extrapolated(s, &LinearStrategy::pure(b, k), &SolverConfig::default()).map_err(err)
}

pub fn solver_matches_closed_form(cases: u32) -> Result<(), String> {
    run(cases, (scenario(), 0.0..2.0f64), |(s, k0)| {
        let k = solve(&s, 0.0, k0)?.strategy.slope;
        close!(k, closed_form_strategy(&s).map_err(err)?.slope, 1e-6);
        Ok(())
    })
}

pub fn tremble_stability(cases: u32) -> Result<(), String> {
    run(cases, scenario(), |s| {
        let at = |t: f64| -> Result<f64, TestCaseError> {
            let init = LinearStrategy::new(0.0, 0.0, t * s.var_theta()).map_err(err)?;
            Ok(
                solve_personal_equilibrium(&s, &init, &SolverConfig::default())
                    .map_err(err)?
                    .strategy
                    .slope,
            )
        };
        let limit = solve(&s, 0.0, 0.0)?.strategy.slope;
        for t in [1e-6, 1e-8] {
            let k = at(t)?;
            prop_assert!(
                (k - limit).abs() <= 5e-5 * limit.abs().max(1e-3),
                "k({t:e}) = {k} vs limit {limit}: not stable to 4 digits"
            );
        }
        Ok(())
    })
}

pub fn rigidity(cases: u32) -> Result<(), String> {
    run(
        cases,
        (0.0..=1.0f64, 0.0..0.95f64, 0.05..50.0f64),
        |(gamma, lambda, tau)| {
            let strict =
                Scenario::main(gamma, lambda, NoiseVariances::new(1.0, tau, 1.0)).map_err(err)?;
            let r = solve(&strict, 0.0, 0.0)?;
            prop_assert!(r.strategy.slope < r.benchmark_strategy.slope);
            for s in [
                Scenario::main(gamma, 1.0, NoiseVariances::new(1.0, tau, 1.0)).map_err(err)?,
                Scenario::main(gamma, lambda, NoiseVariances::new(1.0, 0.0, 1.0)).map_err(err)?,
            ] {
                let r = solve(&s, 0.0, 0.0)?;
                close!(r.strategy.slope, r.benchmark_strategy.slope, 1e-9);
            }
            Ok(())
        },
    )
}

pub fn monotonicity(cases: u32) -> Result<(), String> {
    let params = (
        0.0..=1.0f64,
        0.0..0.95f64,
        0.05..50.0f64,
        1.05..4.0f64,
        0.02..0.5f64,
    );
    run(cases, params, |(gamma, lambda, tau, factor, step)| {
        let k = |l: f64, t: f64| -> Result<f64, TestCaseError> {
            let s = Scenario::main(gamma, l, NoiseVariances::new(1.0, t, 1.0)).map_err(err)?;
            Ok(solve(&s, 0.0, 0.0)?.strategy.slope)
        };
        let base = k(lambda, tau)?;
        prop_assert!(k(lambda, tau * factor)? < base, "not decreasing in tau");
        prop_assert!(
            k((lambda + step).min(1.0), tau)? > base,
            "not increasing in lambda"
        );
        Ok(())
    })
}

pub fn benchmark_invariance(cases: u32) -> Result<(), String> {
    run(cases, (structure(), noise(), noise()), |(st, n1, n2)| {
        let a = benchmark_strategy(&Scenario::new(st, n1).map_err(err)?);
        let b = benchmark_strategy(&Scenario::new(st, n2).map_err(err)?);
        prop_assert_eq!(a, b);
        Ok(())
    })
}

pub fn exo_invariance(cases: u32) -> Result<(), String> {
    let params = (
        0.01..0.99f64,
        0.01..0.99f64,
        0.01..0.99f64,
        noise(),
        noise(),
    );
    run(cases, params, |(kappa, alpha, delta, n1, n2)| {
        let k1 = solve(
            &Scenario::exogeneity_only(kappa, alpha, delta, n1).map_err(err)?,
            0.0,
            0.0,
        )?;
        let k2 = solve(
            &Scenario::exogeneity_only(kappa, alpha, delta, n2).map_err(err)?,
            0.0,
            0.0,
        )?;
        close!(k1.strategy.slope, k2.strategy.slope, 1e-9);
        Ok(())
    })
}

pub fn magnification(cases: u32) -> Result<(), String> {
    let params = (
        0.01..0.99f64,
        0.01..0.99f64,
        0.01..0.9f64,
        0.02..0.5f64,
        noise(),
    );
    run(cases, params, |(kappa, alpha, delta, step, n)| {
        let gap = |d: f64| -> Result<f64, TestCaseError> {
            welfare_gap(&Scenario::exogeneity_only(kappa, alpha, d, n).map_err(err)?).map_err(err)
        };
        let (lo, hi) = (gap(delta)?, gap((delta + step).min(0.99))?);
        prop_assert!(hi > lo, "gap {lo} at delta {delta} vs {hi} after +{step}");
        Ok(())
    })
}

pub fn gap_nonnegative(cases: u32) -> Result<(), String> {
    run(cases, scenario(), |s| {
        let gap = solve(&s, 0.0, 0.0)?.welfare_gap();
        prop_assert!(gap >= -1e-12, "gap {gap}");
        Ok(())
    })
}

pub fn zero_intercept(cases: u32) -> Result<(), String> {
    run(
        cases,
        (scenario(), -2.0..2.0f64, 0.0..2.0f64),
        |(s, b0, k0)| {
            let r = solve(&s, b0, k0)?;
            close!(r.strategy.intercept, 0.0, 1e-8);
            let p = s.objective_joint(&r.strategy.with_tremble(DEFAULT_TREMBLE * s.var_theta()));
            close!(p.mean_of(Y).map_err(err)?, 0.0, 1e-8);
            Ok(())
        },
    )
}

pub fn chunking_invariance(cases: u32) -> Result<(), String> {
    let params = (
        scenario(),
        strategy_with_tremble(),
        any::<u64>(),
        1u64..3000,
    );
    run(cases, params, |(s, st, seed, chunk)| {
        let whole = SimConfig::new(20_000, seed).with_chunk_size(20_000);
        let parts = whole.with_chunk_size(chunk);
        let a = simulate(&s, &st, &whole).map_err(err)?;
        let b = simulate(&s, &st, &parts).map_err(err)?;
        for (x, y) in a.sample_covariance.iter().zip(b.sample_covariance.iter()) {
            close!(*y, *x, 1e-12);
        }
        for (x, y) in a.sample_mean.iter().zip(b.sample_mean.iter()) {
            close!(*y, *x, 1e-12);
        }
        let wa = empirical_welfare(&s, &st, &whole).map_err(err)?;
        let wb = empirical_welfare(&s, &st, &parts).map_err(err)?;
        close!(wb.mean, wa.mean, 1e-12);
        Ok(())
    })
}

pub fn determinism(cases: u32) -> Result<(), String> {
    run(
        cases,
        (scenario(), strategy_with_tremble(), any::<u64>()),
        |(s, st, seed)| {
            let config = SimConfig::new(10_000, seed);
            let a = simulate(&s, &st, &config).map_err(err)?;
            let b = simulate(&s, &st, &config).map_err(err)?;
            prop_assert_eq!(a, b);
            Ok(())
        },
    )
}
