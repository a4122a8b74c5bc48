//! One-parameter comparative statics.
//!
//! A sweep spec is a scenario in key-value form plus three keys:
//!
//! ```text
//! family = main
//! gamma = 0.5
//! tau = 1
//! sweep = lambda
//! grid = 0, 0.25, 0.5, 0.75, 1
//! outputs = k_closed_form, welfare      # optional
//! ```
//!
//! The CSV header is `<parameter>,k_equilibrium,k_benchmark,welfare_gap`
//! followed by the requested outputs. Sweeping `tau` sets
//! `var_eps = tau * var_eta` with `var_eta` held fixed.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::equilibrium::{closed_form_strategy, solve_extrapolated, SolverConfig};
use crate::error::{Error, Result};
use crate::output::format_number;
use crate::scm::{parse_key_values, KeyValue, LinearStrategy, NoiseVariances, Scenario, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Gamma,
    Lambda,
    Tau,
    Kappa,
    Alpha,
    Delta,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 6] = [
        SweepParameter::Gamma,
        SweepParameter::Lambda,
        SweepParameter::Tau,
        SweepParameter::Kappa,
        SweepParameter::Alpha,
        SweepParameter::Delta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Gamma => "gamma",
            SweepParameter::Lambda => "lambda",
            SweepParameter::Tau => "tau",
            SweepParameter::Kappa => "kappa",
            SweepParameter::Alpha => "alpha",
            SweepParameter::Delta => "delta",
        }
    }

    /// `base` with this parameter set to `value`, validated like the base.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        if self == SweepParameter::Tau {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::invalid(
                    "tau",
                    format!("{value} must be nonnegative"),
                ));
            }
            let n = base.noise();
            return base.with_noise(NoiseVariances::new(
                n.var_theta,
                value * n.var_eta,
                n.var_eta,
            ));
        }
        let structure = match (base.structure(), self) {
            (Structure::Main { lambda, .. }, SweepParameter::Gamma) => Structure::Main {
                gamma: value,
                lambda,
            },
            (Structure::Main { gamma, .. }, SweepParameter::Lambda) => Structure::Main {
                gamma,
                lambda: value,
            },
            (Structure::ReverseOnly { lambda, .. }, SweepParameter::Gamma) => {
                Structure::ReverseOnly {
                    gamma: value,
                    lambda,
                }
            }
            (Structure::ReverseOnly { gamma, .. }, SweepParameter::Lambda) => {
                Structure::ReverseOnly {
                    gamma,
                    lambda: value,
                }
            }
            (Structure::ExogeneityOnly { alpha, delta, .. }, SweepParameter::Kappa) => {
                Structure::ExogeneityOnly {
                    kappa: value,
                    alpha,
                    delta,
                }
            }
            (Structure::ExogeneityOnly { kappa, delta, .. }, SweepParameter::Alpha) => {
                Structure::ExogeneityOnly {
                    kappa,
                    alpha: value,
                    delta,
                }
            }
            (Structure::ExogeneityOnly { kappa, alpha, .. }, SweepParameter::Delta) => {
                Structure::ExogeneityOnly {
                    kappa,
                    alpha,
                    delta: value,
                }
            }
            (structure, p) => {
                return Err(Error::invalid(
                    "sweep",
                    format!(
                        "{} is not a parameter of family {}",
                        p.name(),
                        structure.family()
                    ),
                ))
            }
        };
        base.with_structure(structure)
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepParameter::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| {
                Error::invalid(
                    "sweep",
                    format!("`{s}` is not one of gamma, lambda, tau, kappa, alpha, delta"),
                )
            })
    }
}

/// Optional CSV columns after the fixed four.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputColumn {
    KClosedForm,
    Welfare,
    WelfareBenchmark,
    C2Margin,
    Iterations,
    Tau,
}

impl OutputColumn {
    pub const ALL: [OutputColumn; 6] = [
        OutputColumn::KClosedForm,
        OutputColumn::Welfare,
        OutputColumn::WelfareBenchmark,
        OutputColumn::C2Margin,
        OutputColumn::Iterations,
        OutputColumn::Tau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutputColumn::KClosedForm => "k_closed_form",
            OutputColumn::Welfare => "welfare",
            OutputColumn::WelfareBenchmark => "welfare_benchmark",
            OutputColumn::C2Margin => "c2_margin",
            OutputColumn::Iterations => "iterations",
            OutputColumn::Tau => "tau",
        }
    }
}

impl FromStr for OutputColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OutputColumn::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = OutputColumn::ALL.iter().map(|c| c.name()).collect();
                Error::invalid(
                    "outputs",
                    format!("`{s}` is not one of {}", names.join(", ")),
                )
            })
    }
}

pub const FIXED_COLUMNS: [&str; 3] = ["k_equilibrium", "k_benchmark", "welfare_gap"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub outputs: Vec<OutputColumn>,
}

impl SweepSpec {
    pub fn parse(text: &str, unsafe_params: bool) -> Result<Self> {
        SweepSpec::from_pairs(&parse_key_values(text)?, unsafe_params)
    }

    pub fn from_pairs(pairs: &[KeyValue], unsafe_params: bool) -> Result<Self> {
        let lookup = |key: &str| pairs.iter().rev().find(|kv| kv.key == key);
        let parameter: SweepParameter = lookup("sweep")
            .ok_or_else(|| Error::invalid("sweep", "is required"))?
            .value
            .parse()?;
        let grid = lookup("grid")
            .ok_or_else(|| Error::invalid("grid", "is required"))?
            .value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid("grid", format!("`{s}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if grid.is_empty() {
            return Err(Error::invalid("grid", "must list at least one value"));
        }
        let mut outputs = match lookup("outputs") {
            Some(kv) => kv
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<OutputColumn>>>()?,
            None => Vec::new(),
        };
        // A tau sweep already leads with the tau column.
        if parameter == SweepParameter::Tau {
            outputs.retain(|c| *c != OutputColumn::Tau);
        }
        let mut seen = Vec::new();
        outputs.retain(|c| {
            let fresh = !seen.contains(c);
            seen.push(*c);
            fresh
        });

        let mut scenario_pairs: Vec<KeyValue> = pairs
            .iter()
            .filter(|kv| !matches!(kv.key.as_str(), "sweep" | "grid" | "outputs"))
            .cloned()
            .collect();
        // The swept parameter may be left out of the base.
        let name = parameter.name();
        let present = scenario_pairs.iter().any(|kv| kv.key == name)
            || (parameter == SweepParameter::Tau
                && scenario_pairs.iter().any(|kv| kv.key == "var_eps"));
        if !present {
            scenario_pairs.push(KeyValue {
                key: name.to_string(),
                value: grid[0].to_string(),
                line: 0,
            });
        }
        let base = Scenario::from_pairs(&scenario_pairs, unsafe_params)?;
        let spec = SweepSpec {
            base,
            parameter,
            grid,
            outputs,
        };
        spec.scenarios()?;
        Ok(spec)
    }

    /// One scenario per grid value; fails on the first invalid value.
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        self.grid
            .iter()
            .map(|&v| self.parameter.apply(&self.base, v))
            .collect()
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec![self.parameter.name()];
        h.extend(FIXED_COLUMNS);
        h.extend(self.outputs.iter().map(|c| c.name()));
        h
    }

    /// Solves every grid point (in parallel) and returns rows in grid order.
    pub fn run(&self, config: &SolverConfig) -> Result<Vec<Vec<f64>>> {
        let scenarios = self.scenarios()?;
        scenarios
            .par_iter()
            .zip(self.grid.par_iter())
            .map(|(s, &v)| self.row(s, v, config))
            .collect()
    }

    fn row(&self, scenario: &Scenario, value: f64, config: &SolverConfig) -> Result<Vec<f64>> {
        let report = solve_extrapolated(scenario, &LinearStrategy::pure(0.0, 0.0), config)?;
        let mut row = vec![
            value,
            report.strategy.slope,
            report.benchmark_strategy.slope,
            report.welfare_gap(),
        ];
        for c in &self.outputs {
            row.push(match c {
                OutputColumn::KClosedForm if scenario.has_subjective_override() => f64::NAN,
                OutputColumn::KClosedForm => closed_form_strategy(scenario)
                    .map(|s| s.slope)
                    .unwrap_or(f64::NAN),
                OutputColumn::Welfare => report.welfare,
                OutputColumn::WelfareBenchmark => report.welfare_benchmark,
                OutputColumn::C2Margin => report.c2_margin,
                OutputColumn::Iterations => report.iterations as f64,
                OutputColumn::Tau => scenario.tau(),
            });
        }
        Ok(row)
    }

    /// Header plus rows, comma-separated with LF line endings.
    pub fn to_csv(&self, rows: &[Vec<f64>]) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|&v| format_number(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}
