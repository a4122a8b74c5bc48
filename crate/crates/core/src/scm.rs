//! Structural causal models for the three supported specifications.
//!
//! * `Main`: `x = theta - gamma a + eps`, `y = x - lambda a + eta`.
//! * `ExogeneityOnly`: `y = delta a + eta`, `x = theta - kappa a + alpha y + eps`.
//! * `ReverseOnly`: same equations as `Main`, but the decision maker keeps the
//!   `a -> y` link in their subjective model.
//!
//! The objective joint over `(theta, a, x, y)` is computed symbolically as an
//! affine image of the independent shocks `(theta, nu, eps, eta)`, where `nu`
//! is the strategy's tremble.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dag::{Dag, ACTION, CANONICAL_ORDER, THETA, X, Y};
use crate::error::{Error, Result};
use crate::gaussian::{signal_extraction_weight, GaussianJoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Main,
    ExogeneityOnly,
    ReverseOnly,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Main, Family::ExogeneityOnly, Family::ReverseOnly];

    pub fn name(self) -> &'static str {
        match self {
            Family::Main => "main",
            Family::ExogeneityOnly => "exogeneity-only",
            Family::ReverseOnly => "reverse-only",
        }
    }

    /// Structural parameters used by this family, in validation order.
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            Family::Main | Family::ReverseOnly => &["gamma", "lambda"],
            Family::ExogeneityOnly => &["kappa", "alpha", "delta"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "main" => Ok(Family::Main),
            "exogeneity-only" | "exogeneityonly" | "exogeneity" => Ok(Family::ExogeneityOnly),
            "reverse-only" | "reverseonly" | "reverse" => Ok(Family::ReverseOnly),
            other => Err(Error::invalid(
                "family",
                format!("`{other}` is not one of main, exogeneity-only, reverse-only"),
            )),
        }
    }
}

/// Family-specific structural constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Structure {
    Main { gamma: f64, lambda: f64 },
    ExogeneityOnly { kappa: f64, alpha: f64, delta: f64 },
    ReverseOnly { gamma: f64, lambda: f64 },
}

impl Structure {
    pub fn family(&self) -> Family {
        match self {
            Structure::Main { .. } => Family::Main,
            Structure::ExogeneityOnly { .. } => Family::ExogeneityOnly,
            Structure::ReverseOnly { .. } => Family::ReverseOnly,
        }
    }

    /// Named parameter values in `Family::parameter_names` order.
    pub fn parameters(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Structure::Main { gamma, lambda } | Structure::ReverseOnly { gamma, lambda } => {
                vec![("gamma", gamma), ("lambda", lambda)]
            }
            Structure::ExogeneityOnly {
                kappa,
                alpha,
                delta,
            } => {
                vec![("kappa", kappa), ("alpha", alpha), ("delta", delta)]
            }
        }
    }

    fn from_parameters(family: Family, get: impl Fn(&str) -> f64) -> Structure {
        match family {
            Family::Main => Structure::Main {
                gamma: get("gamma"),
                lambda: get("lambda"),
            },
            Family::ReverseOnly => Structure::ReverseOnly {
                gamma: get("gamma"),
                lambda: get("lambda"),
            },
            Family::ExogeneityOnly => Structure::ExogeneityOnly {
                kappa: get("kappa"),
                alpha: get("alpha"),
                delta: get("delta"),
            },
        }
    }
}

/// Variances of the exogenous shocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseVariances {
    pub var_theta: f64,
    pub var_eps: f64,
    pub var_eta: f64,
}

impl NoiseVariances {
    pub fn new(var_theta: f64, var_eps: f64, var_eta: f64) -> Self {
        NoiseVariances {
            var_theta,
            var_eps,
            var_eta,
        }
    }

    pub fn unit() -> Self {
        NoiseVariances::new(1.0, 1.0, 1.0)
    }

    pub fn scaled(self, factor: f64) -> Self {
        NoiseVariances::new(
            self.var_theta * factor,
            self.var_eps * factor,
            self.var_eta * factor,
        )
    }
}

impl Default for NoiseVariances {
    fn default() -> Self {
        NoiseVariances::unit()
    }
}

pub const VARIANCE_KEYS: [&str; 3] = ["var_theta", "var_eps", "var_eta"];

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    structure: Structure,
    noise: NoiseVariances,
    unsafe_params: bool,
    subjective_override: Option<Dag>,
}

impl Scenario {
    /// Validated scenario. Structural ranges are strict; see
    /// [`Scenario::new_unchecked`] for the escape hatch.
    pub fn new(structure: Structure, noise: NoiseVariances) -> Result<Self> {
        validate_ranges(&structure)?;
        validate_noise(&noise)?;
        Ok(Scenario {
            structure,
            noise,
            unsafe_params: false,
            subjective_override: None,
        })
    }

    /// Skips range checks on structural parameters (values must still be
    /// finite and variances nonnegative). The scenario is tagged as unsafe.
    pub fn new_unchecked(structure: Structure, noise: NoiseVariances) -> Result<Self> {
        for (name, v) in structure.parameters() {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        validate_noise(&noise)?;
        Ok(Scenario {
            structure,
            noise,
            unsafe_params: true,
            subjective_override: None,
        })
    }

    pub fn main(gamma: f64, lambda: f64, noise: NoiseVariances) -> Result<Self> {
        Scenario::new(Structure::Main { gamma, lambda }, noise)
    }

    pub fn exogeneity_only(
        kappa: f64,
        alpha: f64,
        delta: f64,
        noise: NoiseVariances,
    ) -> Result<Self> {
        Scenario::new(
            Structure::ExogeneityOnly {
                kappa,
                alpha,
                delta,
            },
            noise,
        )
    }

    pub fn reverse_only(gamma: f64, lambda: f64, noise: NoiseVariances) -> Result<Self> {
        Scenario::new(Structure::ReverseOnly { gamma, lambda }, noise)
    }

    /// Replaces the family's subjective DAG. The DAG must be over exactly
    /// the canonical variables.
    pub fn with_subjective_dag(mut self, dag: Dag) -> Result<Self> {
        for v in CANONICAL_ORDER {
            if !dag.contains(v) {
                return Err(Error::UnknownNode(v.to_string()));
            }
        }
        if let Some(extra) = dag
            .nodes()
            .iter()
            .find(|n| !CANONICAL_ORDER.contains(&n.as_str()))
        {
            return Err(Error::UnknownNode(extra.clone()));
        }
        self.subjective_override = Some(dag);
        Ok(self)
    }

    pub fn with_structure(&self, structure: Structure) -> Result<Self> {
        self.rebuild(structure, self.noise)
    }

    pub fn with_noise(&self, noise: NoiseVariances) -> Result<Self> {
        self.rebuild(self.structure, noise)
    }

    fn rebuild(&self, structure: Structure, noise: NoiseVariances) -> Result<Self> {
        let mut s = if self.unsafe_params {
            Scenario::new_unchecked(structure, noise)?
        } else {
            Scenario::new(structure, noise)?
        };
        s.subjective_override = self.subjective_override.clone();
        Ok(s)
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn family(&self) -> Family {
        self.structure.family()
    }

    pub fn noise(&self) -> NoiseVariances {
        self.noise
    }

    pub fn var_theta(&self) -> f64 {
        self.noise.var_theta
    }

    pub fn var_eps(&self) -> f64 {
        self.noise.var_eps
    }

    pub fn var_eta(&self) -> f64 {
        self.noise.var_eta
    }

    pub fn is_unsafe(&self) -> bool {
        self.unsafe_params
    }

    pub fn has_subjective_override(&self) -> bool {
        self.subjective_override.is_some()
    }

    /// `var_eps / var_eta`; infinite when `var_eta = 0`.
    pub fn tau(&self) -> f64 {
        if self.noise.var_eta == 0.0 {
            if self.noise.var_eps == 0.0 {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            self.noise.var_eps / self.noise.var_eta
        }
    }

    /// `tau / (1 + tau)`.
    pub fn beta(&self) -> Result<f64> {
        signal_extraction_weight(self.noise.var_eps, self.noise.var_eta)
    }

    /// True when the action has no direct effect on `x`.
    pub fn is_pure_prediction(&self) -> bool {
        match self.structure {
            Structure::Main { gamma, .. } | Structure::ReverseOnly { gamma, .. } => gamma == 0.0,
            Structure::ExogeneityOnly { .. } => false,
        }
    }

    pub fn true_dag(&self) -> Dag {
        let edges: &[(&str, &str)] = match self.family() {
            Family::Main | Family::ReverseOnly => &[
                (THETA, ACTION),
                (THETA, X),
                (ACTION, X),
                (X, Y),
                (ACTION, Y),
            ],
            Family::ExogeneityOnly => &[
                (THETA, ACTION),
                (THETA, X),
                (ACTION, X),
                (Y, X),
                (ACTION, Y),
            ],
        };
        Dag::from_names(&CANONICAL_ORDER, edges).expect("static DAG is valid")
    }

    /// The decision maker's DAG: the override if one is set, otherwise the
    /// family default.
    pub fn subjective_dag(&self) -> Dag {
        if let Some(dag) = &self.subjective_override {
            return dag.clone();
        }
        let edges: &[(&str, &str)] = match self.family() {
            Family::Main | Family::ExogeneityOnly => {
                &[(THETA, ACTION), (THETA, X), (ACTION, X), (Y, X)]
            }
            Family::ReverseOnly => &[
                (THETA, ACTION),
                (THETA, X),
                (ACTION, X),
                (Y, X),
                (ACTION, Y),
            ],
        };
        Dag::from_names(&CANONICAL_ORDER, edges).expect("static DAG is valid")
    }

    /// Parses the flat key-value scenario format.
    pub fn parse(text: &str, unsafe_params: bool) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        Scenario::from_pairs(&pairs, unsafe_params)
    }

    /// Builds a scenario from `(key, value, line)` triples. Every key must be
    /// a scenario key; parameters that the family does not use are rejected.
    /// `tau` may stand in for `var_eps` (as `tau * var_eta`). Omitted
    /// variances default to 1.
    pub fn from_pairs(pairs: &[KeyValue], unsafe_params: bool) -> Result<Self> {
        let lookup = |key: &str| pairs.iter().rev().find(|kv| kv.key == key);
        let family: Family = lookup("family")
            .ok_or_else(|| Error::invalid("family", "is required"))?
            .value
            .parse()?;
        let used = family.parameter_names();
        for kv in pairs {
            let k = kv.key.as_str();
            if k == "family" || k == "tau" || VARIANCE_KEYS.contains(&k) || used.contains(&k) {
                continue;
            }
            if ALL_STRUCTURAL_KEYS.contains(&k) {
                return Err(Error::invalid(
                    k,
                    format!("is not a parameter of family {family}"),
                ));
            }
            return Err(Error::parse(kv.line, format!("unknown key `{k}`")));
        }
        let number = |key: &str| -> Result<Option<f64>> {
            lookup(key)
                .map(|kv| {
                    kv.value
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(key, format!("`{}` is not a number", kv.value)))
                })
                .transpose()
        };
        let mut values = Vec::new();
        for &name in used {
            let v = number(name)?.ok_or_else(|| Error::invalid(name, "is required"))?;
            if !unsafe_params {
                check_range(family, name, v)?;
            }
            values.push((name, v));
        }
        let structure = Structure::from_parameters(family, |n| {
            values
                .iter()
                .find(|(k, _)| *k == n)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        });
        let var_eta = number("var_eta")?.unwrap_or(1.0);
        let var_eps = match (number("tau")?, number("var_eps")?) {
            (Some(_), Some(_)) => return Err(Error::invalid("tau", "conflicts with var_eps")),
            (Some(tau), None) => {
                if !(tau >= 0.0) && !unsafe_params {
                    return Err(Error::invalid("tau", "must be nonnegative"));
                }
                tau * var_eta
            }
            (None, v) => v.unwrap_or(1.0),
        };
        let noise = NoiseVariances::new(number("var_theta")?.unwrap_or(1.0), var_eps, var_eta);
        if unsafe_params {
            Scenario::new_unchecked(structure, noise)
        } else {
            Scenario::new(structure, noise)
        }
    }

    /// Key-value rendering accepted by [`Scenario::parse`].
    pub fn to_key_values(&self) -> String {
        let mut out = format!("family = {}\n", self.family());
        for (k, v) in self.structure.parameters() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!(
            "var_theta = {}\nvar_eps = {}\nvar_eta = {}\n",
            self.noise.var_theta, self.noise.var_eps, self.noise.var_eta
        ));
        out
    }

    /// Named presets. The numbers are illustrative defaults chosen for this
    /// tool, not calibrated values.
    pub fn preset(name: &str) -> Result<Self> {
        let unit = NoiseVariances::unit();
        match name {
            "parenting" => Scenario::main(0.5, 0.3, unit),
            "quantity-setting" => Scenario::main(0.8, 0.6, NoiseVariances::new(1.0, 2.0, 1.0)),
            "phillips" => Scenario::main(0.0, 0.5, unit),
            "public-health" => Scenario::exogeneity_only(0.5, 0.5, 0.5, unit),
            "adolescent" => Scenario::reverse_only(0.5, 0.5, unit),
            other => Err(Error::invalid(
                "preset",
                format!("`{other}` is not one of {}", PRESETS.join(", ")),
            )),
        }
    }

    /// Mean and covariance of `(theta, a, x, y)` under `strategy`.
    pub fn objective_joint(&self, strategy: &LinearStrategy) -> GaussianJoint {
        // Rows: canonical variables. Columns: shocks (theta, nu, eps, eta).
        let mut load = [[0.0f64; 4]; 4];
        let mut mean = [0.0f64; 4];
        let (th, a, x, y) = (0, 1, 2, 3);

        load[th] = [1.0, 0.0, 0.0, 0.0];
        mean[th] = 0.0;
        load[a] = add(scale(load[th], strategy.slope), [0.0, 1.0, 0.0, 0.0]);
        mean[a] = strategy.intercept + strategy.slope * mean[th];

        match self.structure {
            Structure::Main { gamma, lambda } | Structure::ReverseOnly { gamma, lambda } => {
                load[x] = add(add(load[th], scale(load[a], -gamma)), [0.0, 0.0, 1.0, 0.0]);
                mean[x] = mean[th] - gamma * mean[a];
                load[y] = add(add(load[x], scale(load[a], -lambda)), [0.0, 0.0, 0.0, 1.0]);
                mean[y] = mean[x] - lambda * mean[a];
            }
            Structure::ExogeneityOnly {
                kappa,
                alpha,
                delta,
            } => {
                load[y] = add(scale(load[a], delta), [0.0, 0.0, 0.0, 1.0]);
                mean[y] = delta * mean[a];
                load[x] = add(
                    add(add(load[th], scale(load[a], -kappa)), scale(load[y], alpha)),
                    [0.0, 0.0, 1.0, 0.0],
                );
                mean[x] = mean[th] - kappa * mean[a] + alpha * mean[y];
            }
        }

        let shock_var = [
            self.noise.var_theta,
            strategy.tremble_variance,
            self.noise.var_eps,
            self.noise.var_eta,
        ];
        let factor = DMatrix::from_fn(4, 4, |i, s| load[i][s] * shock_var[s].sqrt());
        GaussianJoint::from_factor(
            CANONICAL_ORDER.iter().map(|s| s.to_string()).collect(),
            DVector::from_column_slice(&mean),
            factor,
        )
        .expect("finite loadings")
    }
}

fn scale(v: [f64; 4], c: f64) -> [f64; 4] {
    v.map(|e| e * c)
}

fn add(u: [f64; 4], v: [f64; 4]) -> [f64; 4] {
    [u[0] + v[0], u[1] + v[1], u[2] + v[2], u[3] + v[3]]
}

pub const PRESETS: [&str; 5] = [
    "parenting",
    "quantity-setting",
    "phillips",
    "public-health",
    "adolescent",
];

const ALL_STRUCTURAL_KEYS: [&str; 5] = ["gamma", "lambda", "kappa", "alpha", "delta"];

fn check_range(family: Family, name: &str, v: f64) -> Result<()> {
    match family {
        Family::Main | Family::ReverseOnly => {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, "out of [0,1]"));
            }
        }
        Family::ExogeneityOnly => {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(name, "out of (0,1)"));
            }
        }
    }
    Ok(())
}

fn validate_ranges(structure: &Structure) -> Result<()> {
    let family = structure.family();
    for (name, v) in structure.parameters() {
        check_range(family, name, v)?;
    }
    Ok(())
}

fn validate_noise(noise: &NoiseVariances) -> Result<()> {
    if !(noise.var_theta > 0.0 && noise.var_theta.is_finite()) {
        return Err(Error::invalid("var_theta", "must be positive"));
    }
    for (name, v) in [("var_eps", noise.var_eps), ("var_eta", noise.var_eta)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be nonnegative"));
        }
    }
    Ok(())
}

/// The decision maker's rule `a = intercept + slope * theta + nu`,
/// `nu ~ N(0, tremble_variance)` independent of everything else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearStrategy {
    pub intercept: f64,
    pub slope: f64,
    pub tremble_variance: f64,
}

impl LinearStrategy {
    pub fn new(intercept: f64, slope: f64, tremble_variance: f64) -> Result<Self> {
        if !intercept.is_finite() {
            return Err(Error::invalid("intercept", "must be finite"));
        }
        if !slope.is_finite() {
            return Err(Error::invalid("slope", "must be finite"));
        }
        if !(tremble_variance >= 0.0 && tremble_variance.is_finite()) {
            return Err(Error::invalid("tremble_variance", "must be nonnegative"));
        }
        Ok(LinearStrategy {
            intercept,
            slope,
            tremble_variance,
        })
    }

    pub fn pure(intercept: f64, slope: f64) -> Self {
        LinearStrategy {
            intercept,
            slope,
            tremble_variance: 0.0,
        }
    }

    pub fn with_tremble(self, tremble_variance: f64) -> Self {
        LinearStrategy {
            tremble_variance,
            ..self
        }
    }
}

/// Default relative tremble when conditioning on both `theta` and `a`.
pub const DEFAULT_TREMBLE: f64 = 1e-6;

/// One `key = value` entry from a scenario or sweep file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyValue {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` (or `key=value`) lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<KeyValue>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
        let key = k.trim().to_ascii_lowercase().replace('-', "_");
        if key.is_empty() {
            return Err(Error::parse(i + 1, "empty key"));
        }
        out.push(KeyValue {
            key,
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}
