//! Fitting a DAG to an objective Gaussian joint and reading off the decision
//! maker's belief.
//!
//! Fitting regresses each node on its DAG parents under the objective joint
//! (for a Gaussian this is population OLS of a recursive system). Composing
//! the fitted factors forward in topological order gives the subjective joint
//! `p_G`, and conditioning `x` on `(theta, a)` inside `p_G` gives
//! `E_G(x | theta, a)`. The same path covers every subjective DAG: whatever
//! `y` depends on in the DAG is the measure it gets integrated against.

use nalgebra::{DMatrix, DVector};

use crate::dag::{Dag, ACTION, THETA, X};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianJoint, LinearConditional, SingularConditioning};
use crate::scm::Scenario;

/// One fitted conditional per DAG node, aligned with `dag.nodes()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    dag: Dag,
    factors: Vec<LinearConditional>,
}

impl FittedModel {
    /// Assembles a model from explicit factors. Each factor must target its
    /// node and condition on exactly the node's parents, in parent order.
    pub fn new(dag: Dag, factors: Vec<LinearConditional>) -> Result<Self> {
        if factors.len() != dag.nodes().len() {
            return Err(Error::DimensionMismatch(format!(
                "{} factors for {} nodes",
                factors.len(),
                dag.nodes().len()
            )));
        }
        for (node, factor) in dag.nodes().iter().zip(&factors) {
            if &factor.target != node {
                return Err(Error::invalid(
                    node.as_str(),
                    format!("factor targets `{}`", factor.target),
                ));
            }
            let parents = dag.parents(node)?;
            if factor.given != parents {
                return Err(Error::invalid(
                    node.as_str(),
                    format!(
                        "factor conditions on {:?}, parents are {:?}",
                        factor.given, parents
                    ),
                ));
            }
            if factor.coefficients.len() != factor.given.len() || !(factor.residual_variance >= 0.0)
            {
                return Err(Error::invalid(node.as_str(), "malformed factor"));
            }
        }
        Ok(FittedModel { dag, factors })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn factors(&self) -> &[LinearConditional] {
        &self.factors
    }

    pub fn factor(&self, node: &str) -> Option<&LinearConditional> {
        self.factors.iter().find(|f| f.target == node)
    }

    /// Nodes whose conditioning block was numerically singular.
    pub fn warnings(&self) -> Vec<(String, SingularConditioning)> {
        self.factors
            .iter()
            .filter_map(|f| f.warning.map(|w| (f.target.clone(), w)))
            .collect()
    }
}

/// Fits `dag` to `joint`: each node's factor is its conditional on its
/// parents; root nodes get their marginal.
pub fn fit(joint: &GaussianJoint, dag: &Dag) -> Result<FittedModel> {
    let factors = dag
        .nodes()
        .iter()
        .map(|node| {
            let parents = dag.parents(node)?;
            joint.condition(node, &parents)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedModel {
        dag: dag.clone(),
        factors,
    })
}

/// The Gaussian joint generated by the fitted factors, over the DAG's nodes
/// in declared order.
///
/// Built forward in topological order as a square-root factor: each node
/// loads on its parents' shocks through its coefficients, plus one fresh
/// shock of its own scaled by the residual standard deviation.
pub fn compose(fitted: &FittedModel) -> Result<GaussianJoint> {
    let dag = &fitted.dag;
    let n = dag.nodes().len();
    let index = |name: &str| {
        dag.nodes()
            .iter()
            .position(|v| v == name)
            .expect("node of dag")
    };
    let mut mean = DVector::zeros(n);
    let mut load = DMatrix::zeros(n, n);

    for node in dag.topological_order() {
        let v = index(node);
        let factor = &fitted.factors[v];
        let mut m = factor.intercept;
        for (p, c) in factor.given.iter().zip(&factor.coefficients) {
            let p = index(p);
            m += c * mean[p];
            for s in 0..n {
                load[(v, s)] += c * load[(p, s)];
            }
        }
        mean[v] = m;
        load[(v, v)] = factor.residual_variance.sqrt();
    }
    GaussianJoint::from_factor(dag.nodes().to_vec(), mean, load)
}

/// The decision maker's belief: the composed subjective joint and the
/// conditional of `x` given `(theta, a)` under it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectiveBelief {
    pub fitted: FittedModel,
    pub joint: GaussianJoint,
    pub conditional_x: LinearConditional,
}

impl SubjectiveBelief {
    /// Coefficient on `theta` in `E_G(x | theta, a)`.
    pub fn theta_coefficient(&self) -> f64 {
        self.conditional_x.coefficients[0]
    }

    /// Coefficient on `a` in `E_G(x | theta, a)`.
    pub fn action_coefficient(&self) -> f64 {
        self.conditional_x.coefficients[1]
    }

    pub fn intercept(&self) -> f64 {
        self.conditional_x.intercept
    }
}

/// Fits the scenario's subjective DAG to `joint` and conditions `x` on
/// `(theta, a)` in the composed belief.
pub fn subjective_conditional(
    scenario: &Scenario,
    joint: &GaussianJoint,
) -> Result<SubjectiveBelief> {
    belief_under(&scenario.subjective_dag(), joint)
}

/// Same as [`subjective_conditional`] for an arbitrary DAG over the
/// canonical variables.
pub fn belief_under(dag: &Dag, joint: &GaussianJoint) -> Result<SubjectiveBelief> {
    let fitted = fit(joint, dag)?;
    let composed = compose(&fitted)?;
    let conditional_x = composed.condition(X, &[THETA, ACTION])?;
    Ok(SubjectiveBelief {
        fitted,
        joint: composed,
        conditional_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{CANONICAL_ORDER, Y};
    use crate::scm::{LinearStrategy, NoiseVariances};
    use approx::assert_abs_diff_eq;

    fn main_joint(
        gamma: f64,
        lambda: f64,
        noise: NoiseVariances,
        k: f64,
    ) -> (Scenario, GaussianJoint) {
        let s = Scenario::main(gamma, lambda, noise).unwrap();
        let p = s.objective_joint(&LinearStrategy::new(0.0, k, 1e-2).unwrap());
        (s, p)
    }

    #[test]
    fn fitting_true_dag_recovers_structural_equations() {
        let (s, p) = main_joint(0.3, 0.8, NoiseVariances::new(1.0, 0.5, 2.0), 0.6);
        let m = fit(&p, &s.true_dag()).unwrap();
        let x = m.factor(X).unwrap();
        assert_eq!(x.given, vec![THETA, ACTION]);
        assert_abs_diff_eq!(x.coefficients[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(x.coefficients[1], -0.3, epsilon = 1e-10);
    }

    #[test]
    fn fitting_subjective_dag_under_main() {
        let (s, p) = main_joint(0.5, 0.5, NoiseVariances::unit(), 0.5);
        let m = fit(&p, &s.subjective_dag()).unwrap();
        let y = m.factor(Y).unwrap();
        assert!(y.given.is_empty());
        assert_abs_diff_eq!(y.intercept, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            y.residual_variance,
            p.variance_of(Y).unwrap(),
            epsilon = 1e-15
        );
        let x = m.factor(X).unwrap();
        assert_eq!(x.given, vec![THETA, ACTION, Y]);
        // beta = 1/2: (1 - beta, beta(lambda + gamma) - gamma, beta)
        assert_abs_diff_eq!(x.coefficients[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(x.coefficients[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x.coefficients[2], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn independent_joint_fits_zero_coefficients() {
        let p = GaussianJoint::from_parts(
            &CANONICAL_ORDER,
            &[0.0; 4],
            &[
                1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 4.0,
            ],
        )
        .unwrap();
        let s = Scenario::reverse_only(0.5, 0.5, NoiseVariances::unit()).unwrap();
        for dag in [s.true_dag(), s.subjective_dag()] {
            let m = fit(&p, &dag).unwrap();
            assert!(m
                .factors()
                .iter()
                .flat_map(|f| &f.coefficients)
                .all(|&c| c.abs() < 1e-14));
        }
    }

    #[test]
    fn compose_true_fit_is_identity() {
        let (s, p) = main_joint(0.4, 0.2, NoiseVariances::new(1.0, 0.7, 1.3), 0.9);
        let q = compose(&fit(&p, &s.true_dag()).unwrap()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(
                    q.covariance()[(i, j)],
                    p.covariance()[(i, j)],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn composed_main_belief_makes_y_exogenous() {
        let (s, p) = main_joint(0.5, 0.2, NoiseVariances::new(1.0, 2.0, 1.0), 0.7);
        let b = subjective_conditional(&s, &p).unwrap();
        assert_eq!(b.joint.covariance_between(Y, THETA).unwrap(), 0.0);
        assert_eq!(b.joint.covariance_between(Y, ACTION).unwrap(), 0.0);
    }

    #[test]
    fn prop1_conditional_and_degenerate_limits() {
        let (s, p) = main_joint(0.5, 0.5, NoiseVariances::unit(), 0.3);
        let b = subjective_conditional(&s, &p).unwrap();
        assert_abs_diff_eq!(b.theta_coefficient(), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(b.action_coefficient(), 0.0, epsilon = 1e-9);

        let (s, p) = main_joint(0.6, 0.3, NoiseVariances::new(1.0, 0.0, 1.0), 0.3);
        let b = subjective_conditional(&s, &p).unwrap();
        assert_abs_diff_eq!(b.theta_coefficient(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.action_coefficient(), -0.6, epsilon = 1e-9);

        let s = Scenario::exogeneity_only(0.3, 0.6, 0.4, NoiseVariances::unit()).unwrap();
        let p = s.objective_joint(&LinearStrategy::new(0.0, 0.5, 1e-2).unwrap());
        let b = subjective_conditional(&s, &p).unwrap();
        assert_abs_diff_eq!(b.theta_coefficient(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b.action_coefficient(), -0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(b.intercept(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn factor_validation() {
        let (s, p) = main_joint(0.5, 0.5, NoiseVariances::unit(), 0.3);
        let m = fit(&p, &s.subjective_dag()).unwrap();
        let mut factors = m.factors().to_vec();
        assert!(FittedModel::new(m.dag().clone(), factors.clone()).is_ok());
        factors.swap(0, 1);
        assert!(FittedModel::new(m.dag().clone(), factors).is_err());
    }
}
