//! Discounted-cost policy iteration over the scheduling MDP, plus value
//! iteration as an independent cross-check.
//!
//! Evaluation runs Gauss-Seidel sweeps in dense-index order starting from
//! `v = 0` every round. It stops once the Jacobi Bellman residual is below
//! `eval_tolerance * (1 - discount)`, which bounds the sup-norm distance to
//! the exact fixed point by `eval_tolerance`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{is_feasible, Action, Mdp, Objective, State, StateSpace};

/// Improvement only switches away from the incumbent action when the
/// alternative is better by more than this many evaluation tolerances.
pub const IMPROVEMENT_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sup-norm stopping threshold for iterative evaluation.
    pub eval_tolerance: f64,
    pub max_eval_sweeps: usize,
    pub max_improvement_rounds: usize,
    pub objective: Objective,
}

impl SolverConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            eval_tolerance: 1e-9,
            max_eval_sweeps: 100_000,
            max_improvement_rounds: 1_000,
            objective,
        }
    }

    pub fn with_tolerance(mut self, eval_tolerance: f64) -> Self {
        self.eval_tolerance = eval_tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eval_tolerance > 0.0 && self.eval_tolerance.is_finite()) {
            return Err(Error::InvalidSolverConfig(format!(
                "evaluation tolerance must be positive, got {}",
                self.eval_tolerance
            )));
        }
        if self.max_eval_sweeps == 0 || self.max_improvement_rounds == 0 {
            return Err(Error::InvalidSolverConfig(
                "sweep and round budgets must be positive".into(),
            ));
        }
        Ok(())
    }

    fn improvement_margin(&self) -> f64 {
        IMPROVEMENT_MARGIN * self.eval_tolerance
    }

    fn residual_target(&self, discount: f64) -> f64 {
        self.eval_tolerance * (1.0 - discount)
    }
}

/// Deterministic policy: one action per state, in dense-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    space: StateSpace,
    actions: Vec<Action>,
}

impl Policy {
    /// The policy that never transmits.
    pub fn all_silent(space: StateSpace) -> Self {
        Self {
            space,
            actions: vec![Action::Silent; space.len()],
        }
    }

    /// Builds a policy from dense-ordered actions, rejecting wrong lengths and
    /// transmissions from an empty bucket.
    pub fn from_actions(space: StateSpace, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != space.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} actions for a space of {} states",
                actions.len(),
                space.len()
            )));
        }
        for (s, &a) in space.iter().zip(&actions) {
            if !is_feasible(&s, a) {
                return Err(Error::InfeasibleAction(s));
            }
        }
        Ok(Self { space, actions })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    #[inline]
    pub fn action(&self, s: &State) -> Action {
        self.actions[self.space.index(s)]
    }

    #[inline]
    pub fn action_at(&self, index: usize) -> Action {
        self.actions[index]
    }

    pub fn transmit_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|&&a| a == Action::Transmit)
            .count()
    }
}

/// Discounted cost-to-go per state, with the diagnostics of the run that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    space: StateSpace,
    values: Vec<f64>,
    /// Sup-norm Bellman residual at termination.
    pub residual: f64,
    /// Sweeps used.
    pub sweeps: usize,
}

impl ValueFunction {
    pub fn from_values(space: StateSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a space of {} states",
                values.len(),
                space.len()
            )));
        }
        Ok(Self {
            space,
            values,
            residual: 0.0,
            sweeps: 0,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, s: &State) -> f64 {
        self.values[self.space.index(s)]
    }

    /// Largest absolute difference to another value function on the same space.
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        assert_eq!(self.space, other.space);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Output of [`policy_iteration`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub policy: Policy,
    pub values: ValueFunction,
    /// Evaluate/improve rounds until no state changed its action.
    pub rounds: usize,
}

/// `q(s, a) = sum_s' p(s'|s,a) (c(s') + discount * v(s'))`.
#[inline]
pub fn q_value(mdp: &Mdp, objective: Objective, s: &State, a: Action, values: &[f64]) -> f64 {
    let discount = mdp.params().discount;
    let space = mdp.space();
    mdp.successors_unchecked(s, a)
        .iter()
        .map(|e| {
            e.probability
                * (objective.cost(&e.next_state) + discount * values[space.index(&e.next_state)])
        })
        .sum()
}

fn check_space(mdp: &Mdp, space: &StateSpace, what: &str) -> Result<()> {
    if mdp.space() != space {
        return Err(Error::DimensionMismatch(format!(
            "{what} built for {space:?}, model has {:?}",
            mdp.space()
        )));
    }
    Ok(())
}

/// Jacobi Bellman residual of `values` under `policy`.
fn policy_residual(mdp: &Mdp, policy: &Policy, objective: Objective, values: &[f64]) -> f64 {
    mdp.space()
        .iter()
        .zip(values)
        .zip(policy.actions())
        .map(|((s, &v), &a)| (q_value(mdp, objective, &s, a, values) - v).abs())
        .fold(0.0, f64::max)
}

/// Evaluates a fixed policy by successive approximation from `v = 0`.
pub fn evaluate_policy(policy: &Policy, mdp: &Mdp, config: &SolverConfig) -> Result<ValueFunction> {
    config.validate()?;
    check_space(mdp, policy.space(), "policy")?;
    evaluate_from(policy, mdp, config, vec![0.0; mdp.space().len()])
}

/// Gauss-Seidel evaluation started from `values`. States are swept from the
/// highest index down, so the age + 1 successor of a silent slot is already
/// updated when it is read.
fn evaluate_from(
    policy: &Policy,
    mdp: &Mdp,
    config: &SolverConfig,
    mut values: Vec<f64>,
) -> Result<ValueFunction> {
    let space = *mdp.space();
    let objective = config.objective;
    let tol = config.residual_target(mdp.params().discount);
    let mut delta = f64::INFINITY;
    for sweep in 1..=config.max_eval_sweeps {
        delta = 0.0;
        for i in (0..space.len()).rev() {
            let updated = q_value(
                mdp,
                objective,
                &space.state(i),
                policy.action_at(i),
                &values,
            );
            delta = f64::max(delta, (updated - values[i]).abs());
            values[i] = updated;
        }
        if delta <= tol {
            let residual = policy_residual(mdp, policy, objective, &values);
            if residual <= tol {
                return Ok(ValueFunction {
                    space,
                    values,
                    residual,
                    sweeps: sweep,
                });
            }
        }
    }
    Err(Error::EvaluationDiverged {
        sweeps: config.max_eval_sweeps,
        residual: delta,
    })
}

/// Greedy choice between the two actions of a state given the incumbent.
///
/// Transmit wins only when strictly cheaper; the incumbent is kept unless the
/// winner beats it by more than `margin`.
#[inline]
fn choose(
    mdp: &Mdp,
    objective: Objective,
    s: &State,
    incumbent: Action,
    values: &[f64],
    margin: f64,
) -> Action {
    if s.tokens == 0 {
        return Action::Silent;
    }
    let silent = q_value(mdp, objective, s, Action::Silent, values);
    let transmit = q_value(mdp, objective, s, Action::Transmit, values);
    let (best, best_q) = if transmit < silent {
        (Action::Transmit, transmit)
    } else {
        (Action::Silent, silent)
    };
    let incumbent_q = match incumbent {
        Action::Silent => silent,
        Action::Transmit => transmit,
    };
    if incumbent_q - best_q > margin {
        best
    } else {
        incumbent
    }
}

fn improve(
    previous: &Policy,
    v: &ValueFunction,
    mdp: &Mdp,
    config: &SolverConfig,
) -> (Policy, usize) {
    let margin = config.improvement_margin();
    let mut changed = 0;
    let actions = mdp
        .space()
        .iter()
        .zip(previous.actions())
        .map(|(s, &old)| {
            let a = choose(mdp, config.objective, &s, old, &v.values, margin);
            changed += usize::from(a != old);
            a
        })
        .collect();
    (
        Policy {
            space: *mdp.space(),
            actions,
        },
        changed,
    )
}

/// One greedy improvement step. Returns the improved policy and whether any
/// state's action changed relative to `previous`.
pub fn improve_policy(
    previous: &Policy,
    v: &ValueFunction,
    mdp: &Mdp,
    config: &SolverConfig,
) -> Result<(Policy, bool)> {
    config.validate()?;
    check_space(mdp, previous.space(), "policy")?;
    check_space(mdp, v.space(), "value function")?;
    if let Some(bad) = v.values.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidSolverConfig(format!(
            "value function contains {bad}"
        )));
    }
    let (policy, changed) = improve(previous, v, mdp, config);
    Ok((policy, changed > 0))
}

/// Howard policy iteration from the all-Silent policy.
pub fn policy_iteration(mdp: &Mdp, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    let mut policy = Policy::all_silent(*mdp.space());
    let mut start = vec![0.0; mdp.space().len()];
    let mut last_residual = f64::NAN;
    let mut last_changed = 0;
    for round in 1..=config.max_improvement_rounds {
        // Each round starts from the previous policy's values.
        let values = evaluate_from(&policy, mdp, config, start)?;
        last_residual = values.residual;
        let (next, changed) = improve(&policy, &values, mdp, config);
        if changed == 0 {
            return Ok(Solution {
                policy,
                values,
                rounds: round,
            });
        }
        last_changed = changed;
        policy = next;
        start = values.values;
    }
    Err(Error::PolicyIterationExhausted {
        rounds: config.max_improvement_rounds,
        changed: last_changed,
        residual: last_residual,
    })
}

/// Gauss-Seidel value iteration on the Bellman optimality operator.
pub fn value_iteration(mdp: &Mdp, config: &SolverConfig) -> Result<ValueFunction> {
    config.validate()?;
    let space = *mdp.space();
    let objective = config.objective;
    let tol = config.residual_target(mdp.params().discount);
    let optimal = |s: &State, values: &[f64]| {
        let silent = q_value(mdp, objective, s, Action::Silent, values);
        if s.tokens == 0 {
            silent
        } else {
            silent.min(q_value(mdp, objective, s, Action::Transmit, values))
        }
    };
    let mut values = vec![0.0; space.len()];
    let mut delta = f64::INFINITY;
    for sweep in 1..=config.max_eval_sweeps {
        delta = 0.0;
        for (i, s) in space.iter().enumerate() {
            let updated = optimal(&s, &values);
            delta = f64::max(delta, (updated - values[i]).abs());
            values[i] = updated;
        }
        if delta <= tol {
            let residual = space
                .iter()
                .zip(&values)
                .map(|(s, &v)| (optimal(&s, &values) - v).abs())
                .fold(0.0, f64::max);
            if residual <= tol {
                return Ok(ValueFunction {
                    space,
                    values,
                    residual,
                    sweeps: sweep,
                });
            }
        }
    }
    Err(Error::ValueIterationExhausted {
        sweeps: config.max_eval_sweeps,
        residual: delta,
    })
}

/// Greedy policy with respect to `v`; exact ties go to Silent.
pub fn greedy_policy(v: &ValueFunction, mdp: &Mdp, objective: Objective) -> Result<Policy> {
    check_space(mdp, v.space(), "value function")?;
    let actions = mdp
        .space()
        .iter()
        .map(|s| choose(mdp, objective, &s, Action::Silent, &v.values, 0.0))
        .collect();
    Ok(Policy {
        space: *mdp.space(),
        actions,
    })
}

/// `q(s, Silent) - q(s, Transmit)` for states with a token, `None` otherwise.
pub fn action_gap(mdp: &Mdp, objective: Objective, s: &State, values: &[f64]) -> Option<f64> {
    (s.tokens > 0).then(|| {
        q_value(mdp, objective, s, Action::Silent, values)
            - q_value(mdp, objective, s, Action::Transmit, values)
    })
}
