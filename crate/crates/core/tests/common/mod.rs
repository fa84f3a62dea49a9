//! Test-only oracles. Nothing here calls into the kernel or the solver: the
//! transition matrix is rebuilt from the model equations with its own state
//! enumeration, and policies are evaluated by a dense linear solve.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qaoi::{Action, ModelParams, Objective, State};

/// Dense description of one MDP instance.
pub struct DenseModel {
    pub params: ModelParams,
    pub states: Vec<State>,
    /// `transition[a][(i, j)]`, infeasible rows left at zero.
    pub transition: [DMatrix<f64>; 2],
}

fn oracle_index(p: &ModelParams, age: usize, sigma: usize, tokens: usize) -> usize {
    ((age - 1) * p.query_period + sigma) * (p.bucket_capacity + 1) + tokens
}

impl DenseModel {
    pub fn new(params: ModelParams) -> Self {
        let mut states = Vec::new();
        for age in 1..=params.max_age {
            for sigma in 0..params.query_period {
                for tokens in 0..=params.bucket_capacity {
                    states.push(State::new(age, sigma, tokens));
                }
            }
        }
        let n = states.len();
        let mut transition = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        let ps = 1.0 - params.erasure_prob;
        for (i, s) in states.iter().enumerate() {
            for a in [0usize, 1] {
                if a == 1 && s.tokens == 0 {
                    continue;
                }
                for (success, p_channel) in [(true, a as f64 * ps), (false, 1.0 - a as f64 * ps)] {
                    for (generated, p_token) in
                        [(1usize, params.token_rate), (0, 1.0 - params.token_rate)]
                    {
                        let p = p_channel * p_token;
                        if p == 0.0 {
                            continue;
                        }
                        let age = if success {
                            1
                        } else {
                            (s.age + 1).min(params.max_age)
                        };
                        let sigma =
                            (s.slots_to_query + params.query_period - 1) % params.query_period;
                        let tokens = (s.tokens + generated - a).min(params.bucket_capacity);
                        transition[a][(i, oracle_index(&params, age, sigma, tokens))] += p;
                    }
                }
            }
        }
        Self {
            params,
            states,
            transition,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    fn cost(objective: Objective, s: &State) -> f64 {
        match objective {
            Objective::Pq => s.age as f64,
            Objective::Qapa if s.slots_to_query == 0 => s.age as f64,
            Objective::Qapa => 0.0,
        }
    }

    /// Solves `(I - discount * P_pi) v = c_pi` for a deterministic policy.
    pub fn evaluate(&self, actions: &[Action], objective: Objective) -> Vec<f64> {
        let n = self.len();
        let mut p_pi = DMatrix::zeros(n, n);
        for (i, a) in actions.iter().enumerate() {
            p_pi.set_row(i, &self.transition[*a as usize].row(i));
        }
        let costs = DVector::from_iterator(n, self.states.iter().map(|s| Self::cost(objective, s)));
        let c_pi = &p_pi * costs;
        let system = DMatrix::identity(n, n) - p_pi * self.params.discount;
        let v = system
            .lu()
            .solve(&c_pi)
            .expect("I - discount * P is nonsingular");
        v.iter().copied().collect()
    }

    /// Every deterministic feasible policy, as dense action vectors.
    pub fn all_policies(&self) -> Vec<Vec<Action>> {
        let free: Vec<usize> = (0..self.len())
            .filter(|&i| self.states[i].tokens > 0)
            .collect();
        assert!(free.len() <= 16, "enumeration too large");
        (0u32..1 << free.len())
            .map(|mask| {
                let mut actions = vec![Action::Silent; self.len()];
                for (bit, &i) in free.iter().enumerate() {
                    if mask >> bit & 1 == 1 {
                        actions[i] = Action::Transmit;
                    }
                }
                actions
            })
            .collect()
    }

    /// Pointwise-optimal values and the optimal policy with the fewest
    /// transmissions, by exhaustive enumeration.
    pub fn brute_force_optimum(&self, objective: Objective) -> (Vec<Action>, Vec<f64>) {
        let evaluated: Vec<_> = self
            .all_policies()
            .into_iter()
            .map(|p| {
                let v = self.evaluate(&p, objective);
                (p, v)
            })
            .collect();
        let n = self.len();
        let best: Vec<f64> = (0..n)
            .map(|i| {
                evaluated
                    .iter()
                    .map(|(_, v)| v[i])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let (policy, values) = evaluated
            .into_iter()
            .filter(|(_, v)| v.iter().zip(&best).all(|(a, b)| (a - b).abs() < 1e-9))
            .min_by_key(|(p, _)| p.iter().filter(|&&a| a == Action::Transmit).count())
            .expect("some policy attains the pointwise optimum");
        (policy, values)
    }
}

/// The 12-state instance used throughout the oracle tests.
pub fn twelve_state() -> ModelParams {
    ModelParams::new(2, 0.5, 0.5)
        .with_max_age(3)
        .with_bucket_capacity(1)
        .with_discount(0.75)
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
