//! The truncated scheduling MDP.
//!
//! A state is the triple (age, slots until the next query, tokens in the
//! bucket). Age is clamped to `max_age`, the token count to
//! `bucket_capacity`, and the query countdown wraps from 0 back to
//! `query_period - 1`. States are addressed by a dense age-major index so
//! solver arrays, policy files and test fixtures line up.

use std::fmt;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scenario constants for one MDP instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Slots between consecutive queries.
    pub query_period: usize,
    /// Packet erasure probability of the channel.
    pub erasure_prob: f64,
    /// Per-slot token generation probability.
    pub token_rate: f64,
    /// Age truncation bound.
    pub max_age: usize,
    /// Token bucket size.
    pub bucket_capacity: usize,
    /// Discount factor of the cost objective.
    pub discount: f64,
}

impl ModelParams {
    pub const DEFAULT_BUCKET_CAPACITY: usize = 10;
    pub const DEFAULT_DISCOUNT: f64 = 0.75;
    pub const DEFAULT_AGE_FACTOR: usize = 100;

    /// Parameters with the default truncation (`max_age = 100 * query_period`,
    /// `bucket_capacity = 10`) and discount 0.75. Not validated.
    pub fn new(query_period: usize, erasure_prob: f64, token_rate: f64) -> Self {
        Self {
            query_period,
            erasure_prob,
            token_rate,
            max_age: query_period.saturating_mul(Self::DEFAULT_AGE_FACTOR),
            bucket_capacity: Self::DEFAULT_BUCKET_CAPACITY,
            discount: Self::DEFAULT_DISCOUNT,
        }
    }

    pub fn with_max_age(mut self, max_age: usize) -> Self {
        self.max_age = max_age;
        self
    }

    pub fn with_bucket_capacity(mut self, bucket_capacity: usize) -> Self {
        self.bucket_capacity = bucket_capacity;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    /// Probability that a transmitted packet gets through.
    pub fn success_prob(&self) -> f64 {
        1.0 - self.erasure_prob
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!(
                    "{name} must lie in [0, 1], got {p}"
                )))
            }
        };
        unit("erasure probability", self.erasure_prob)?;
        unit("token rate", self.token_rate)?;
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidParams(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if self.query_period == 0 {
            return Err(Error::InvalidParams(
                "query period must be at least 1".into(),
            ));
        }
        if self.max_age < self.query_period {
            return Err(Error::InvalidParams(format!(
                "max age {} is below the query period {}",
                self.max_age, self.query_period
            )));
        }
        if self.bucket_capacity == 0 {
            return Err(Error::InvalidParams(
                "bucket capacity must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Validates the parameters and builds the matching state space.
    pub fn space(&self) -> Result<StateSpace> {
        self.validate()?;
        StateSpace::new(self.max_age, self.query_period, self.bucket_capacity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub age: usize,
    pub slots_to_query: usize,
    pub tokens: usize,
}

impl State {
    pub const fn new(age: usize, slots_to_query: usize, tokens: usize) -> Self {
        Self {
            age,
            slots_to_query,
            tokens,
        }
    }

    /// The state one slot later, given what happened in this slot.
    ///
    /// Shared by the transition kernel and the simulator so both apply the
    /// same clamping and wraparound.
    pub fn advance(
        self,
        action: Action,
        delivered: bool,
        token_generated: bool,
        space: &StateSpace,
    ) -> State {
        debug_assert!(!delivered || action == Action::Transmit);
        let age = if delivered {
            1
        } else {
            (self.age + 1).min(space.max_age)
        };
        let slots_to_query = if self.slots_to_query >= 1 {
            self.slots_to_query - 1
        } else {
            space.query_period - 1
        };
        let tokens = (self.tokens + usize::from(token_generated) - action.spent())
            .min(space.bucket_capacity);
        State {
            age,
            slots_to_query,
            tokens,
        }
    }

    pub fn is_query_slot(&self) -> bool {
        self.slots_to_query == 0
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(age={}, sigma={}, tokens={})",
            self.age, self.slots_to_query, self.tokens
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Silent = 0,
    Transmit = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Silent, Action::Transmit];

    fn spent(self) -> usize {
        self as usize
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Action> {
        match v {
            0 => Some(Action::Silent),
            1 => Some(Action::Transmit),
            _ => None,
        }
    }
}

/// Which cost the solver minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Permanent query: the age is charged in every slot.
    Pq,
    /// Query-aware: the age is charged only on entering a query slot.
    Qapa,
}

impl Objective {
    pub const ALL: [Objective; 2] = [Objective::Pq, Objective::Qapa];

    pub fn cost(self, next_state: &State) -> f64 {
        match self {
            Objective::Pq => cost_pq(next_state),
            Objective::Qapa => cost_qapa(next_state),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Pq => "pq",
            Objective::Qapa => "qapa",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pq" => Ok(Objective::Pq),
            "qapa" => Ok(Objective::Qapa),
            other => Err(Error::Config(format!(
                "unknown objective {other:?} (expected pq or qapa)"
            ))),
        }
    }
}

/// Dimensions of the truncated state space and the dense indexing over it.
///
/// `index = ((age - 1) * query_period + slots_to_query) * (bucket_capacity + 1) + tokens`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub max_age: usize,
    pub query_period: usize,
    pub bucket_capacity: usize,
}

impl StateSpace {
    pub fn new(max_age: usize, query_period: usize, bucket_capacity: usize) -> Result<Self> {
        if max_age == 0 || query_period == 0 || bucket_capacity == 0 {
            return Err(Error::InvalidParams(format!(
                "state space dimensions must be positive (max_age={max_age}, query_period={query_period}, bucket_capacity={bucket_capacity})"
            )));
        }
        let too_large = || Error::StateSpaceTooLarge {
            max_age,
            query_period,
            buckets: bucket_capacity.saturating_add(1),
        };
        let buckets = bucket_capacity.checked_add(1).ok_or_else(too_large)?;
        max_age
            .checked_mul(query_period)
            .and_then(|n| n.checked_mul(buckets))
            // Probabilities and values live in parallel arrays, keep headroom.
            .filter(|&n| n <= isize::MAX as usize / 16)
            .ok_or_else(too_large)?;
        Ok(Self {
            max_age,
            query_period,
            bucket_capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.max_age * self.query_period * (self.bucket_capacity + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: &State) -> bool {
        (1..=self.max_age).contains(&s.age)
            && s.slots_to_query < self.query_period
            && s.tokens <= self.bucket_capacity
    }

    #[inline]
    pub fn index(&self, s: &State) -> usize {
        debug_assert!(self.contains(s), "{s} outside {self:?}");
        ((s.age - 1) * self.query_period + s.slots_to_query) * (self.bucket_capacity + 1) + s.tokens
    }

    #[inline]
    pub fn state(&self, index: usize) -> State {
        debug_assert!(index < self.len());
        let buckets = self.bucket_capacity + 1;
        let tokens = index % buckets;
        let rest = index / buckets;
        State {
            age: rest / self.query_period + 1,
            slots_to_query: rest % self.query_period,
            tokens,
        }
    }

    /// All states in dense-index order.
    pub fn iter(&self) -> States {
        States {
            space: *self,
            next: Some(State::new(1, 0, 0)),
        }
    }

    /// The state a trajectory starts in: fresh update, a full period to the
    /// first query, empty bucket.
    pub fn initial_state(&self) -> State {
        State::new(1, self.query_period - 1, 0)
    }
}

/// Dense-order iterator over a [`StateSpace`], stepping the tuple directly
/// instead of decoding every index.
#[derive(Debug, Clone)]
pub struct States {
    space: StateSpace,
    next: Option<State>,
}

impl Iterator for States {
    type Item = State;

    fn next(&mut self) -> Option<State> {
        let current = self.next?;
        let mut s = current;
        self.next = if s.tokens < self.space.bucket_capacity {
            s.tokens += 1;
            Some(s)
        } else if s.slots_to_query + 1 < self.space.query_period {
            s.tokens = 0;
            s.slots_to_query += 1;
            Some(s)
        } else if s.age < self.space.max_age {
            s.tokens = 0;
            s.slots_to_query = 0;
            s.age += 1;
            Some(s)
        } else {
            None
        };
        Some(current)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionEntry {
    pub next_state: State,
    pub probability: f64,
}

/// Up to two age outcomes times two token outcomes.
pub type Successors = ArrayVec<TransitionEntry, 4>;

/// A validated parameter set together with its state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mdp {
    params: ModelParams,
    space: StateSpace,
}

impl Mdp {
    pub fn new(params: ModelParams) -> Result<Self> {
        let space = params.space()?;
        Ok(Self { params, space })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Non-zero transition probabilities out of `(s, a)`, with coinciding
    /// next states merged.
    pub fn successors(&self, s: &State, a: Action) -> Result<Successors> {
        if !is_feasible(s, a) {
            return Err(Error::InfeasibleAction(*s));
        }
        Ok(self.successors_unchecked(s, a))
    }

    #[inline]
    pub(crate) fn successors_unchecked(&self, s: &State, a: Action) -> Successors {
        let delivery = match a {
            Action::Silent => 0.0,
            Action::Transmit => self.params.success_prob(),
        };
        let generation = self.params.token_rate;
        let mut out = Successors::new();
        for (delivered, p_age) in [(true, delivery), (false, 1.0 - delivery)] {
            if p_age <= 0.0 {
                continue;
            }
            for (generated, p_token) in [(true, generation), (false, 1.0 - generation)] {
                if p_token <= 0.0 {
                    continue;
                }
                let next_state = s.advance(a, delivered, generated, &self.space);
                let probability = p_age * p_token;
                match out.iter_mut().find(|e| e.next_state == next_state) {
                    Some(e) => e.probability += probability,
                    None => out.push(TransitionEntry {
                        next_state,
                        probability,
                    }),
                }
            }
        }
        out
    }
}

/// Every state of the truncated model in dense-index order.
pub fn enumerate_states(params: &ModelParams) -> Result<Vec<State>> {
    Ok(params.space()?.iter().collect())
}

pub fn is_feasible(s: &State, a: Action) -> bool {
    a == Action::Silent || s.tokens >= 1
}

/// Silent is always allowed; Transmit needs at least one token.
pub fn feasible_actions(s: &State) -> &'static [Action] {
    if s.tokens == 0 {
        &Action::ALL[..1]
    } else {
        &Action::ALL
    }
}

/// Transition kernel for a single `(state, action)` pair.
pub fn successors(s: &State, a: Action, params: &ModelParams) -> Result<Successors> {
    let mdp = Mdp::new(*params)?;
    if !mdp.space.contains(s) {
        return Err(Error::InvalidParams(format!(
            "state {s} outside the truncated state space"
        )));
    }
    mdp.successors(s, a)
}

/// Permanent-query cost: the age of the next state.
pub fn cost_pq(next_state: &State) -> f64 {
    next_state.age as f64
}

/// Query-aware cost: the age of the next state if it is a query slot, else 0.
pub fn cost_qapa(next_state: &State) -> f64 {
    if next_state.is_query_slot() {
        next_state.age as f64
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut entries: Successors) -> Vec<(State, f64)> {
        entries.sort_by_key(|e| e.next_state);
        entries
            .into_iter()
            .map(|e| (e.next_state, e.probability))
            .collect()
    }

    fn assert_kernel(actual: Successors, expected: &[(State, f64)]) {
        let actual = sorted(actual);
        let mut expected = expected.to_vec();
        expected.sort_by_key(|e| e.0);
        assert_eq!(actual.len(), expected.len(), "{actual:?} vs {expected:?}");
        for ((s, p), (es, ep)) in actual.iter().zip(&expected) {
            assert_eq!(s, es);
            assert!((p - ep).abs() < 1e-12, "{s}: {p} vs {ep}");
        }
    }

    #[test]
    fn state_counts() {
        let small = ModelParams::new(2, 0.5, 0.5)
            .with_max_age(3)
            .with_bucket_capacity(1);
        let states = enumerate_states(&small).unwrap();
        assert_eq!(states.len(), 12);
        assert_eq!(states[0], State::new(1, 0, 0));
        assert_eq!(*states.last().unwrap(), State::new(3, 1, 1));

        let full = ModelParams::new(40, 0.2, 0.2);
        assert_eq!(full.max_age, 4000);
        assert_eq!(full.space().unwrap().len(), 1_760_000);
    }

    #[test]
    fn dense_index_roundtrip() {
        let space = StateSpace::new(7, 5, 3).unwrap();
        for (i, s) in space.iter().enumerate() {
            assert!(space.contains(&s));
            assert_eq!(space.index(&s), i);
        }
    }

    #[test]
    fn oversized_space_is_rejected() {
        let err = StateSpace::new(usize::MAX / 2, 4, 10).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { .. }));
    }

    #[test]
    fn param_validation() {
        assert!(ModelParams::new(0, 0.1, 0.1).validate().is_err());
        assert!(ModelParams::new(5, -0.1, 0.1).validate().is_err());
        assert!(ModelParams::new(5, 0.1, 1.5).validate().is_err());
        assert!(ModelParams::new(5, 0.1, 0.1)
            .with_discount(1.0)
            .validate()
            .is_err());
        assert!(ModelParams::new(5, 0.1, 0.1)
            .with_max_age(4)
            .validate()
            .is_err());
        assert!(ModelParams::new(5, 0.1, 0.1)
            .with_bucket_capacity(0)
            .validate()
            .is_err());
        assert!(ModelParams::new(5, 1.0, 0.0)
            .with_discount(0.0)
            .validate()
            .is_ok());
    }

    #[test]
    fn feasibility() {
        assert_eq!(feasible_actions(&State::new(5, 3, 0)), &[Action::Silent]);
        assert_eq!(
            feasible_actions(&State::new(5, 3, 1)),
            &[Action::Silent, Action::Transmit]
        );
        assert_eq!(
            feasible_actions(&State::new(1, 0, 10)),
            &[Action::Silent, Action::Transmit]
        );
    }

    #[test]
    fn silent_kernel() {
        let params = ModelParams::new(10, 0.3, 0.2);
        let k = successors(&State::new(5, 3, 1), Action::Silent, &params).unwrap();
        assert_kernel(k, &[(State::new(6, 2, 2), 0.2), (State::new(6, 2, 1), 0.8)]);
    }

    #[test]
    fn transmit_kernel() {
        let params = ModelParams::new(10, 0.2, 0.0);
        let k = successors(&State::new(5, 3, 1), Action::Transmit, &params).unwrap();
        assert_kernel(k, &[(State::new(1, 2, 0), 0.8), (State::new(6, 2, 0), 0.2)]);
    }

    #[test]
    fn saturation_and_wraparound() {
        let params = ModelParams::new(4, 0.5, 0.0).with_max_age(8);
        let k = successors(&State::new(8, 0, 0), Action::Silent, &params).unwrap();
        assert_kernel(k, &[(State::new(8, 3, 0), 1.0)]);
    }

    #[test]
    fn full_bucket_discards_tokens() {
        let params = ModelParams::new(4, 0.5, 0.5).with_bucket_capacity(2);
        let k = successors(&State::new(3, 2, 2), Action::Silent, &params).unwrap();
        assert_kernel(k, &[(State::new(4, 1, 2), 1.0)]);
    }

    #[test]
    fn error_free_channel_merges_nothing_but_drops_zero_branches() {
        let params = ModelParams::new(4, 0.0, 1.0);
        let k = successors(&State::new(3, 2, 1), Action::Transmit, &params).unwrap();
        assert_kernel(k, &[(State::new(1, 1, 1), 1.0)]);
    }

    #[test]
    fn transmit_needs_a_token() {
        let params = ModelParams::new(4, 0.5, 0.5);
        let err = successors(&State::new(3, 2, 0), Action::Transmit, &params).unwrap_err();
        assert!(matches!(err, Error::InfeasibleAction(_)));
    }

    #[test]
    fn costs() {
        assert_eq!(cost_pq(&State::new(7, 4, 2)), 7.0);
        assert_eq!(cost_pq(&State::new(1, 0, 0)), 1.0);
        assert_eq!(cost_pq(&State::new(400, 1, 10)), 400.0);
        assert_eq!(cost_qapa(&State::new(12, 0, 3)), 12.0);
        assert_eq!(cost_qapa(&State::new(12, 5, 3)), 0.0);
        assert_eq!(cost_qapa(&State::new(1, 0, 0)), 1.0);
    }

    #[test]
    fn single_period_costs_coincide() {
        let params = ModelParams::new(1, 0.3, 0.3).with_max_age(20);
        for s in enumerate_states(&params).unwrap() {
            assert_eq!(cost_pq(&s), cost_qapa(&s));
        }
    }
}
