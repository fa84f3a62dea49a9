//! Monte Carlo replay of a fixed policy through the erasure channel, the token
//! process and the periodic query process.
//!
//! Slots are numbered from `t = 1`; the countdown starts at
//! `query_period - 1`, so the first query falls on `t = query_period` and a
//! slot is a query slot exactly when `t % query_period == 0`.
//!
//! Each trajectory owns one ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. Per slot it draws the channel outcome
//! (only when transmitting) and then the token outcome. A draw is the top 53
//! bits of `next_u64` scaled to `[0, 1)` and succeeds when below the event
//! probability.

use std::io::{self, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Mdp, State};
use crate::solver::Policy;

/// Name of the generator recorded in configs and manifests.
pub const GENERATOR: &str = "chacha8";

/// One simulated slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: u64,
    pub age: usize,
    pub slots_to_query: usize,
    pub tokens: usize,
    pub action: Action,
    /// The transmission of this slot got through; the age is 1 in the next slot.
    pub delivered: bool,
    pub is_query_slot: bool,
}

impl TrajectoryRecord {
    pub fn state(&self) -> State {
        State::new(self.age, self.slots_to_query, self.tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    /// Leading slots excluded from metrics.
    pub warmup: u64,
}

impl SimConfig {
    pub const WARMUP_PERIODS: u64 = 10;

    /// Config with the default warmup of ten query periods.
    pub fn new(horizon: u64, seed: u64, query_period: usize) -> Self {
        Self {
            horizon,
            seed,
            warmup: Self::WARMUP_PERIODS * query_period as u64,
        }
    }

    pub fn with_warmup(mut self, warmup: u64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidSimConfig("horizon must be positive".into()));
        }
        if self.horizon <= self.warmup {
            return Err(Error::InvalidSimConfig(format!(
                "horizon {} does not exceed warmup {}",
                self.horizon, self.warmup
            )));
        }
        Ok(())
    }

    /// The records that count towards metrics.
    pub fn measured<'a>(&self, records: &'a [TrajectoryRecord]) -> &'a [TrajectoryRecord] {
        let skip = usize::try_from(self.warmup)
            .unwrap_or(usize::MAX)
            .min(records.len());
        &records[skip..]
    }
}

struct SlotRng(ChaCha8Rng);

impl SlotRng {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    #[inline]
    fn bernoulli(&mut self, p: f64) -> bool {
        let u = (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u < p
    }
}

/// Runs one trajectory, handing every slot to `visit` in order.
pub fn run(
    policy: &Policy,
    mdp: &Mdp,
    config: &SimConfig,
    mut visit: impl FnMut(&TrajectoryRecord),
) -> Result<()> {
    config.validate()?;
    if policy.space() != mdp.space() {
        return Err(Error::DimensionMismatch(format!(
            "policy built for {:?}, simulation uses {:?}",
            policy.space(),
            mdp.space()
        )));
    }
    let space = *mdp.space();
    let success = mdp.params().success_prob();
    let token_rate = mdp.params().token_rate;
    let mut rng = SlotRng::new(config.seed);
    let mut state = space.initial_state();
    for t in 1..=config.horizon {
        let action = policy.action(&state);
        let delivered = action == Action::Transmit && rng.bernoulli(success);
        let generated = rng.bernoulli(token_rate);
        visit(&TrajectoryRecord {
            t,
            age: state.age,
            slots_to_query: state.slots_to_query,
            tokens: state.tokens,
            action,
            delivered,
            is_query_slot: state.is_query_slot(),
        });
        state = state.advance(action, delivered, generated, &space);
    }
    Ok(())
}

/// Runs one trajectory and collects every slot, warmup included.
pub fn simulate(policy: &Policy, mdp: &Mdp, config: &SimConfig) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::with_capacity(usize::try_from(config.horizon).unwrap_or(0).min(1 << 24));
    run(policy, mdp, config, |r| records.push(*r))?;
    Ok(records)
}

pub const TRAJECTORY_HEADER: &str = "t,age,sigma,tokens,action,delivered,is_query";

pub fn write_trajectory_row<W: Write>(out: &mut W, r: &TrajectoryRecord) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        r.t,
        r.age,
        r.slots_to_query,
        r.tokens,
        r.action.as_u8(),
        u8::from(r.delivered),
        u8::from(r.is_query_slot)
    )
}

pub fn write_trajectory_csv<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in records {
        write_trajectory_row(&mut out, r)?;
    }
    out.flush()
}
