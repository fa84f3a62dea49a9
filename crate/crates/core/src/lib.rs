//! Query-aware Age-of-Information scheduling.
//!
//! A sensor with a token bucket sends status updates over an erasure channel
//! to an edge node that is queried periodically. The crate builds the
//! truncated MDP of that system, solves it under the permanent-query (PQ) and
//! query-aware (QAPA) costs, replays the resulting policies by Monte Carlo
//! simulation and reduces the trajectories to AoI / QAoI statistics.

pub mod error;
pub mod experiment;
pub mod mdp;
pub mod metrics;
pub mod sim;
pub mod solver;
pub mod table;

pub use error::{Error, ErrorKind, Result};
pub use mdp::{Action, Mdp, ModelParams, Objective, State, StateSpace, TransitionEntry};
pub use metrics::{MetricsReport, ReplicationStats};
pub use sim::{SimConfig, TrajectoryRecord};
pub use solver::{Policy, Solution, SolverConfig, ValueFunction};
