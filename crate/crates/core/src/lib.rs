//! Approximate dynamic programming for a stochastic transport problem, with
//! the value function approximation embedded in a mixed-integer decision model.
//!
//! Each epoch the agent's action maximizes `R(S, x) + rho * V(S, x)`, where `V`
//! is either linear in a feature vector or a ReLU network over it. The
//! features are affine in the action variables, so both forms fit inside a
//! MILP: the linear one directly, the network through one binary indicator
//! and big-M constraints per unstable neuron. The MILP is solved by the
//! in-crate bounded-variable simplex and branch-and-bound in [`solver`].
//!
//! Module map:
//!
//! - [`mdp`]: graph, states, actions, rewards, transitions.
//! - [`features`]: feature vector and its affine form in the action variables.
//! - [`vfa`]: polynomial and neural approximations, updates, weight files.
//! - [`model`]: decision model construction and VFA embedding.
//! - [`solver`]: LP/MILP solver and independent solution checker.
//! - [`trainer`]: the learn-act loop, offline evaluation, experiment grids.
//! - [`oracle`]: exhaustive enumeration and exact value iteration for tiny instances.
//! - [`config`]: flat `key = value` experiment configuration.

pub mod config;
pub mod error;
pub mod features;
pub mod mdp;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod trainer;
pub mod vfa;

pub use error::{Error, Result};
pub use features::{FeatureBounds, FeatureSpec, FeatureVector};
pub use mdp::{Action, Graph, Instance, InstanceConfig, JobType, RewardParams, State};
pub use solver::{LpProblem, SolveResult, SolveStatus, SolverConfig};
pub use vfa::{NeuralVfa, PolyVfa, Vfa, VfaSpec};
