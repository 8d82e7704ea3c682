//! Branching Brownian motion laboratory.
//!
//! Exact event-driven simulation of binary branching Brownian motion, the
//! closed-form quantities governing its upper moderate deviations, and
//! Monte Carlo estimators for `P(M_t > m_t + x)`:
//!
//! * [`analytic`]: centering `m_t`, deviation function `gamma_t(x)`, straight
//!   barriers, ballot densities and their bounds, Girsanov weights, tail
//!   envelopes.
//! * [`bridge`]: brute-force Brownian bridge oracles with exact inter-knot
//!   crossing probabilities.
//! * [`sim`]: the skeleton-tree simulator and its path functionals.
//! * [`estimators`]: direct tail estimation, empirical tail curves of the
//!   maximum, the hybrid first-moment estimator and the limiting constant.
//! * [`diagnostics`]: conditioned structural checks and many-to-few
//!   moment identities.

pub mod analytic;
pub mod bridge;
pub mod diagnostics;
mod error;
pub mod estimators;
pub mod io;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod stats;

pub use analytic::{BallotParams, DeviationQuery, Line, TailEnvelope};
pub use diagnostics::{ConditionedStats, FunctionalSpec, MomentReport};
pub use error::{Error, Result};
pub use estimators::{GridSpec, StderrMode, TailCurve};
pub use rng::Replicas;
pub use sim::{SimConfig, SkeletonTree};
pub use stats::{Estimate, Method};
