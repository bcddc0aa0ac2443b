//! Continuous-time primal-dual solvers for
//!
//! ```text
//! minimize f(x)  subject to  C x - d <= 0
//! ```
//!
//! with `f` smooth and strongly convex. Two flows on the augmented
//! Lagrangian are provided: the primal-dual gradient flow (PDGD) and a
//! proportional-integral (PI) variant whose multiplier equation adds a
//! feedback term `k_p C x'`. Both are integrated with adaptive embedded
//! Runge-Kutta pairs.
//!
//! Alongside the solvers the crate carries rate-bound analysis, exact
//! enumeration oracles, problem generators and a seeded benchmark harness.

pub mod analysis;
pub mod bench;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod lagrangian;
pub mod oracle;
pub mod par;
pub mod problems;
pub mod types;

pub use dynamics::{kkt_residual, pdgd_field, pi_field, FlowKind, KktResidual};
pub use error::{Error, Result};
pub use integrator::{run, IntegratorSpec, RunOptions, RunResult, StopReason};
pub use types::{
    constraint_violation, ConstraintSet, GainConfig, HessianBounds, LinearObjective, Method, Objective, Problem,
    QuadraticForm, State, Trace, TraceSample,
};
