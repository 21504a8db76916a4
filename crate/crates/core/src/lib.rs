//! Deterministic virtual-time simulation of asynchronous distributed SGD.
//!
//! The crate is split into four layers:
//!
//! - [`timeline`]: the virtual-clock event engine that turns worker compute
//!   profiles into a reproducible stream of gradient completions.
//! - [`problems`]: finite-sum objectives with stochastic oracles and exact
//!   (or bounded) smoothness constants.
//! - [`algorithms`]: server state machines for Ringleader ASGD and the
//!   baselines (Malenia SGD, its parameter-free variant, IA²SGD and naive
//!   minibatch SGD), plus the theory-driven stepsize and horizon formulas.
//! - [`audit`]: an independent verification layer that replays traces and
//!   checks delay, timing, variance and convergence properties.
//!
//! [`trace`] holds the record types shared by all of them and the CSV trace
//! format.

pub mod algorithms;
pub mod audit;
pub mod error;
pub mod numeric;
pub mod problems;
pub mod timeline;
pub mod trace;

pub use algorithms::{
    predicted_iterations, simulate, theory_stepsize, Algorithm, ComplexityMode, RunOptions,
    StoppingRule,
};
pub use error::{Result, SimError};
pub use problems::{Problem, SigmaSq, SmoothnessConstants};
pub use timeline::{ComputeModel, PowerProfile, StopRule, VirtualTime, WorkerProfile};
pub use trace::{Disposition, EventLogEntry, IterationRecord, RunTrace};

/// Dense vector type used for iterates and gradients.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix type used by the quadratic and softmax problems.
pub type Matrix = nalgebra::DMatrix<f64>;
