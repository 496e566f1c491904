//! Simulation and inference for repeated indirect (non-demolition and
//! near-non-demolition) quantum measurements.
//!
//! The crate samples measurement protocols by the generalized Born rule,
//! evolves conditional states through outcome-indexed completely positive
//! maps, estimates the emergent fact by relative-entropy hypothesis testing,
//! and provides the statistical machinery (large-deviation certificates,
//! error-probability bounds, purification and jump-process diagnostics) to
//! verify the underlying limit theorems numerically at desk scale.
//!
//! Module map:
//!
//! - [`linalg`] — dense complex linear algebra, validated states and
//!   projector families
//! - [`channels`] — non-demolition models, per-step dynamics, perturbations
//!   and their constants
//! - [`trajectories`] — Born-rule sampling, exact protocol measures,
//!   frequencies and CLT diagnostics
//! - [`inference`] — relative entropy, the fact estimator, error
//!   probabilities, purification analysis
//! - [`jumps`] — measurement-cycle simulation, jump trajectories, Markov
//!   limit comparison
//! - [`modelfile`] — JSON model documents and report serialization
//!
//! Monte-Carlo batches run data-parallel over rayon when the default
//! `parallel` feature is enabled; disabling it yields a sequential build
//! with bit-identical outputs.

pub mod channels;
pub mod exec;
pub mod inference;
pub mod jumps;
pub mod linalg;
pub mod modelfile;
pub mod rng;
pub mod trajectories;

pub use channels::{
    AssumptionConstants, CycleConfig, KrausFamily, NonDemolitionModel, OutcomeAlphabet,
    OutcomeMap, StepDynamics,
};
pub use linalg::{CMatrix, DensityMatrix, ProjectorFamily, SpectralDecomposition};
pub use trajectories::{FrequencyTable, Protocol, TrajectoryRecord};
