//! Auto-regressive neural network guided selected configuration interaction.
//!
//! The crate is organized bottom-up:
//!
//! * [`determinant`]: bit-packed occupation vectors and symmetry sectors.
//! * [`integrals`]: FCIDUMP ingestion and Slater–Condon matrix elements.
//! * [`eigensolver`]: sparse subspace Hamiltonians, lowest eigenpairs, exact references.
//! * [`arnn`]: masked-dense auto-regressive network with exact conditionals and gradients.
//! * [`trainer`]: maximum-likelihood (KL) training with ADAM.
//! * [`sampler`]: temperature-scaled prefix-tree sampling and basis selection.
//! * [`driver`]: the iterative selection loop.
//! * [`vmc_oracle`]: local-energy and reweighting identities used for validation.

pub mod arnn;
pub mod config;
pub mod determinant;
pub mod driver;
pub mod eigensolver;
mod error;
pub mod integrals;
pub mod rng;
pub mod sampler;
pub mod trainer;
pub mod vmc_oracle;

pub use arnn::{Activation, ArnnConfig, ArnnModel};
pub use determinant::{Block, Configuration, ExcitationOrder, SymmetrySector};
pub use driver::{IterationRecord, RunConfig, RunOutcome, RunStatus, SeedKind};
pub use eigensolver::{Eigenpair, SparseMatrix, SparseState};
pub use error::{Error, Result};
pub use integrals::{IntegralTable, MatrixElement};
pub use sampler::SampleBatch;
pub use trainer::{ProbabilityTable, TrainPlan, TrainingSet};

/// Chemical accuracy, 1 kcal/mol, in Hartree.
pub const CHEMICAL_ACCURACY: f64 = 1.6e-3;
