//! Augmented scalar-auxiliary-variable (SAV) finite element solver for the
//! stochastic Allen–Cahn equation with multiplicative noise on the periodic
//! unit torus, together with the Monte Carlo machinery used to measure strong
//! convergence rates against a fine reference discretization.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: structured periodic simplicial meshes and exact prolongation
//!   between nested dyadic levels.
//! * [`fem`]: P1 operators (lumped mass, stiffness, discrete Laplacian,
//!   nodal interpolation, discrete norms).
//! * [`linalg`]: compressed sparse rows and a Jacobi preconditioned CG.
//! * [`potential`]: double-well potential, discrete energies, noise
//!   coefficient ρ.
//! * [`noise`]: truncated Q-Wiener increments with counter-based seeding.
//! * [`sav`]: the augmented SAV time step, a dense verification solve and
//!   the path runner.
//! * [`mc`]: ensemble driver, strong error norms, EOC tables and the
//!   auxiliary-variable tracking study.
//! * [`config`]: sectioned `key = value` run configuration.
//! * [`check`]: small dense-oracle and invariant checks.

pub mod check;
pub mod config;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mc;
pub mod mesh;
pub mod noise;
pub mod potential;
pub mod sav;

pub use error::{Error, Result};
pub use fem::{FieldVector, LumpedMass, StiffnessMatrix};
pub use linalg::{CsrMatrix, Preconditioner, SolverOptions};
pub use mesh::TorusMesh;
pub use noise::{ModeIndex, ModeSpec, NoiseModel, NoisePath};
pub use potential::{PotentialParams, RhoKind};
pub use sav::{SavState, StepCoefficients};
