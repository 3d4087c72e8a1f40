//! Ground-truth generators and brute-force reference solvers.

pub mod dense;
pub mod derivatives;
pub mod one_d;
pub mod synthetic;

pub use dense::{dense_reference_step, DenseStep};
pub use derivatives::{check_energy_derivatives, check_polar_derivatives, BlockError};
pub use one_d::{solve_plastic_1d, solve_variational_1d, Plastic1DCase, Profile, Variational1DCase};
pub use synthetic::{make_synthetic, recover_and_score, FieldRecipe, RecoveryScore, SyntheticCase, SyntheticSpec};
