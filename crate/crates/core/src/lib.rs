//! Inverse elastoplastic shape fitting on tetrahedral meshes.
//!
//! Given a template tet mesh and sparse constraints (attachments,
//! landmarks, closest-point markers), find a smooth per-tet plastic
//! deformation field whose elastic equilibrium meets the constraints.

pub mod equilibrium;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod material;
pub mod optimizer;
pub mod singular_linalg;
pub mod sparse;
pub mod strain_laplacian;
pub mod tetmesh;
pub mod validation;

pub use error::{Error, Result};
pub use geometry::Vec3;
pub use material::{MaterialParams, PlasticField};
pub use tetmesh::{MaterialPoint, SurfacePoint, TetMesh};
