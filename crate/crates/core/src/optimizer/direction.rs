//! Gauss-Newton directions without forming the Jacobian.
//!
//! With `J = dx/ds` at equilibrium and `W` the diagonal of weights,
//! `Z = √W A J`, and the step minimizes
//! `γ/2 ‖L(s + Δs)‖² + ½ ‖r + Z Δs‖²`. Its normal matrix
//! `γL² + ZᵀZ = B + ẐᵀẐ` with `B = γL² − ΨΨᵀ` and `Ẑ = [Z; Ψᵀ]` is solved
//! by the Woodbury identity around the factored `B`.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::assembly::{evaluate_with_terms, weighted_residuals, weighted_selection};
use crate::equilibrium::{stiffness_nullspace, ElasticSystem, PointTerm};
use crate::error::{Error, Result};
use crate::material::{MaterialParams, PlasticField};
use crate::singular_linalg::{build_woodbury, KnownNullspaceMatrix};
use crate::sparse::{SparseLu, SparseMatrix};
use crate::strain_laplacian::BaseMatrix;
use crate::tetmesh::TetMesh;

/// Nullspace tolerance for the stiffness matrix of an unattached mesh. The
/// rotational modes are only exact at equilibrium, which holds to the
/// force tolerance.
pub const STIFFNESS_NULLSPACE_TOL: f64 = 1e-6;

/// Net-force Jacobian `∂f_net/∂x`, factored: regular for attached meshes,
/// with the six rigid modes for unattached ones (then `K⁺` is applied).
pub enum ForceJacobian {
    Regular(SparseLu),
    Singular(Box<KnownNullspaceMatrix>),
}

impl ForceJacobian {
    /// `(∂f_net/∂x)` factored at equilibrium `x`, negated to `K (+ K_a)`.
    pub fn factor(
        sys: &ElasticSystem,
        attachments: Option<&[PointTerm]>,
        x: &DVector<f64>,
        force_tol: f64,
    ) -> Result<Self> {
        let ev = match attachments {
            Some(a) => evaluate_with_terms(sys, a, x, true, false),
            None => sys.evaluate(x, true, false),
        };
        let residual = ev.gradient.norm();
        if residual > force_tol {
            return Err(Error::NotEquilibrium {
                residual,
                tolerance: force_tol,
            });
        }
        let k = ev.hessian.expect("hessian requested");
        Ok(match attachments {
            Some(_) => ForceJacobian::Regular(SparseLu::factor(&k)?),
            None => ForceJacobian::Singular(Box::new(KnownNullspaceMatrix::new(
                k,
                &stiffness_nullspace(x),
                STIFFNESS_NULLSPACE_TOL,
            )?)),
        })
    }

    /// `(K + K_a)⁻¹ B`, or `K⁺ B` on the unattached path.
    pub fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ForceJacobian::Regular(lu) => lu.solve_many(b),
            ForceJacobian::Singular(k) => k.solve_projected_many(b),
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            ForceJacobian::Regular(lu) => lu.solve(b),
            ForceJacobian::Singular(k) => k.solve_projected(b),
        }
    }
}

/// Linearization of the objective around an equilibrium.
pub struct Linearization {
    /// `∂²E/∂x∂s`, `3n × 6m`.
    pub mixed: SparseMatrix,
    pub jacobian: ForceJacobian,
    /// `Z = √W A J`, `3p × 6m`.
    pub z: DMatrix<f64>,
    /// `√W (A x + b)`.
    pub residual: DVector<f64>,
}

impl Linearization {
    pub fn new(
        mesh: &TetMesh,
        params: &MaterialParams,
        s: &PlasticField,
        attachments: Option<&[PointTerm]>,
        terms: &[PointTerm],
        x: &DVector<f64>,
        force_tol: f64,
    ) -> Result<Self> {
        let sys = ElasticSystem::new(mesh, params, s)?;
        let jacobian = ForceJacobian::factor(&sys, attachments, x, force_tol)?;
        let mixed = sys.mixed_hessian(x);
        let rhs = weighted_selection(terms, mesh.n_vertices()).transpose().to_dense();
        let u = jacobian.solve_many(&rhs);
        // Zᵀ = −H_xsᵀ (K + K_a)⁻¹ Aᵀ√W
        let z = -mixed.tr_mul_dense(&u).transpose();
        Ok(Self {
            mixed,
            jacobian,
            z,
            residual: weighted_residuals(terms, x),
        })
    }

    /// `J Δs = −(K + K_a)⁻¹ H_xs Δs`
    pub fn apply_jacobian(&self, ds: &DVector<f64>) -> DVector<f64> {
        -self.jacobian.solve(&self.mixed.mul_vec(ds))
    }

    /// `Zᵀ r`
    pub fn marker_gradient(&self) -> DVector<f64> {
        self.z.tr_mul(&self.residual)
    }
}

#[derive(Debug, Clone)]
pub struct Direction {
    pub ds: DVector<f64>,
    /// Predicted `Δx = J Δs`, a warm start for the line search.
    pub dx: DVector<f64>,
    /// Gradient of the Gauss-Newton model at `Δs = 0`.
    pub gradient: DVector<f64>,
}

/// Relative damping of constant field changes when `Z` is blind to them.
pub const CONSTANT_DAMPING: f64 = 1e-9;

/// `−(γL² + ZᵀZ + μΨΨᵀ)⁻¹ g`. The Ψ rows of `Ẑ` are scaled by `√(1 + μ)`
/// so that they cancel the shift in `B` and leave `μΨΨᵀ`.
fn solve_normal(lin: &Linearization, base: &BaseMatrix, gradient: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let psi = base.laplacian().nullspace();
    let rows = lin.z.nrows();
    let scale = (1.0 + mu).sqrt();
    let mut zhat = DMatrix::zeros(rows + psi.len(), lin.z.ncols());
    zhat.rows_mut(0, rows).copy_from(&lin.z);
    for (i, p) in psi.iter().enumerate() {
        zhat.row_mut(rows + i).copy_from(&(p.transpose() * scale));
    }
    let op = build_woodbury(base, zhat)?;
    Ok(-op.solve(gradient))
}

/// Full-field direction `Δs = −(B + ẐᵀẐ)⁻¹ (γL²s + Zᵀr)`, damped on
/// constant fields only when the normal matrix is singular there.
pub fn gauss_newton_direction(lin: &Linearization, base: &BaseMatrix, s: &PlasticField) -> Result<Direction> {
    let lap = base.laplacian();
    let gradient = lap.apply_squared(s.as_vector()) * base.gamma() + lin.marker_gradient();
    let ds = match solve_normal(lin, base, &gradient, 0.0) {
        Err(Error::Factorization(msg)) => {
            // Z does not see some constant field change; damp that subspace.
            let mu = CONSTANT_DAMPING * (1.0 + lin.z.norm_squared());
            log::debug!("{msg}; retrying with constant-field damping {mu:e}");
            solve_normal(lin, base, &gradient, mu)?
        }
        r => r?,
    };
    let dx = lin.apply_jacobian(&ds);
    Ok(Direction { ds, dx, gradient })
}

/// Spreads a 6-vector over every tet (`6m × 6`).
pub fn constant_field_basis(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(6 * m, 6, |i, j| if i % 6 == j { 1.0 } else { 0.0 })
}

/// Direction restricted to spatially constant changes `Δs = E δ`. The
/// smoothness term vanishes on constant fields, so this is the linear
/// least-squares step `min ‖r + Z E δ‖`. `None` if `Z E` is rank deficient.
pub fn constant_direction(lin: &Linearization, m: usize) -> Option<Direction> {
    let ze = &lin.z * constant_field_basis(m);
    let svd = ze.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || svd.singular_values.min() <= 1e-10 * smax {
        return None;
    }
    let delta = svd.solve(&(-&lin.residual), 0.0).ok()?;
    let ds = constant_field_basis(m) * &delta;
    let dx = lin.apply_jacobian(&ds);
    let gradient = ze.tr_mul(&lin.residual);
    Some(Direction { ds, dx, gradient })
}
