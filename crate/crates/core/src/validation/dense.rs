//! Brute-force Gauss-Newton step with the equilibrium Jacobian formed
//! explicitly. Only for small meshes.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::assembly::{evaluate_with_terms, weighted_residuals, weighted_selection};
use crate::equilibrium::{ElasticSystem, PointTerm};
use crate::error::{Error, Result};
use crate::material::{MaterialParams, PlasticField};
use crate::strain_laplacian::StrainLaplacian;
use crate::tetmesh::TetMesh;

pub const MAX_DENSE_UNKNOWNS: usize = 500;

#[derive(Debug, Clone)]
pub struct DenseStep {
    /// `J = dx/ds`, `3n × 6m`.
    pub jacobian: DMatrix<f64>,
    /// Step from the normal equations `(γL² + ZᵀZ) Δs = −(γL²s + Zᵀr)`.
    pub normal: DVector<f64>,
    /// Same step from the augmented system in `(Δs, r + ZΔs)`.
    pub kkt: DVector<f64>,
}

/// Pseudo-inverse of a symmetric matrix dropping its `drop` smallest
/// singular values.
fn truncated_pinv(k: DMatrix<f64>, drop: usize) -> Result<DMatrix<f64>> {
    let svd = k.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut inv = svd.singular_values.clone();
    for (rank, &i) in order.iter().enumerate() {
        inv[i] = if rank < drop { 0.0 } else { 1.0 / svd.singular_values[i] };
    }
    let u = svd.u.ok_or_else(|| Error::Factorization("svd without U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Factorization("svd without Vᵀ".into()))?;
    Ok(vt.transpose() * DMatrix::from_diagonal(&inv) * u.transpose())
}

/// `attachments` given means the springs are part of the equilibrium and
/// `K + K_a` is regular; otherwise `K` is inverted on the complement of
/// its six rigid modes.
pub fn dense_reference_step(
    mesh: &TetMesh,
    params: &MaterialParams,
    s: &PlasticField,
    attachments: Option<&[PointTerm]>,
    terms: &[PointTerm],
    x: &DVector<f64>,
    gamma: f64,
) -> Result<DenseStep> {
    let m6 = 6 * mesh.n_tets();
    if m6 > MAX_DENSE_UNKNOWNS {
        return Err(Error::Precondition(format!(
            "dense reference limited to {MAX_DENSE_UNKNOWNS} field unknowns, mesh has {m6}"
        )));
    }
    let sys = ElasticSystem::new(mesh, params, s)?;
    let ev = match attachments {
        Some(a) => evaluate_with_terms(&sys, a, x, true, false),
        None => sys.evaluate(x, true, false),
    };
    let k = ev.hessian.expect("hessian requested").to_dense();
    let hxs = sys.mixed_hessian(x).to_dense();
    let kinv = match attachments {
        Some(_) => k
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Factorization("singular K + K_a".into()))?,
        None => truncated_pinv(k, 6)?,
    };
    let jacobian = -(kinv * hxs);
    let z = weighted_selection(terms, mesh.n_vertices()).to_dense() * &jacobian;
    let r = weighted_residuals(terms, x);

    let l = StrainLaplacian::build(mesh)?.assemble().to_dense();
    let l2 = l.tr_mul(&l) * gamma;
    let sv = s.as_vector();
    let g = &l2 * sv + z.tr_mul(&r);
    let normal_matrix = &l2 + z.tr_mul(&z);
    let normal = normal_matrix.clone()
        .lu()
        .solve(&(-&g))
        .ok_or_else(|| Error::Factorization("singular normal matrix".into()))?;

    let p = z.nrows();
    let mut kkt_matrix = DMatrix::zeros(m6 + p, m6 + p);
    kkt_matrix.view_mut((0, 0), (m6, m6)).copy_from(&l2);
    kkt_matrix.view_mut((0, m6), (m6, p)).copy_from(&z.transpose());
    kkt_matrix.view_mut((m6, 0), (p, m6)).copy_from(&z);
    kkt_matrix.view_mut((m6, m6), (p, p)).fill_with_identity();
    kkt_matrix.view_mut((m6, m6), (p, p)).scale_mut(-1.0);
    let mut rhs = DVector::zeros(m6 + p);
    rhs.rows_mut(0, m6).copy_from(&(-(&l2 * sv)));
    rhs.rows_mut(m6, p).copy_from(&(-&r));
    let sol = kkt_matrix
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Factorization("singular KKT matrix".into()))?;
    Ok(DenseStep {
        jacobian,
        normal,
        kkt: sol.rows(0, m6).into_owned(),
    })
}
