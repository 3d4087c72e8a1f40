//! Linear solves with singular matrices of known nullspace, and the
//! low-rank Woodbury update used for Gauss-Newton directions.
//!
//! For symmetric `A` with orthonormal nullspace basis `ψ₁..ψ_k`, the
//! bordered system
//!
//! ```text
//! | A   Ψ | | x |   | b |
//! | Ψᵀ  0 | | λ | = | 0 |
//! ```
//!
//! is nonsingular. For `b` in the range of `A` it yields the unique solution
//! with `Ψᵀx = 0`, and `λ = 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse::{SparseLu, SparseMatrix, TripletBuilder};

/// Something that applies an inverse to vectors, once factored.
pub trait SymmetricSolver: Sync {
    fn dim(&self) -> usize;
    fn solve(&self, b: &DVector<f64>) -> DVector<f64>;

    fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = (0..b.ncols())
            .into_par_iter()
            .map(|j| self.solve(&b.column(j).into_owned()))
            .collect();
        DMatrix::from_columns(&cols)
    }
}

impl SymmetricSolver for SparseLu {
    fn dim(&self) -> usize {
        SparseLu::dim(self)
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        SparseLu::solve(self, b)
    }

    fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        SparseLu::solve_many(self, b)
    }
}

/// Modified Gram-Schmidt. Fails on (numerically) dependent input.
pub fn orthonormalize(vectors: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        let scale = v.norm();
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let d = q.dot(&w);
                w.axpy(-d, q, 1.0);
            }
        }
        let nw = w.norm();
        if !(nw > 1e-10 * scale) {
            return Err(Error::Precondition(format!(
                "nullspace vector {i} is linearly dependent on the previous ones"
            )));
        }
        out.push(w / nw);
    }
    Ok(out)
}

pub const DEFAULT_NULLSPACE_TOL: f64 = 1e-8;
pub const RANGE_TOL: f64 = 1e-8;

/// Sparse symmetric matrix together with its nullspace basis and a
/// factorization of the bordered system.
pub struct KnownNullspaceMatrix {
    matrix: SparseMatrix,
    nullspace: Vec<DVector<f64>>,
    kkt: SparseLu,
}

impl std::fmt::Debug for KnownNullspaceMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnownNullspaceMatrix")
            .field("dim", &self.matrix.nrows())
            .field("nullity", &self.nullspace.len())
            .finish()
    }
}

impl KnownNullspaceMatrix {
    /// Orthonormalizes `nullspace`, checks `‖A ψᵢ‖ ≤ tol ‖A‖` (spectral norm
    /// estimate) and factors the bordered matrix.
    pub fn new(matrix: SparseMatrix, nullspace: &[DVector<f64>], tol: f64) -> Result<Self> {
        let p = matrix.nrows();
        if matrix.ncols() != p {
            return Err(Error::Precondition("matrix must be square".into()));
        }
        let psi = orthonormalize(nullspace)?;
        let norm = matrix.spectral_norm_estimate(60).max(f64::MIN_POSITIVE);
        for (index, v) in psi.iter().enumerate() {
            if v.len() != p {
                return Err(Error::Precondition(format!("nullspace vector {index} has wrong length")));
            }
            let residual = matrix.mul_vec(v).norm();
            if residual > tol * norm {
                return Err(Error::NotNullspace {
                    index,
                    residual,
                    tolerance: tol * norm,
                });
            }
        }
        let k = psi.len();
        let mut b = TripletBuilder::with_capacity(p + k, p + k, matrix.nnz() + 2 * k * p);
        for (r, c, v) in matrix.iter() {
            b.push(r, c, v);
        }
        for (j, v) in psi.iter().enumerate() {
            for (i, &e) in v.iter().enumerate() {
                if e != 0.0 {
                    b.push(i, p + j, e);
                    b.push(p + j, i, e);
                }
            }
        }
        let kkt = SparseLu::factor(&b.build())?;
        Ok(Self {
            matrix,
            nullspace: psi,
            kkt,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn nullspace(&self) -> &[DVector<f64>] {
        &self.nullspace
    }

    /// Coefficients `ψᵢᵀ v`.
    pub fn nullspace_coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.nullspace.len(), self.nullspace.iter().map(|q| q.dot(v)))
    }

    /// `v − Σ (ψᵢᵀv) ψᵢ`
    pub fn project_out(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut w = v.clone();
        for q in &self.nullspace {
            let d = q.dot(&w);
            w.axpy(-d, q, 1.0);
        }
        w
    }

    fn bordered_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let p = self.dim();
        let mut rhs = DVector::zeros(p + self.nullspace.len());
        rhs.rows_mut(0, p).copy_from(b);
        self.kkt.solve(&rhs).rows(0, p).into_owned()
    }

    /// Solution of `A x = b` with `Ψᵀx = 0`. `b` must lie in the range of
    /// `A` up to `‖Ψᵀb‖ ≤ 1e-8 ‖b‖`.
    pub fn solve_singular(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = b.norm();
        let projection = self.nullspace_coefficients(b).norm();
        if projection > RANGE_TOL * norm {
            return Err(Error::Inconsistent { projection, norm });
        }
        Ok(self.bordered_solve(b))
    }

    /// As [`Self::solve_singular`] after removing the nullspace component of
    /// `b`; the result is `A⁺ b`.
    pub fn solve_projected(&self, b: &DVector<f64>) -> DVector<f64> {
        self.bordered_solve(&self.project_out(b))
    }

    /// Column-wise [`Self::solve_projected`].
    pub fn solve_projected_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.dim();
        let k = self.nullspace.len();
        let mut rhs = DMatrix::zeros(p + k, b.ncols());
        for j in 0..b.ncols() {
            let col = self.project_out(&b.column(j).into_owned());
            rhs.view_mut((0, j), (p, 1)).copy_from(&col);
        }
        self.kkt.solve_many(&rhs).rows(0, p).into_owned()
    }

    /// Solves `(A + Σ αᵢ ψᵢ ψᵢᵀ) y = h`.
    ///
    /// With `x` the ψ-orthogonal solution for the projected right-hand side,
    /// `y = x + Σ (ψᵢᵀh / αᵢ) ψᵢ`.
    pub fn solve_rank_corrected(&self, alphas: &[f64], h: &DVector<f64>) -> Result<DVector<f64>> {
        if alphas.len() != self.nullspace.len() {
            return Err(Error::Precondition(format!(
                "expected {} alphas, got {}",
                self.nullspace.len(),
                alphas.len()
            )));
        }
        if let Some(i) = alphas.iter().position(|&a| a == 0.0 || !a.is_finite()) {
            return Err(Error::Precondition(format!("alpha_{i} must be nonzero and finite")));
        }
        let coef = self.nullspace_coefficients(h);
        let mut y = self.solve_projected(h);
        for (i, q) in self.nullspace.iter().enumerate() {
            y.axpy(coef[i] / alphas[i], q, 1.0);
        }
        Ok(y)
    }
}

/// `H⁻¹` for `H = B + ẐᵀẐ`, given a solver for `B` and a dense `Ẑ`.
pub struct WoodburyOperator<'a, S: SymmetricSolver + ?Sized> {
    base: &'a S,
    zhat: DMatrix<f64>,
    binv_zt: DMatrix<f64>,
    capacitance: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<S: SymmetricSolver + ?Sized> std::fmt::Debug for WoodburyOperator<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WoodburyOperator")
            .field("dim", &self.zhat.ncols())
            .field("rows", &self.zhat.nrows())
            .finish()
    }
}

/// Forms `I + Ẑ B⁻¹ Ẑᵀ` with one multi-RHS solve and factors it.
pub fn build_woodbury<'a, S: SymmetricSolver + ?Sized>(base: &'a S, zhat: DMatrix<f64>) -> Result<WoodburyOperator<'a, S>> {
    if zhat.ncols() != base.dim() {
        return Err(Error::Precondition(format!(
            "zhat has {} columns, base matrix is {}x{}",
            zhat.ncols(),
            base.dim(),
            base.dim()
        )));
    }
    let binv_zt = base.solve_many(&zhat.transpose());
    let mut cap = &zhat * &binv_zt;
    for i in 0..cap.nrows() {
        cap[(i, i)] += 1.0;
    }
    let cap = (&cap + cap.transpose()) * 0.5;
    let scale = cap.amax().max(1.0);
    let lu = cap.lu();
    if cap_min_pivot(&lu) <= 1e-14 * scale {
        return Err(Error::Factorization(format!(
            "capacitance matrix is singular (smallest pivot {:e}, scale {:e})",
            cap_min_pivot(&lu),
            scale
        )));
    }
    Ok(WoodburyOperator {
        base,
        zhat,
        binv_zt,
        capacitance: lu,
    })
}

fn cap_min_pivot(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let u = lu.u();
    (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min)
}

impl<S: SymmetricSolver + ?Sized> WoodburyOperator<'_, S> {
    pub fn dim(&self) -> usize {
        self.zhat.ncols()
    }

    pub fn zhat(&self) -> &DMatrix<f64> {
        &self.zhat
    }

    /// `H⁻¹h = B⁻¹h − B⁻¹Ẑᵀ C⁻¹ Ẑ B⁻¹h`
    pub fn solve(&self, h: &DVector<f64>) -> DVector<f64> {
        let y = self.base.solve(h);
        if self.zhat.nrows() == 0 {
            return y;
        }
        let t = &self.zhat * &y;
        let u = self.capacitance.solve(&t).expect("capacitance factored");
        y - &self.binv_zt * u
    }
}

pub fn woodbury_solve<S: SymmetricSolver + ?Sized>(op: &WoodburyOperator<'_, S>, h: &DVector<f64>) -> DVector<f64> {
    op.solve(h)
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Unpreconditioned conjugate gradients on an implicitly applied SPD
/// operator. Stops at `‖r‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iterations: usize,
) -> CgResult {
    let bn = b.norm();
    let mut x = DVector::zeros(b.len());
    if bn == 0.0 {
        return CgResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut it = 0;
    while it < max_iterations && rr.sqrt() > tol * bn {
        let ap = apply(&p);
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
        it += 1;
    }
    CgResult {
        x,
        iterations: it,
        relative_residual: rr.sqrt() / bn,
    }
}
