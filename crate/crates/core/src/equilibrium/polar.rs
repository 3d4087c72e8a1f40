//! Polar decomposition `F = R S` and its first and second derivatives with
//! respect to the entries of `F`.
//!
//! Differentiating `FᵀF = S²` gives Sylvester equations
//! `dS·S + S·dS = C`, solved as `(S ⊕ S) vec(dS) = vec(C)`, and then
//! `dR = (dF − R dS) S⁻¹`. Derivatives are indexed by the column-major
//! position `i = r + 3c` of the perturbed entry `F[r, c]`.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::material::{Mat9, Vec9};

/// `(R, S)` with `R` a proper rotation and `S` symmetric positive definite.
pub fn polar(f: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(Error::Mirror(det));
    }
    let svd = f.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let r = u * vt;
    let s = vt.transpose() * Matrix3::from_diagonal(&svd.singular_values) * vt;
    Ok((r, (s + s.transpose()) * 0.5))
}

fn unit(i: usize) -> Matrix3<f64> {
    let mut e = Matrix3::zeros();
    e[(i % 3, i / 3)] = 1.0;
    e
}

fn vec9(m: &Matrix3<f64>) -> Vec9 {
    Vec9::from_column_slice(m.as_slice())
}

fn unvec(v: &Vec9) -> Matrix3<f64> {
    Matrix3::from_column_slice(v.as_slice())
}

/// `S ⊕ S = I ⊗ S + S ⊗ I` (acts on column-major `vec`).
pub fn kronecker_sum(s: &Matrix3<f64>) -> Mat9 {
    let mut k = Mat9::zeros();
    for c in 0..3 {
        for r in 0..3 {
            for c2 in 0..3 {
                for r2 in 0..3 {
                    let mut v = 0.0;
                    if c == c2 {
                        v += s[(r, r2)];
                    }
                    if r == r2 {
                        v += s[(c, c2)];
                    }
                    k[(r + 3 * c, r2 + 3 * c2)] = v;
                }
            }
        }
    }
    k
}

#[derive(Debug, Clone)]
pub struct PolarDerivatives {
    pub r: Matrix3<f64>,
    pub s: Matrix3<f64>,
    pub dr: [Matrix3<f64>; 9],
    pub ds: [Matrix3<f64>; 9],
    /// `d2r[9 i + j] = ∂²R/∂F_i∂F_j` (second order only).
    pub d2r: Option<Vec<Matrix3<f64>>>,
    pub d2s: Option<Vec<Matrix3<f64>>>,
}

impl PolarDerivatives {
    /// `∂vec(R)/∂vec(F)`
    pub fn dr_df(&self) -> Mat9 {
        Mat9::from_fn(|a, i| self.dr[i][(a % 3, a / 3)])
    }

    /// `Σ_k W[k] ∂²R_k/∂F_i∂F_j` for a weight matrix `W` (a 9×9 result).
    pub fn contract_second(&self, w: &Matrix3<f64>) -> Mat9 {
        let d2 = self.d2r.as_ref().expect("second derivatives requested");
        Mat9::from_fn(|i, j| d2[9 * i + j].component_mul(w).sum())
    }
}

pub fn polar_derivatives(f: &Matrix3<f64>, second: bool) -> Result<PolarDerivatives> {
    let (r, s) = polar(f)?;
    let ksum = kronecker_sum(&s).lu();
    let s_inv = s.try_inverse().ok_or_else(|| Error::Mirror(0.0))?;
    let sylvester = |c: &Matrix3<f64>| -> Matrix3<f64> {
        let x = unvec(&ksum.solve(&vec9(c)).expect("S ⊕ S is nonsingular"));
        (x + x.transpose()) * 0.5
    };
    let mut dr = [Matrix3::zeros(); 9];
    let mut ds = [Matrix3::zeros(); 9];
    for i in 0..9 {
        let e = unit(i);
        ds[i] = sylvester(&(e.transpose() * f + f.transpose() * e));
        dr[i] = (e - r * ds[i]) * s_inv;
    }
    let (d2r, d2s) = if second {
        let mut d2r = vec![Matrix3::zeros(); 81];
        let mut d2s = vec![Matrix3::zeros(); 81];
        for i in 0..9 {
            for j in i..9 {
                let (ei, ej) = (unit(i), unit(j));
                let c = ei.transpose() * ej + ej.transpose() * ei - ds[i] * ds[j] - ds[j] * ds[i];
                let d2 = sylvester(&c);
                let rr = -(r * d2 + dr[j] * ds[i] + dr[i] * ds[j]) * s_inv;
                d2s[9 * i + j] = d2;
                d2s[9 * j + i] = d2;
                d2r[9 * i + j] = rr;
                d2r[9 * j + i] = rr;
            }
        }
        (Some(d2r), Some(d2s))
    } else {
        (None, None)
    };
    Ok(PolarDerivatives { r, s, dr, ds, d2r, d2s })
}

/// Best rotation `R` and translation `t` with `R p + t ≈ q` under equal
/// weights (shape matching / Kabsch).
pub fn fit_rigid(p: &[Vec3], q: &[Vec3]) -> Result<(Matrix3<f64>, Vec3)> {
    fit_rigid_weighted(p, q, &vec![1.0; p.len()])
}

/// Minimizer of `Σ w_k ‖R p_k + t − q_k‖²` over rotations and
/// translations. Fails unless the weighted points span a plane.
pub fn fit_rigid_weighted(p: &[Vec3], q: &[Vec3], w: &[f64]) -> Result<(Matrix3<f64>, Vec3)> {
    assert!(p.len() == q.len() && p.len() == w.len());
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Precondition("rigid fit needs positive weights".into()));
    }
    let cp: Vec3 = p.iter().zip(w).map(|(v, w)| v * *w).sum::<Vec3>() / total;
    let cq: Vec3 = q.iter().zip(w).map(|(v, w)| v * *w).sum::<Vec3>() / total;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for ((a, b), wk) in p.iter().zip(q).zip(w) {
        cov += (b - cq) * (a - cp).transpose() * *wk;
        spread += (a - cp) * (a - cp).transpose() * *wk;
    }
    let mut sv: Vec<f64> = spread.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-12 * sv[0]) {
        return Err(Error::Precondition("rigid fit needs three non-colinear points".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    Ok((r, cq - r * cp))
}

/// Dense 9×9 Jacobian check helper: `dF = dR·S + R·dS` residual.
pub fn product_rule_residual(d: &PolarDerivatives) -> f64 {
    (0..9)
        .map(|i| (unit(i) - d.dr[i] * d.s - d.r * d.ds[i]).norm())
        .fold(0.0, f64::max)
}

/// `max_i ‖dS_i S + S dS_i − ∂(FᵀF)/∂F_i‖`
pub fn sylvester_residual(f: &Matrix3<f64>, d: &PolarDerivatives) -> f64 {
    (0..9)
        .map(|i| {
            let e = unit(i);
            (d.ds[i] * d.s + d.s * d.ds[i] - (e.transpose() * f + f.transpose() * e)).norm()
        })
        .fold(0.0, f64::max)
}
