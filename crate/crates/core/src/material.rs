//! Stable neo-Hookean elasticity under multiplicative plasticity.
//!
//! Per-tet energy, with `F_e = F · F_p⁻¹` and `V = det(F_p) · V₀`:
//!
//! ```text
//! E(x, F_p) = V · ψ(F_e)
//! ψ(F) = μ/2 (I_C − 3) + λ/2 (J − a)² − μ/2 ln(I_C + 1) − ψ₀
//! I_C = tr(FᵀF),  J = det F,  a = 1 + 3μ/(4λ)
//! ```
//!
//! `μ = 4/3 μ_L` and `λ = λ_L + 5/6 μ_L` are the stable neo-Hookean
//! constants obtained from the Lamé parameters `(μ_L, λ_L)`, so that the
//! small-strain response matches linear elasticity. `ψ₀` is the constant that
//! makes `ψ(I) = 0`; the rest state is stress free.
//!
//! The plastic gradient is symmetric and packed into six numbers:
//!
//! ```text
//!       | s1 s2 s3 |
//! F_p = | s2 s4 s5 |
//!       | s3 s5 s6 |
//! ```
//!
//! Plastic fields are stored tet-major: entries `6t..6t+6` belong to tet `t`.

use nalgebra::{DVector, Matrix3, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross_matrix, Vec3};

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Vec9 = SVector<f64, 9>;
pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Mat12x6 = SMatrix<f64, 12, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Vec6 = SVector<f64, 6>;

pub const IDENTITY_S: [f64; 6] = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
pub const DEFAULT_SPD_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Pa
    pub young_modulus: f64,
    pub poisson_ratio: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            young_modulus: 1e5,
            poisson_ratio: 0.45,
        }
    }
}

impl MaterialParams {
    pub fn new(young_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        let p = Self {
            young_modulus,
            poisson_ratio,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0 && self.young_modulus.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "Young's modulus must be positive, got {}",
                self.young_modulus
            )));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidMaterial(format!(
                "Poisson ratio must lie in (-1, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        Ok(())
    }

    /// Lamé parameters `(μ_L, λ_L)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young_modulus, self.poisson_ratio);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }

    pub fn model(&self) -> StableNeoHookean {
        let (mu_l, lambda_l) = self.lame();
        StableNeoHookean::from_constants(4.0 / 3.0 * mu_l, lambda_l + 5.0 / 6.0 * mu_l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableNeoHookean {
    pub mu: f64,
    pub lambda: f64,
    pub a: f64,
    psi0: f64,
}

#[inline]
fn cofactor(f: &Matrix3<f64>) -> Matrix3<f64> {
    let (c0, c1, c2) = (f.column(0).into_owned(), f.column(1).into_owned(), f.column(2).into_owned());
    Matrix3::from_columns(&[c1.cross(&c2), c2.cross(&c0), c0.cross(&c1)])
}

#[inline]
fn vec9(m: &Matrix3<f64>) -> Vec9 {
    Vec9::from_column_slice(m.as_slice())
}

impl StableNeoHookean {
    pub fn from_constants(mu: f64, lambda: f64) -> Self {
        let a = 1.0 + 0.75 * mu / lambda;
        let psi0 = 0.5 * lambda * (1.0 - a).powi(2) - 0.5 * mu * 4f64.ln();
        Self { mu, lambda, a, psi0 }
    }

    pub fn psi(&self, f: &Matrix3<f64>) -> f64 {
        let ic = f.norm_squared();
        let j = f.determinant();
        0.5 * self.mu * (ic - 3.0) + 0.5 * self.lambda * (j - self.a).powi(2) - 0.5 * self.mu * (ic + 1.0).ln()
            - self.psi0
    }

    /// First Piola-Kirchhoff stress `∂ψ/∂F`.
    pub fn pk1(&self, f: &Matrix3<f64>) -> Matrix3<f64> {
        let ic = f.norm_squared();
        let j = f.determinant();
        f * (self.mu * (1.0 - 1.0 / (ic + 1.0))) + cofactor(f) * (self.lambda * (j - self.a))
    }

    /// `∂vec(P)/∂vec(F)` (column-major vec).
    pub fn dpdf(&self, f: &Matrix3<f64>) -> Mat9 {
        let ic = f.norm_squared();
        let j = f.determinant();
        let fv = vec9(f);
        let g = vec9(&cofactor(f));
        let mut h = Mat9::identity() * (self.mu * (1.0 - 1.0 / (ic + 1.0)))
            + fv * fv.transpose() * (2.0 * self.mu / (ic + 1.0).powi(2))
            + g * g.transpose() * self.lambda;
        // Hessian of det F over the columns (f0, f1, f2)
        let s = self.lambda * (j - self.a);
        let cols = [f.column(0).into_owned(), f.column(1).into_owned(), f.column(2).into_owned()];
        let blocks = [(0, 1, -cross_matrix(&cols[2])), (0, 2, cross_matrix(&cols[1])), (1, 2, -cross_matrix(&cols[0]))];
        for (bi, bj, m) in blocks {
            let m = m * s;
            let mut b = h.fixed_view_mut::<3, 3>(3 * bi, 3 * bj);
            b += m;
            let mut bt = h.fixed_view_mut::<3, 3>(3 * bj, 3 * bi);
            bt += m.transpose();
        }
        h
    }
}

/// Symmetric `F_p` from its six parameters.
pub fn fp_from_s(s: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5])
}

/// Inverse of [`fp_from_s`] for symmetric input.
pub fn s_from_fp(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
}

/// `Y` with `vec(F_p) = Y · s` (column-major vec).
pub fn y_matrix() -> SMatrix<f64, 9, 6> {
    let mut y = SMatrix::<f64, 9, 6>::zeros();
    let layout: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    for c in 0..3 {
        for r in 0..3 {
            y[(r + 3 * c, layout[r][c])] = 1.0;
        }
    }
    y
}

/// Raises eigenvalues of `F_p(s)` below `floor` to `floor`. Returns the new
/// parameters and whether anything changed.
pub fn clamp_spd(s: &[f64; 6], floor: f64) -> ([f64; 6], bool) {
    let eig = SymmetricEigen::new(fp_from_s(s));
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (*s, false);
    }
    let d = eig.eigenvalues.map(|l| l.max(floor));
    let m = eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose();
    (s_from_fp(&m), true)
}

fn min_eigenvalue(m: &Matrix3<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

/// Validated plastic state of one tet: `F_p`, its inverse and `V = det(F_p) V₀`.
#[derive(Debug, Clone, Copy)]
pub struct PlasticTet {
    pub fp: Matrix3<f64>,
    pub fp_inv: Matrix3<f64>,
    pub volume: f64,
}

impl PlasticTet {
    pub fn new(s: &[f64; 6], v0: f64) -> Result<Self> {
        Self::from_fp(fp_from_s(s), v0)
    }

    /// General (not necessarily symmetric) `F_p`; requires `det F_p > 0`
    /// and, for symmetric input, positive definiteness.
    pub fn from_fp(fp: Matrix3<f64>, v0: f64) -> Result<Self> {
        let det = fp.determinant();
        let symmetric = (fp - fp.transpose()).norm() <= 1e-14 * fp.norm();
        let bad = if symmetric { min_eigenvalue(&fp) <= 0.0 } else { det <= 0.0 };
        if bad || !det.is_finite() {
            let min_eigenvalue = if symmetric { min_eigenvalue(&fp) } else { det };
            return Err(Error::NotSpd { tet: 0, min_eigenvalue });
        }
        Ok(Self {
            fp,
            fp_inv: fp.try_inverse().expect("det > 0"),
            volume: det * v0,
        })
    }
}

/// `|F_p| V₀ ψ(F F_p⁻¹)`.
pub fn tet_energy(model: &StableNeoHookean, f: &Matrix3<f64>, s: &[f64; 6], v0: f64) -> Result<f64> {
    let p = PlasticTet::new(s, v0)?;
    Ok(p.volume * model.psi(&(f * p.fp_inv)))
}

/// As [`tet_energy`] for an arbitrary `F_p` with positive determinant.
pub fn tet_energy_fp(model: &StableNeoHookean, f: &Matrix3<f64>, fp: &Matrix3<f64>, v0: f64) -> Result<f64> {
    let p = PlasticTet::from_fp(*fp, v0)?;
    Ok(p.volume * model.psi(&(f * p.fp_inv)))
}

/// `∂vec(F)/∂x` for `F = Ds · g` where `x` stacks the four tet vertices.
pub fn shape_gradient(g: &Matrix3<f64>) -> SMatrix<f64, 9, 12> {
    let mut b = SMatrix::<f64, 9, 12>::zeros();
    for c in 0..3 {
        let g0 = -(g[(0, c)] + g[(1, c)] + g[(2, c)]);
        for r in 0..3 {
            b[(r + 3 * c, r)] = g0;
            for a in 1..4 {
                b[(r + 3 * c, 3 * a + r)] = g[(a - 1, c)];
            }
        }
    }
    b
}

fn deformation_gradient(x: &[Vec3; 4], dm_inv: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]) * dm_inv
}

/// Energy, force-side gradient and (optionally) stiffness of one tet with
/// respect to its 12 vertex coordinates, at fixed plasticity.
#[derive(Debug, Clone)]
pub struct ElasticTet {
    pub energy: f64,
    pub grad: Vec12,
    pub hess: Option<Mat12>,
}

pub fn tet_elastic(
    model: &StableNeoHookean,
    x: &[Vec3; 4],
    dm_inv: &Matrix3<f64>,
    plastic: &PlasticTet,
    hessian: bool,
) -> ElasticTet {
    let g = dm_inv * plastic.fp_inv;
    let fe = deformation_gradient(x, &g);
    let b = shape_gradient(&g);
    let v = plastic.volume;
    let grad = b.transpose() * vec9(&model.pk1(&fe)) * v;
    let hess = hessian.then(|| {
        let h = b.transpose() * model.dpdf(&fe) * b * v;
        (h + h.transpose()) * 0.5
    });
    ElasticTet {
        energy: v * model.psi(&fe),
        grad,
        hess,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeOrder {
    First,
    Second,
}

/// All derivatives of one tet's energy with respect to its vertices `x`
/// and its plastic parameters `s`. Second-order blocks are zero when only
/// first order was requested.
#[derive(Debug, Clone)]
pub struct EnergyDerivatives {
    pub energy: f64,
    pub grad_x: Vec12,
    pub grad_s: Vec6,
    pub hess_xx: Mat12,
    pub hess_xs: Mat12x6,
    pub hess_ss: Mat6,
}

pub fn tet_derivatives(
    model: &StableNeoHookean,
    x: &[Vec3; 4],
    dm_inv: &Matrix3<f64>,
    s: &[f64; 6],
    v0: f64,
    order: DerivativeOrder,
) -> Result<EnergyDerivatives> {
    let pt = PlasticTet::new(s, v0)?;
    let d = derivatives_fp(model, x, dm_inv, &pt, order);
    let y = y_matrix();
    Ok(EnergyDerivatives {
        energy: d.energy,
        grad_x: d.grad_x,
        grad_s: y.transpose() * d.grad_p,
        hess_xx: d.hess_xx,
        hess_xs: d.hess_xp * y,
        hess_ss: {
            let h = y.transpose() * d.hess_pp * y;
            (h + h.transpose()) * 0.5
        },
    })
}

/// Derivatives with respect to `x` and the nine entries of a general `F_p`.
#[derive(Debug, Clone)]
pub struct FpDerivatives {
    pub energy: f64,
    pub grad_x: Vec12,
    pub grad_p: Vec9,
    pub hess_xx: Mat12,
    pub hess_xp: SMatrix<f64, 12, 9>,
    pub hess_pp: Mat9,
}

pub fn derivatives_fp(
    model: &StableNeoHookean,
    x: &[Vec3; 4],
    dm_inv: &Matrix3<f64>,
    pt: &PlasticTet,
    order: DerivativeOrder,
) -> FpDerivatives {
    let a = pt.fp_inv;
    let v = pt.volume;
    let g = dm_inv * a;
    let fe = deformation_gradient(x, &g);
    let b = shape_gradient(&g);
    let psi = model.psi(&fe);
    let p = model.pk1(&fe);
    let pv = vec9(&p);

    // q = Feᵀ P Aᵀ, so that P : (Fe E_rc A) = q[r, c]
    let q = fe.transpose() * p * a.transpose();
    let rc = |k: usize| (k % 3, k / 3);
    // dV/dF_p[r,c] = V · A[c, r]
    let dv = Vec9::from_fn(|k, _| {
        let (r, c) = rc(k);
        v * a[(c, r)]
    });
    let p_dfe = Vec9::from_fn(|k, _| {
        let (r, c) = rc(k);
        -q[(r, c)]
    });

    let grad_x = b.transpose() * pv * v;
    let grad_p = p_dfe * v + dv * psi;

    let mut out = FpDerivatives {
        energy: v * psi,
        grad_x,
        grad_p,
        hess_xx: Mat12::zeros(),
        hess_xp: SMatrix::zeros(),
        hess_pp: Mat9::zeros(),
    };
    if order == DerivativeOrder::First {
        return out;
    }

    let m = model.dpdf(&fe);
    let mb = m * b;
    let h = b.transpose() * mb * v;
    out.hess_xx = (h + h.transpose()) * 0.5;

    // dFe/dF_p[r,c] = −Fe E_rc A
    let mut dfe = Mat9::zeros();
    for k in 0..9 {
        let (r, c) = rc(k);
        let col = Matrix3::from_fn(|i, j| -fe[(i, r)] * a[(c, j)]);
        dfe.set_column(k, &vec9(&col));
    }

    let btp = b.transpose() * pv;
    let mut hxp = b.transpose() * m * dfe * v;
    let pat = p * a.transpose();
    for j in 0..12 {
        let gj = Matrix3::from_column_slice(b.column(j).as_slice());
        let w = gj.transpose() * pat;
        for k in 0..9 {
            let (r, c) = rc(k);
            hxp[(j, k)] += -v * w[(r, c)] + dv[k] * btp[j];
        }
    }
    out.hess_xp = hxp;

    let mut hpp = dfe.transpose() * m * dfe * v;
    for k in 0..9 {
        let (rk, ck) = rc(k);
        for l in 0..9 {
            let (rl, cl) = rc(l);
            let second = a[(ck, rl)] * q[(rk, cl)] + a[(cl, rk)] * q[(rl, ck)];
            let d2v = v * (a[(cl, rl)] * a[(ck, rk)] - a[(cl, rk)] * a[(ck, rl)]);
            hpp[(k, l)] += v * second + dv[k] * p_dfe[l] + dv[l] * p_dfe[k] + d2v * psi;
        }
    }
    out.hess_pp = (hpp + hpp.transpose()) * 0.5;
    out
}

/// One symmetric plastic gradient per tet.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticField {
    s: DVector<f64>,
}

impl PlasticField {
    pub fn identity(m: usize) -> Self {
        Self::constant(m, &IDENTITY_S)
    }

    pub fn constant(m: usize, s6: &[f64; 6]) -> Self {
        Self {
            s: DVector::from_fn(6 * m, |i, _| s6[i % 6]),
        }
    }

    pub fn from_vector(s: DVector<f64>) -> Result<Self> {
        if s.len() % 6 != 0 {
            return Err(Error::Validation(format!(
                "plastic field length {} is not a multiple of 6",
                s.len()
            )));
        }
        Ok(Self { s })
    }

    pub fn n_tets(&self) -> usize {
        self.s.len() / 6
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.s
    }

    pub fn tet(&self, t: usize) -> [f64; 6] {
        std::array::from_fn(|k| self.s[6 * t + k])
    }

    pub fn set_tet(&mut self, t: usize, s6: &[f64; 6]) {
        for k in 0..6 {
            self.s[6 * t + k] = s6[k];
        }
    }

    pub fn fp(&self, t: usize) -> Matrix3<f64> {
        fp_from_s(&self.tet(t))
    }

    /// Clamps every tet to `floor`; returns the number of clamped tets.
    pub fn clamp_spd(&mut self, floor: f64) -> usize {
        let mut count = 0;
        for t in 0..self.n_tets() {
            let (c, changed) = clamp_spd(&self.tet(t), floor);
            if changed {
                self.set_tet(t, &c);
                count += 1;
            }
        }
        count
    }

    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.n_tets())
            .map(|t| min_eigenvalue(&self.fp(t)))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> StableNeoHookean {
        MaterialParams::default().model()
    }

    #[test]
    fn s_layout() {
        assert_eq!(fp_from_s(&IDENTITY_S), Matrix3::identity());
        assert_eq!(fp_from_s(&[2.0, 0.0, 0.0, 1.0, 0.0, 1.0]), Matrix3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0)));
        let m = fp_from_s(&[1.0, 0.3, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(m[(0, 1)], 0.3);
        assert_eq!(m[(1, 0)], 0.3);
        assert_eq!(m[(0, 2)], 0.0);
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = y_matrix() * Vec6::from_column_slice(&s);
        assert_eq!(y, vec9(&fp_from_s(&s)));
    }

    #[test]
    fn clamp_cases() {
        assert_eq!(clamp_spd(&IDENTITY_S, 0.01), (IDENTITY_S, false));
        let (c, f) = clamp_spd(&[-0.5, 0.0, 0.0, 1.0, 0.0, 1.0], 0.01);
        assert!(f);
        for (a, b) in c.iter().zip([0.01, 0.0, 0.0, 1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rest_and_fully_plastic_states_are_stress_free() {
        let m = model();
        assert!(m.psi(&Matrix3::identity()).abs() < 1e-9);
        assert!(m.pk1(&Matrix3::identity()).norm() < 1e-9);
        let s = [2.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let e = tet_energy(&m, &fp_from_s(&s), &s, 0.1).unwrap();
        assert!(e.abs() < 1e-9);
    }

    #[test]
    fn grad_s_vanishes_when_plasticity_explains_shape() {
        let m = model();
        let s = [2.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let x = [Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::y(), Vec3::z()];
        let d = tet_derivatives(&m, &x, &Matrix3::identity(), &s, 1.0 / 6.0, DerivativeOrder::First).unwrap();
        assert!(d.grad_s.norm() < 1e-9);
        assert!(d.grad_x.norm() < 1e-9);
    }

    #[test]
    fn rejects_indefinite_fp() {
        let m = model();
        let r = tet_energy(&m, &Matrix3::identity(), &[-1.0, 0.0, 0.0, -1.0, 0.0, 1.0], 1.0);
        assert!(matches!(r, Err(Error::NotSpd { .. })));
    }

    #[test]
    fn material_validation() {
        assert!(MaterialParams::new(1e5, 0.5).is_err());
        assert!(MaterialParams::new(-1.0, 0.3).is_err());
        let p = MaterialParams::new(1e5, 0.45).unwrap();
        let (mu, la) = p.lame();
        assert_relative_eq!(mu, 1e5 / 2.9, max_relative = 1e-14);
        assert_relative_eq!(la, 1e5 * 0.45 / (1.45 * 0.1), max_relative = 1e-12);
    }
}
