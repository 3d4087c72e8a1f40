//! Central-difference checks of the analytic derivatives.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::equilibrium::polar::{polar, polar_derivatives, product_rule_residual, sylvester_residual};
use crate::geometry::Vec3;
use crate::material::{tet_derivatives, DerivativeOrder, MaterialParams};

/// Worst relative error of one derivative block over all trials.
#[derive(Debug, Clone, Serialize)]
pub struct BlockError {
    pub block: String,
    pub worst_relative: f64,
    pub trials: usize,
}

const STEPS: [f64; 6] = [1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 1e-6];

/// Relative error of a central-difference Jacobian of `f` at `p` against
/// `analytic`, minimized over the step sizes in `STEPS` (scaled by `scale`).
fn fd_error(
    p: &DVector<f64>,
    scale: f64,
    analytic: &DMatrix<f64>,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> f64 {
    let norm = analytic.norm().max(f64::MIN_POSITIVE);
    STEPS
        .iter()
        .map(|&h0| {
            let h = h0 * scale;
            let mut fd = DMatrix::zeros(analytic.nrows(), analytic.ncols());
            for j in 0..p.len() {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[j] += h;
                pm[j] -= h;
                fd.set_column(j, &((f(&pp) - f(&pm)) / (2.0 * h)));
            }
            (fd - analytic).norm() / norm
        })
        .fold(f64::INFINITY, f64::min)
}

/// A random tet state: rest shape near a regular tet, positions from a
/// random well-conditioned deformation, and plasticity near identity.
pub struct TetState {
    pub rest: [Vec3; 4],
    pub x: [Vec3; 4],
    pub s: [f64; 6],
}

impl TetState {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut jitter = |a: f64| Vec3::from_fn(|_, _| rng.random_range(-a..a));
        let base = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let rest = base.map(|v| (v + jitter(0.15)) * 0.1);
        let f = Matrix3::identity() + Matrix3::from_columns(&[jitter(0.3), jitter(0.3), jitter(0.3)]);
        let x = rest.map(|v| f * v + jitter(0.003));
        let mut s = crate::material::IDENTITY_S;
        for (k, v) in s.iter_mut().enumerate() {
            let diag = matches!(k, 0 | 3 | 5);
            *v += rng.random_range(-0.25..0.25) * if diag { 1.0 } else { 0.5 };
        }
        Self { rest, x, s }
    }

    fn dm_inv(&self) -> Matrix3<f64> {
        let r = &self.rest;
        Matrix3::from_columns(&[r[1] - r[0], r[2] - r[0], r[3] - r[0]])
            .try_inverse()
            .expect("random rest tet is not degenerate")
    }

    fn v0(&self) -> f64 {
        crate::geometry::signed_volume(&self.rest).abs()
    }
}

fn unpack_x(p: &DVector<f64>) -> [Vec3; 4] {
    std::array::from_fn(|a| Vec3::new(p[3 * a], p[3 * a + 1], p[3 * a + 2]))
}

/// Every energy derivative block of one tet against central differences
/// over `trials` random states.
pub fn check_energy_derivatives(params: &MaterialParams, seed: u64, trials: usize) -> Vec<BlockError> {
    let model = params.model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..trials {
        let st = TetState::random(&mut rng);
        let dm_inv = st.dm_inv();
        let v0 = st.v0();
        let d = tet_derivatives(&model, &st.x, &dm_inv, &st.s, v0, DerivativeOrder::Second)
            .expect("random state is SPD");
        let xv = DVector::from_iterator(12, st.x.iter().flat_map(|v| v.iter().copied()));
        let sv = DVector::from_row_slice(&st.s);
        let eval = |x: &DVector<f64>, s: &DVector<f64>| {
            let s6: [f64; 6] = std::array::from_fn(|k| s[k]);
            tet_derivatives(&model, &unpack_x(x), &dm_inv, &s6, v0, DerivativeOrder::First).unwrap()
        };
        let xs = 0.1;
        let e_x = |x: &DVector<f64>| DVector::from_element(1, eval(x, &sv).energy);
        let e_s = |s: &DVector<f64>| DVector::from_element(1, eval(&xv, s).energy);
        let g_x_of_x = |x: &DVector<f64>| DVector::from_column_slice(eval(x, &sv).grad_x.as_slice());
        let g_x_of_s = |s: &DVector<f64>| DVector::from_column_slice(eval(&xv, s).grad_x.as_slice());
        let g_s_of_s = |s: &DVector<f64>| DVector::from_column_slice(eval(&xv, s).grad_s.as_slice());
        let to_dyn = |m: &[f64], r: usize, c: usize| DMatrix::from_column_slice(r, c, m);
        let errs = [
            fd_error(&xv, xs, &to_dyn(d.grad_x.as_slice(), 1, 12), e_x),
            fd_error(&sv, 1.0, &to_dyn(d.grad_s.as_slice(), 1, 6), e_s),
            fd_error(&xv, xs, &to_dyn(d.hess_xx.as_slice(), 12, 12), g_x_of_x),
            fd_error(&sv, 1.0, &to_dyn(d.hess_xs.as_slice(), 12, 6), g_x_of_s),
            fd_error(&sv, 1.0, &to_dyn(d.hess_ss.as_slice(), 6, 6), g_s_of_s),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    ["dE/dx", "dE/ds", "d2E/dx2", "d2E/dxds", "d2E/ds2"]
        .iter()
        .zip(worst)
        .map(|(b, w)| BlockError {
            block: b.to_string(),
            worst_relative: w,
            trials,
        })
        .collect()
}

/// Random `F = Q diag(σ) Vᵀ` with `σ ∈ [0.5, 2]` and proper rotations.
pub fn random_deformation(rng: &mut impl Rng) -> Matrix3<f64> {
    let mut rot = || {
        Rotation3::from_scaled_axis(Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0))).into_inner()
    };
    let q = rot();
    let v = rot();
    let sigma = Vector3::from_fn(|_, _| rng.random_range(0.5..2.0));
    q * Matrix3::from_diagonal(&sigma) * v.transpose()
}

/// Polar first and second derivatives against central differences, and
/// the Sylvester and product-rule residuals.
pub fn check_polar_derivatives(seed: u64, trials: usize) -> Vec<BlockError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    let vec_r = |f: &DVector<f64>| {
        let (r, _) = polar(&Matrix3::from_column_slice(f.as_slice())).unwrap();
        DVector::from_column_slice(r.as_slice())
    };
    for _ in 0..trials {
        let f = random_deformation(&mut rng);
        let d = polar_derivatives(&f, true).unwrap();
        let fv = DVector::from_column_slice(f.as_slice());
        let dr = DMatrix::from_column_slice(9, 9, d.dr_df().as_slice());
        worst[0] = worst[0].max(fd_error(&fv, 1.0, &dr, vec_r));

        // column block j of the 81×9 second-derivative matrix is ∂(vec ∂R/∂F_j)/∂F
        let d2 = d.d2r.as_ref().unwrap();
        let analytic = DMatrix::from_fn(81, 9, |row, i| {
            let (a, j) = (row % 9, row / 9);
            d2[9 * i + j][(a % 3, a / 3)]
        });
        let first = |f: &DVector<f64>| {
            let d = polar_derivatives(&Matrix3::from_column_slice(f.as_slice()), false).unwrap();
            DVector::from_iterator(81, d.dr.iter().flat_map(|m| m.iter().copied().collect::<Vec<_>>()))
        };
        worst[1] = worst[1].max(fd_error(&fv, 1.0, &analytic, first));
        worst[2] = worst[2].max(sylvester_residual(&f, &d));
        worst[3] = worst[3].max(product_rule_residual(&d));
    }
    ["dR/dF", "d2R/dF2", "sylvester residual", "product rule residual"]
        .iter()
        .zip(worst)
        .map(|(b, w)| BlockError {
            block: b.to_string(),
            worst_relative: w,
            trials,
        })
        .collect()
}
