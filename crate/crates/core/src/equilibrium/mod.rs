//! Static equilibrium under plasticity.
//!
//! Attached meshes minimize elastic energy plus attachment springs.
//! Unattached meshes have six zero-energy rigid modes; they are pinned by
//! the centroid and shape-matching rotation of a vertex set `D`:
//!
//! ```text
//! Σ w_j x_j − Σ w_j X_j = t
//! Polar(Σ w_j x_j (X_j − X_c)ᵀ) = R,    w_j = 1/|D|
//! ```
//!
//! Both constraints only fix the gauge. The elastic energy is invariant under
//! rigid motions, so the constrained minimizer has zero multipliers and the
//! quadratic penalty `ρ/2 ‖c(x)‖²` is exact: it is minimized at `c = 0` for
//! any `ρ > 0`. `ρ` therefore only affects conditioning.

pub mod assembly;
pub mod polar;

use log::debug;
use nalgebra::{DVector, Matrix3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::material::{MaterialParams, Mat9, PlasticField};
use crate::sparse::{SparseLu, SparseMatrix, TripletBuilder};
use crate::tetmesh::{vertex, TetMesh};

pub use assembly::{evaluate_with_terms, ElasticSystem, Evaluation, PointTerm};
pub use polar::{fit_rigid, fit_rigid_weighted, polar, polar_derivatives, PolarDerivatives};

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumState {
    pub x: DVector<f64>,
    /// Gauge translation (unattached meshes; zero otherwise).
    pub translation: Vec3,
    /// Gauge rotation (unattached meshes; identity otherwise).
    pub rotation: Matrix3<f64>,
    /// Norm of the net force.
    pub residual_norm: f64,
    /// Stabilization constraint violation (unattached meshes).
    pub constraint_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Net force tolerance in N; `None` uses [`default_force_tol`].
    pub force_tol: Option<f64>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            force_tol: None,
        }
    }
}

/// `1e-9 · E · L²`, with `L` the rest bounding-box diagonal: a force
/// scale independent of the units of the mesh.
pub fn default_force_tol(mesh: &TetMesh, params: &MaterialParams) -> f64 {
    1e-9 * params.young_modulus * mesh.rest_bbox_diagonal().powi(2)
}

trait Potential {
    fn energy(&self, x: &DVector<f64>) -> f64;
    fn evaluate(&self, x: &DVector<f64>, hessian: bool, psd: bool) -> Result<Evaluation>;
}

struct NewtonOutcome {
    x: DVector<f64>,
    residual: f64,
    converged: bool,
    iterations: usize,
}

fn solve_direction(h: &SparseMatrix, g: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = SparseLu::factor(h).ok()?;
    let d = -lu.solve(g);
    d.iter().all(|v| v.is_finite()).then_some(d)
}

fn is_descent(g: &DVector<f64>, d: &DVector<f64>) -> bool {
    g.dot(d) < -1e-14 * g.norm() * d.norm()
}

fn newton(p: &dyn Potential, x0: &DVector<f64>, tol: f64, max_iterations: usize) -> Result<NewtonOutcome> {
    let mut x = x0.clone();
    let mut iterations = 0;
    loop {
        let ev = p.evaluate(&x, true, false)?;
        let gnorm = ev.gradient.norm();
        if gnorm <= tol {
            return Ok(NewtonOutcome {
                x,
                residual: gnorm,
                converged: true,
                iterations,
            });
        }
        if iterations >= max_iterations {
            return Ok(NewtonOutcome {
                x,
                residual: gnorm,
                converged: false,
                iterations,
            });
        }
        iterations += 1;
        let g = &ev.gradient;
        let mut d = ev.hessian.as_ref().and_then(|h| solve_direction(h, g));
        if !d.as_ref().is_some_and(|d| is_descent(g, d)) {
            let psd = p.evaluate(&x, true, true)?;
            d = psd.hessian.as_ref().and_then(|h| solve_direction(h, g));
            if !d.as_ref().is_some_and(|d| is_descent(g, d)) {
                debug!("newton: falling back to steepest descent");
                d = Some(-g * (1.0 / gnorm.max(1.0)));
            }
        }
        let d = d.unwrap();
        let slope = g.dot(&d);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn = &x + &d * step;
            let en = p.energy(&xn);
            if en.is_finite() && en <= ev.energy + 1e-4 * step * slope {
                accepted = Some(xn);
                break;
            }
            step *= 0.5;
        }
        let next = match accepted {
            Some(xn) => xn,
            None => {
                // energy differences below round-off: accept a full step that
                // still reduces the force
                let xn = &x + &d;
                let gn = p.evaluate(&xn, false, false)?.gradient.norm();
                if gn < gnorm {
                    xn
                } else {
                    return Ok(NewtonOutcome {
                        x,
                        residual: gnorm,
                        converged: false,
                        iterations,
                    });
                }
            }
        };
        x = next;
    }
}

struct AttachedPotential<'a> {
    sys: ElasticSystem<'a>,
    terms: &'a [PointTerm],
}

impl Potential for AttachedPotential<'_> {
    fn energy(&self, x: &DVector<f64>) -> f64 {
        self.sys.energy(x) + assembly::terms_energy(self.terms, x)
    }

    fn evaluate(&self, x: &DVector<f64>, hessian: bool, psd: bool) -> Result<Evaluation> {
        Ok(evaluate_with_terms(&self.sys, self.terms, x, hessian, psd))
    }
}

fn check_attachments(mesh: &TetMesh, terms: &[PointTerm]) -> Result<()> {
    let rest = mesh.rest_positions();
    let pts: Vec<Vec3> = terms.iter().map(|t| t.point(&rest)).collect();
    let l = mesh.rest_bbox_diagonal();
    let ok = pts.len() >= 3 && {
        let c: Vec3 = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in &pts {
            cov += (p - c) * (p - c).transpose();
        }
        let mut sv: Vec<f64> = cov.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv[1] > 1e-12 * l * l
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition(
            "attachments must include at least three non-colinear points".into(),
        ))
    }
}

/// Equilibrium of an attached mesh: `f_e + f_a = 0`.
pub fn static_solve_attached(
    mesh: &TetMesh,
    params: &MaterialParams,
    s: &PlasticField,
    attachments: &[PointTerm],
    x0: &DVector<f64>,
    options: &NewtonOptions,
) -> Result<EquilibriumState> {
    check_attachments(mesh, attachments)?;
    let sys = ElasticSystem::new(mesh, params, s)?;
    let tol = options.force_tol.unwrap_or_else(|| default_force_tol(mesh, params));
    let pot = AttachedPotential {
        sys,
        terms: attachments,
    };
    let out = newton(&pot, x0, tol, options.max_iterations)?;
    debug!(
        "attached equilibrium: {} iterations, |f| = {:e} (tol {:e})",
        out.iterations, out.residual, tol
    );
    Ok(EquilibriumState {
        x: out.x,
        translation: Vec3::zeros(),
        rotation: Matrix3::identity(),
        residual_norm: out.residual,
        constraint_residual: 0.0,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// The rigid gauge of an unattached mesh: vertex set `D` with equal
/// weights and the rest-space quantities the constraints refer to.
#[derive(Debug, Clone, Serialize)]
pub struct Gauge {
    pub vertices: Vec<usize>,
    /// Rest centroid `X_c` of `D`.
    pub rest_centroid: Vec3,
    offsets: Vec<Vec3>,
}

impl Gauge {
    pub fn new(mesh: &TetMesh, mut vertices: Vec<usize>) -> Result<Self> {
        vertices.sort_unstable();
        vertices.dedup();
        if vertices.is_empty() {
            return Err(Error::Precondition("gauge vertex set D is empty".into()));
        }
        let w = 1.0 / vertices.len() as f64;
        let rest = mesh.vertices_rest();
        let xc: Vec3 = vertices.iter().map(|&v| rest[v] * w).sum();
        let offsets = vertices.iter().map(|&v| rest[v] - xc).collect();
        Ok(Self {
            vertices,
            rest_centroid: xc,
            offsets,
        })
    }

    fn weight(&self) -> f64 {
        1.0 / self.vertices.len() as f64
    }

    /// `Σ w_j x_j`
    pub fn centroid(&self, x: &DVector<f64>) -> Vec3 {
        let w = self.weight();
        self.vertices.iter().map(|&v| vertex(x, v) * w).sum()
    }

    /// `Σ w_j x_j (X_j − X_c)ᵀ`
    pub fn covariance(&self, x: &DVector<f64>) -> Matrix3<f64> {
        let w = self.weight();
        self.vertices
            .iter()
            .zip(&self.offsets)
            .map(|(&v, y)| vertex(x, v) * y.transpose() * w)
            .sum()
    }

    /// Current `(R, t)` of configuration `x`.
    pub fn measure(&self, x: &DVector<f64>) -> Result<(Matrix3<f64>, Vec3)> {
        let cov = self.covariance(x);
        let det = cov.determinant();
        if !(det > 0.0) {
            return Err(Error::Mirror(det));
        }
        let (r, _) = polar(&cov)?;
        Ok((r, self.centroid(x) - self.rest_centroid))
    }

    /// Applies the rigid motion that makes `x` satisfy the constraints for
    /// `(r, t)` exactly.
    pub fn fix(&self, x: &DVector<f64>, r: &Matrix3<f64>, t: &Vec3) -> Result<DVector<f64>> {
        let (r0, _) = self.measure(x)?;
        let q = r * r0.transpose();
        let p = t + self.rest_centroid - q * self.centroid(x);
        Ok(apply_rigid(x, &q, &p))
    }

    /// Rigid map `X ↦ R X + p` that realizes the gauge `(r, t)` on the
    /// rest shape: `p = t + X_c − R X_c`.
    pub fn rigid_motion(&self, r: &Matrix3<f64>, t: &Vec3) -> (Matrix3<f64>, Vec3) {
        (*r, t + self.rest_centroid - r * self.rest_centroid)
    }

    /// `(‖c_t‖, ‖c_R‖_F)`
    pub fn residuals(&self, x: &DVector<f64>, r: &Matrix3<f64>, t: &Vec3) -> Result<(f64, f64)> {
        let (rx, tx) = self.measure(x)?;
        Ok(((tx - t).norm(), (rx - r).norm()))
    }
}

pub fn apply_rigid(x: &DVector<f64>, r: &Matrix3<f64>, p: &Vec3) -> DVector<f64> {
    let mut out = x.clone();
    for i in 0..x.len() / 3 {
        let v = r * vertex(x, i) + p;
        out.fixed_rows_mut::<3>(3 * i).copy_from(&v);
    }
    out
}

struct UnattachedPotential<'a> {
    sys: ElasticSystem<'a>,
    gauge: &'a Gauge,
    target_r: Matrix3<f64>,
    target_t: Vec3,
    rho_t: f64,
    rho_r: f64,
}

impl UnattachedPotential<'_> {
    fn penalty(&self, x: &DVector<f64>) -> Result<f64> {
        let ct = self.gauge.centroid(x) - self.gauge.rest_centroid - self.target_t;
        let cov = self.gauge.covariance(x);
        let (r, _) = polar(&cov)?;
        Ok(0.5 * self.rho_t * ct.norm_squared() + 0.5 * self.rho_r * (r - self.target_r).norm_squared())
    }
}

impl Potential for UnattachedPotential<'_> {
    fn energy(&self, x: &DVector<f64>) -> f64 {
        match self.penalty(x) {
            Ok(p) => self.sys.energy(x) + p,
            Err(_) => f64::INFINITY,
        }
    }

    fn evaluate(&self, x: &DVector<f64>, hessian: bool, psd: bool) -> Result<Evaluation> {
        let mut ev = self.sys.evaluate(x, hessian, psd);
        let g = self.gauge;
        let w = g.weight();
        let ct = g.centroid(x) - g.rest_centroid - self.target_t;
        let pd = polar_derivatives(&g.covariance(x), hessian && !psd)?;
        let cr = pd.r - self.target_r;
        ev.energy += 0.5 * self.rho_t * ct.norm_squared() + 0.5 * self.rho_r * cr.norm_squared();

        let drdf = pd.dr_df();
        let cr9 = crate::material::Vec9::from_column_slice(cr.as_slice());
        let g9 = drdf.transpose() * cr9 * self.rho_r;
        let g3 = Matrix3::from_column_slice(g9.as_slice());
        for (&v, y) in g.vertices.iter().zip(&g.offsets) {
            let gv = ct * (self.rho_t * w) + g3 * y * w;
            for d in 0..3 {
                ev.gradient[3 * v + d] += gv[d];
            }
        }

        if let Some(h) = ev.hessian.take() {
            let mut m: Mat9 = drdf.transpose() * drdf;
            if !psd {
                m += pd.contract_second(&cr);
            }
            m *= self.rho_r;
            let n = h.nrows();
            let nd = g.vertices.len();
            let mut b = TripletBuilder::with_capacity(n, n, h.nnz() + 9 * nd * nd);
            for (r, c, v) in h.iter() {
                b.push(r, c, v);
            }
            // ∂vec(C)/∂x_{j,a} = w · (Y_j ⊗ e_a); contract M on both sides
            let proj: Vec<nalgebra::SMatrix<f64, 3, 9>> = g
                .offsets
                .iter()
                .map(|y| {
                    let mut p = nalgebra::SMatrix::<f64, 3, 9>::zeros();
                    for a in 0..3 {
                        for c in 0..3 {
                            p[(a, a + 3 * c)] = w * y[c];
                        }
                    }
                    p
                })
                .collect();
            let pm: Vec<nalgebra::SMatrix<f64, 3, 9>> = proj.iter().map(|p| p * m).collect();
            for (j, &vj) in g.vertices.iter().enumerate() {
                for (k, &vk) in g.vertices.iter().enumerate() {
                    let blk = pm[j] * proj[k].transpose();
                    for a in 0..3 {
                        for bb in 0..3 {
                            let mut val = blk[(a, bb)];
                            if a == bb {
                                val += self.rho_t * w * w;
                            }
                            b.push(3 * vj + a, 3 * vk + bb, val);
                        }
                    }
                }
            }
            ev.hessian = Some(b.build());
        }
        Ok(ev)
    }
}

/// Equilibrium of an unattached mesh with gauge `(target_r, target_t)` on
/// the vertex set of `gauge`.
pub fn static_solve_unattached(
    mesh: &TetMesh,
    params: &MaterialParams,
    s: &PlasticField,
    target_t: &Vec3,
    target_r: &Matrix3<f64>,
    gauge: &Gauge,
    x0: &DVector<f64>,
    options: &NewtonOptions,
) -> Result<EquilibriumState> {
    if (target_r.transpose() * target_r - Matrix3::identity()).norm() > 1e-10 || target_r.determinant() <= 0.0 {
        return Err(Error::Precondition("target rotation is not a proper rotation".into()));
    }
    let sys = ElasticSystem::new(mesh, params, s)?;
    let l = mesh.rest_bbox_diagonal();
    let rho_t = 10.0 * params.young_modulus * l;
    let pot = UnattachedPotential {
        sys,
        gauge,
        target_r: *target_r,
        target_t: *target_t,
        rho_t,
        rho_r: rho_t * l * l,
    };
    let tol = options.force_tol.unwrap_or_else(|| default_force_tol(mesh, params));
    let start = gauge.fix(x0, target_r, target_t)?;
    let out = newton(&pot, &start, tol, options.max_iterations)?;
    // remove the remaining (round-off) gauge violation exactly
    let x = gauge.fix(&out.x, target_r, target_t)?;
    let residual = pot.sys.evaluate(&x, false, false).gradient.norm();
    let (ct, cr) = gauge.residuals(&x, target_r, target_t)?;
    debug!(
        "unattached equilibrium: {} iterations, |f| = {:e} (tol {:e}), constraints ({:e}, {:e})",
        out.iterations, residual, tol, ct, cr
    );
    Ok(EquilibriumState {
        x,
        translation: *target_t,
        rotation: *target_r,
        residual_norm: residual,
        constraint_residual: (ct / l).max(cr),
        converged: out.converged && residual <= tol,
        iterations: out.iterations,
    })
}

/// Rigid-motion vectors `[e_i, …, e_i]` and `[e_i × x_1, …, e_i × x_n]`,
/// orthonormalized. They span the nullspace of the stiffness matrix at an
/// unattached equilibrium.
pub fn stiffness_nullspace(x: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = x.len() / 3;
    let mut raw = Vec::with_capacity(6);
    for i in 0..3 {
        raw.push(DVector::from_fn(3 * n, |k, _| if k % 3 == i { 1.0 } else { 0.0 }));
    }
    for i in 0..3 {
        let e = Vec3::ith(i, 1.0);
        let mut v = DVector::zeros(3 * n);
        for j in 0..n {
            v.fixed_rows_mut::<3>(3 * j).copy_from(&e.cross(&vertex(x, j)));
        }
        raw.push(v);
    }
    crate::singular_linalg::orthonormalize(&raw).expect("rigid modes of a 3D mesh are independent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::material::IDENTITY_S;

    fn pin_all(mesh: &TetMesh, verts: &[usize], x: &DVector<f64>, k: f64) -> Vec<PointTerm> {
        verts
            .iter()
            .map(|&v| PointTerm {
                support: vec![(v, 1.0)],
                target: vertex(x, v),
                weight: k,
            })
            .inspect(|_| assert!(mesh.n_vertices() > 0))
            .collect()
    }

    #[test]
    fn rest_state_is_equilibrium() {
        let mesh = fixtures::beam();
        let x = mesh.rest_positions();
        let att = pin_all(&mesh, &[0, 1, 9, 27], &x, 1e8);
        let st = static_solve_attached(
            &mesh,
            &MaterialParams::default(),
            &PlasticField::identity(mesh.n_tets()),
            &att,
            &x,
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(st.converged);
        assert_eq!(st.iterations, 0);
        assert_eq!(st.x, x);
    }

    #[test]
    fn colinear_attachments_rejected() {
        let mesh = fixtures::single_tet();
        let x = mesh.rest_positions();
        let att = pin_all(&mesh, &[0, 1], &x, 1e8);
        let r = static_solve_attached(
            &mesh,
            &MaterialParams::default(),
            &PlasticField::identity(1),
            &att,
            &x,
            &NewtonOptions::default(),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn unattached_rigid_target() {
        let mesh = fixtures::cube();
        let gauge = Gauge::new(&mesh, mesh.surface_vertices()).unwrap();
        let r = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), 30f64.to_radians()).into_inner();
        let t = Vec3::new(1.0, 0.0, 0.0);
        let params = MaterialParams::default();
        let s = PlasticField::constant(mesh.n_tets(), &IDENTITY_S);
        let st = static_solve_unattached(
            &mesh,
            &params,
            &s,
            &t,
            &r,
            &gauge,
            &mesh.rest_positions(),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(st.converged);
        let (rm, p) = gauge.rigid_motion(&r, &t);
        let expect = apply_rigid(&mesh.rest_positions(), &rm, &p);
        assert!((&st.x - expect).amax() < 1e-12);
        let e = ElasticSystem::new(&mesh, &params, &s).unwrap().energy(&st.x);
        assert!(e.abs() < 1e-9);
    }

    /// Newton on the free vertex of a single tet with the other three
    /// fixed exactly, using only central differences of the energy.
    fn fd_minimize_free_vertex(mesh: &TetMesh, sys: &ElasticSystem, free: usize) -> Vec3 {
        let base = mesh.rest_positions();
        let energy = |p: &Vec3| {
            let mut x = base.clone();
            x.fixed_rows_mut::<3>(3 * free).copy_from(p);
            sys.energy(&x)
        };
        let grad = |p: &Vec3, h: f64| {
            Vec3::from_fn(|i, _| {
                let e = Vec3::ith(i, h);
                (energy(&(p + e)) - energy(&(p - e))) / (2.0 * h)
            })
        };
        let mut p = vertex(&base, free);
        for _ in 0..60 {
            let g = grad(&p, 1e-6);
            let h = nalgebra::Matrix3::from_fn(|i, j| {
                let e = Vec3::ith(j, 1e-4);
                (grad(&(p + e), 1e-6)[i] - grad(&(p - e), 1e-6)[i]) / 2e-4
            });
            let step = h.lu().solve(&-g).unwrap();
            p += step;
            if step.norm() < 1e-13 {
                break;
            }
        }
        p
    }

    #[test]
    fn single_tet_matches_generic_minimizer() {
        let mesh = fixtures::single_tet();
        let params = MaterialParams::default();
        let s = PlasticField::constant(1, &[2.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let sys = ElasticSystem::new(&mesh, &params, &s).unwrap();
        let x0 = mesh.rest_positions();
        let free = 3;
        let oracle = fd_minimize_free_vertex(&mesh, &sys, free);

        // stiff springs stand in for exact pins; they yield by about force / k
        let att = pin_all(&mesh, &[0, 1, 2], &x0, 1e11);
        let st = static_solve_attached(&mesh, &params, &s, &att, &x0, &NewtonOptions::default()).unwrap();
        assert!(st.converged);
        let got = vertex(&st.x, free);
        assert!((got - oracle).norm() < 1e-5 * oracle.norm(), "{got} vs {oracle}");
        assert!((got - vertex(&x0, free)).norm() > 1e-2);
    }

    #[test]
    fn resolve_from_solution_takes_zero_iterations() {
        let mesh = fixtures::beam();
        let params = MaterialParams::default();
        let s = fixtures::smooth_field(&mesh, 0.1, 3);
        let x = mesh.rest_positions();
        let att = pin_all(&mesh, &[0, 1, 9, 27], &x, 1e8);
        let opts = NewtonOptions::default();
        let st = static_solve_attached(&mesh, &params, &s, &att, &x, &opts).unwrap();
        assert!(st.converged && st.iterations > 0);
        let again = static_solve_attached(&mesh, &params, &s, &att, &st.x, &opts).unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.x, st.x);
    }

    #[test]
    fn unattached_identity_target_is_rest() {
        let mesh = fixtures::cube();
        let gauge = Gauge::new(&mesh, mesh.surface_vertices()).unwrap();
        let st = static_solve_unattached(
            &mesh,
            &MaterialParams::default(),
            &PlasticField::identity(mesh.n_tets()),
            &Vec3::zeros(),
            &Matrix3::identity(),
            &gauge,
            &mesh.rest_positions(),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(st.converged);
        assert!((&st.x - mesh.rest_positions()).amax() < 1e-12);
    }

    /// Dense Newton with six coordinates eliminated: vertex 0 fixed, vertex 1
    /// free along x only, vertex 2 free in the xy-plane. Statically
    /// determinate, so the reactions vanish at equilibrium.
    fn six_dof_pinned_equilibrium(sys: &ElasticSystem, x0: &DVector<f64>) -> DVector<f64> {
        let fixed = [0, 1, 2, 4, 5, 8];
        let mut x = x0.clone();
        for _ in 0..100 {
            let ev = sys.evaluate(&x, true, false);
            let mut h = ev.hessian.unwrap().to_dense();
            let mut g = ev.gradient.clone();
            for &i in &fixed {
                h.row_mut(i).fill(0.0);
                h.column_mut(i).fill(0.0);
                h[(i, i)] = 1.0;
                g[i] = 0.0;
            }
            if g.norm() < 1e-10 {
                break;
            }
            let d = h.lu().solve(&-g).unwrap();
            let mut step = 1.0;
            while sys.energy(&(&x + &d * step)) > ev.energy && step > 1e-8 {
                step *= 0.5;
            }
            x += d * step;
        }
        x
    }

    #[test]
    fn unattached_matches_gauge_fixed_oracle() {
        let mesh = fixtures::five_tet_cube();
        let params = MaterialParams::default();
        let s = fixtures::smooth_field(&mesh, 0.12, 11);
        let sys = ElasticSystem::new(&mesh, &params, &s).unwrap();
        let gauge = Gauge::new(&mesh, (0..mesh.n_vertices()).collect()).unwrap();
        let r = nalgebra::Rotation3::from_euler_angles(0.2, -0.4, 0.7).into_inner();
        let t = Vec3::new(0.3, -0.1, 0.05);
        let st = static_solve_unattached(
            &mesh,
            &params,
            &s,
            &t,
            &r,
            &gauge,
            &mesh.rest_positions(),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(st.converged);
        assert!(st.constraint_residual <= 1e-8, "{}", st.constraint_residual);

        let oracle = six_dof_pinned_equilibrium(&sys, &mesh.rest_positions());
        let oracle = gauge.fix(&oracle, &r, &t).unwrap();
        assert!((&st.x - &oracle).amax() < 1e-9, "{}", (&st.x - &oracle).amax());
    }

    #[test]
    fn unattached_potential_derivatives_match_differences() {
        let mesh = fixtures::five_tet_cube();
        let params = MaterialParams::default();
        let s = fixtures::smooth_field(&mesh, 0.1, 5);
        let gauge = Gauge::new(&mesh, vec![0, 3, 5, 6, 7]).unwrap();
        let pot = UnattachedPotential {
            sys: ElasticSystem::new(&mesh, &params, &s).unwrap(),
            gauge: &gauge,
            target_r: nalgebra::Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner(),
            target_t: Vec3::new(0.01, 0.0, -0.02),
            rho_t: 3.0e5,
            rho_r: 7.0e4,
        };
        let mut x = mesh.rest_positions();
        for i in 0..x.len() {
            x[i] += 0.02 * ((i * 7 % 11) as f64 / 11.0 - 0.5);
        }
        let ev = pot.evaluate(&x, true, false).unwrap();
        let h = ev.hessian.unwrap().to_dense();
        let step = 1e-6;
        let mut worst_g: f64 = 0.0;
        let mut worst_h: f64 = 0.0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let fd = (pot.energy(&xp) - pot.energy(&xm)) / (2.0 * step);
            worst_g = worst_g.max((fd - ev.gradient[i]).abs() / ev.gradient.amax());
            let gp = pot.evaluate(&xp, false, false).unwrap().gradient;
            let gm = pot.evaluate(&xm, false, false).unwrap().gradient;
            let col = (gp - gm) / (2.0 * step);
            worst_h = worst_h.max((col - h.column(i)).amax() / h.amax());
        }
        assert!(worst_g < 1e-6, "{worst_g}");
        assert!(worst_h < 1e-6, "{worst_h}");
    }

    #[test]
    fn stiffness_nullspace_at_and_off_equilibrium() {
        let mesh = fixtures::cube();
        let params = MaterialParams::default();
        let s = fixtures::smooth_field(&mesh, 0.12, 2);
        let sys = ElasticSystem::new(&mesh, &params, &s).unwrap();
        let gauge = Gauge::new(&mesh, mesh.surface_vertices()).unwrap();
        let st = static_solve_unattached(
            &mesh,
            &params,
            &s,
            &Vec3::zeros(),
            &Matrix3::identity(),
            &gauge,
            &mesh.rest_positions(),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!(st.converged);
        let k = sys.stiffness(&st.x);
        let knorm = k.spectral_norm_estimate(100);
        for psi in stiffness_nullspace(&st.x) {
            assert!(k.mul_vec(&psi).norm() <= 1e-7 * knorm);
        }

        // rest shape under nonuniform plasticity is stressed
        let x = mesh.rest_positions();
        let k = sys.stiffness(&x);
        let knorm = k.spectral_norm_estimate(100);
        let psi = stiffness_nullspace(&x);
        for p in &psi[..3] {
            assert!(k.mul_vec(p).norm() <= 1e-10 * knorm);
        }
        let worst_rot = psi[3..].iter().map(|p| k.mul_vec(p).norm()).fold(0.0, f64::max);
        assert!(worst_rot > 1e-3 * knorm, "{worst_rot} vs {knorm}");
    }
}
