//! Global energy, forces and stiffness.

use nalgebra::{DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Vec3;
use crate::material::{
    derivatives_fp, tet_elastic, DerivativeOrder, Mat12, MaterialParams, PlasticField, PlasticTet, StableNeoHookean,
};
use crate::sparse::{SparseMatrix, TripletBuilder};
use crate::tetmesh::{vertex, MaterialPoint, TetMesh};

/// Quadratic point term `w/2 ‖Σ_a c_a x_a − target‖²`, used for attachment
/// springs and for every marker row of the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTerm {
    pub support: Vec<(usize, f64)>,
    pub target: Vec3,
    pub weight: f64,
}

impl PointTerm {
    pub fn from_material(mesh: &TetMesh, p: &MaterialPoint, target: Vec3, weight: f64) -> Self {
        let t = mesh.tets()[p.tet];
        Self {
            support: (0..4).filter(|&k| p.barycentric[k] != 0.0).map(|k| (t[k], p.barycentric[k])).collect(),
            target,
            weight,
        }
    }

    pub fn point(&self, x: &DVector<f64>) -> Vec3 {
        self.support.iter().map(|&(v, c)| vertex(x, v) * c).sum()
    }

    /// `A x + b`
    pub fn residual(&self, x: &DVector<f64>) -> Vec3 {
        self.point(x) - self.target
    }

    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.weight * self.residual(x).norm_squared()
    }

    fn add_gradient(&self, x: &DVector<f64>, g: &mut DVector<f64>) {
        let r = self.residual(x) * self.weight;
        for &(v, c) in &self.support {
            for d in 0..3 {
                g[3 * v + d] += c * r[d];
            }
        }
    }

    fn add_hessian(&self, b: &mut TripletBuilder) {
        for &(va, ca) in &self.support {
            for &(vb, cb) in &self.support {
                for d in 0..3 {
                    b.push(3 * va + d, 3 * vb + d, self.weight * ca * cb);
                }
            }
        }
    }
}

pub fn terms_energy(terms: &[PointTerm], x: &DVector<f64>) -> f64 {
    terms.iter().map(|t| t.energy(x)).sum()
}

/// Elastic energy of a mesh at fixed plasticity.
#[derive(Debug, Clone)]
pub struct ElasticSystem<'a> {
    mesh: &'a TetMesh,
    model: StableNeoHookean,
    params: MaterialParams,
    plastic: Vec<PlasticTet>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<SparseMatrix>,
}

fn project_psd(h: &Mat12) -> Mat12 {
    let eig = SymmetricEigen::new(*h);
    let d = eig.eigenvalues.map(|l| l.max(0.0));
    eig.eigenvectors * Mat12::from_diagonal(&d) * eig.eigenvectors.transpose()
}

impl<'a> ElasticSystem<'a> {
    pub fn new(mesh: &'a TetMesh, params: &MaterialParams, s: &PlasticField) -> Result<Self> {
        params.validate()?;
        assert_eq!(s.n_tets(), mesh.n_tets());
        let plastic = (0..mesh.n_tets())
            .map(|t| PlasticTet::new(&s.tet(t), mesh.rest_volume(t)).map_err(|e| e.at_tet(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mesh,
            model: params.model(),
            params: *params,
            plastic,
        })
    }

    pub fn mesh(&self) -> &TetMesh {
        self.mesh
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let e: Vec<f64> = (0..self.mesh.n_tets())
            .into_par_iter()
            .map(|t| {
                let f = self.mesh.deformation_gradient(x, t) * self.plastic[t].fp_inv;
                self.plastic[t].volume * self.model.psi(&f)
            })
            .collect();
        e.iter().sum()
    }

    /// Energy, gradient and optionally the stiffness matrix. With
    /// `psd_project`, every element block is projected onto its positive
    /// semidefinite part.
    pub fn evaluate(&self, x: &DVector<f64>, hessian: bool, psd_project: bool) -> Evaluation {
        let mesh = self.mesh;
        let per_tet: Vec<_> = (0..mesh.n_tets())
            .into_par_iter()
            .map(|t| {
                let mut d = tet_elastic(
                    &self.model,
                    &mesh.tet_positions(x, t),
                    mesh.rest_shape_inverse(t),
                    &self.plastic[t],
                    hessian,
                );
                if psd_project {
                    d.hess = d.hess.map(|h| project_psd(&h));
                }
                d
            })
            .collect();
        let n3 = 3 * mesh.n_vertices();
        let mut energy = 0.0;
        let mut gradient = DVector::zeros(n3);
        let mut trip = hessian.then(|| TripletBuilder::with_capacity(n3, n3, 144 * mesh.n_tets()));
        for (t, d) in per_tet.iter().enumerate() {
            energy += d.energy;
            let tv = mesh.tets()[t];
            for a in 0..4 {
                for i in 0..3 {
                    gradient[3 * tv[a] + i] += d.grad[3 * a + i];
                }
            }
            if let (Some(b), Some(h)) = (trip.as_mut(), d.hess.as_ref()) {
                for a in 0..4 {
                    for bb in 0..4 {
                        for i in 0..3 {
                            for j in 0..3 {
                                b.push(3 * tv[a] + i, 3 * tv[bb] + j, h[(3 * a + i, 3 * bb + j)]);
                            }
                        }
                    }
                }
            }
        }
        Evaluation {
            energy,
            gradient,
            hessian: trip.map(|b| b.build()),
        }
    }

    /// Elastic stiffness `K = ∂²E/∂x²`.
    pub fn stiffness(&self, x: &DVector<f64>) -> SparseMatrix {
        self.evaluate(x, true, false).hessian.unwrap()
    }

    /// Elastic force `f_e = −∂E/∂x`.
    pub fn force(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.evaluate(x, false, false).gradient
    }

    /// Mixed second derivative `∂²E/∂x∂s` (`3n × 6m`).
    pub fn mixed_hessian(&self, x: &DVector<f64>) -> SparseMatrix {
        let mesh = self.mesh;
        let y = crate::material::y_matrix();
        let blocks: Vec<_> = (0..mesh.n_tets())
            .into_par_iter()
            .map(|t| {
                let d = derivatives_fp(
                    &self.model,
                    &mesh.tet_positions(x, t),
                    mesh.rest_shape_inverse(t),
                    &self.plastic[t],
                    DerivativeOrder::Second,
                );
                d.hess_xp * y
            })
            .collect();
        let mut b = TripletBuilder::with_capacity(3 * mesh.n_vertices(), 6 * mesh.n_tets(), 72 * mesh.n_tets());
        for (t, h) in blocks.iter().enumerate() {
            let tv = mesh.tets()[t];
            for a in 0..4 {
                for i in 0..3 {
                    for k in 0..6 {
                        b.push(3 * tv[a] + i, 6 * t + k, h[(3 * a + i, k)]);
                    }
                }
            }
        }
        b.build()
    }

    /// Gradient of the elastic energy with respect to `s` (`6m`).
    pub fn gradient_s(&self, x: &DVector<f64>) -> DVector<f64> {
        let mesh = self.mesh;
        let y = crate::material::y_matrix();
        let g: Vec<_> = (0..mesh.n_tets())
            .into_par_iter()
            .map(|t| {
                let d = derivatives_fp(
                    &self.model,
                    &mesh.tet_positions(x, t),
                    mesh.rest_shape_inverse(t),
                    &self.plastic[t],
                    DerivativeOrder::First,
                );
                y.transpose() * d.grad_p
            })
            .collect();
        DVector::from_iterator(6 * mesh.n_tets(), g.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()))
    }
}

/// Total potential `E_e + Σ springs`, its gradient and optionally Hessian.
pub fn evaluate_with_terms(
    sys: &ElasticSystem,
    terms: &[PointTerm],
    x: &DVector<f64>,
    hessian: bool,
    psd_project: bool,
) -> Evaluation {
    let mut ev = sys.evaluate(x, hessian, psd_project);
    for t in terms {
        ev.energy += t.energy(x);
        t.add_gradient(x, &mut ev.gradient);
    }
    if let Some(h) = ev.hessian.take() {
        let n = h.nrows();
        let mut b = TripletBuilder::with_capacity(n, n, h.nnz() + terms.len() * 48);
        for (r, c, v) in h.iter() {
            b.push(r, c, v);
        }
        for t in terms {
            t.add_hessian(&mut b);
        }
        ev.hessian = Some(b.build());
    }
    ev
}

/// Stacked `√w · A` for a list of point terms (`3·terms × 3n`), sparse.
pub fn weighted_selection(terms: &[PointTerm], n_vertices: usize) -> SparseMatrix {
    let mut b = TripletBuilder::new(3 * terms.len(), 3 * n_vertices);
    for (k, t) in terms.iter().enumerate() {
        let sw = t.weight.sqrt();
        for &(v, c) in &t.support {
            for d in 0..3 {
                b.push(3 * k + d, 3 * v + d, sw * c);
            }
        }
    }
    b.build()
}

/// Stacked `√w · (A x + b)`.
pub fn weighted_residuals(terms: &[PointTerm], x: &DVector<f64>) -> DVector<f64> {
    let mut r = DVector::zeros(3 * terms.len());
    for (k, t) in terms.iter().enumerate() {
        let v = t.residual(x) * t.weight.sqrt();
        r.fixed_rows_mut::<3>(3 * k).copy_from(&v);
    }
    r
}
