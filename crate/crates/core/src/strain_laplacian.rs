//! Plastic strain Laplacian.
//!
//! `L^sc` is the combinatorial Laplacian of the tet face-adjacency graph.
//! `L` applies it to each of the six components of `s`, scaled by
//! `(1, √2, √2, 1, √2, 1)` since `s2`, `s3`, `s5` each control two entries of
//! `F_p`. On a connected mesh the nullspace of `L` is spanned by the six
//! constant fields `ψ_c` (value `1/√m` on component `c`).
//!
//! `B = γL² − Σ ψ_c ψ_cᵀ` is never assembled: the correction is dense. Each
//! component block of `B` is `γ ξ_c² (L^sc)² − ψψᵀ`, which is inverted with
//! the rank-corrected known-nullspace solve; a single bordered factorization
//! of `(L^sc)²` serves all six components.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::singular_linalg::{KnownNullspaceMatrix, SymmetricSolver};
use crate::sparse::{SparseMatrix, TripletBuilder};
use crate::tetmesh::TetMesh;

pub const COMPONENT_WEIGHTS: [f64; 6] = [
    1.0,
    std::f64::consts::SQRT_2,
    std::f64::consts::SQRT_2,
    1.0,
    std::f64::consts::SQRT_2,
    1.0,
];

#[derive(Debug, Clone)]
pub struct StrainLaplacian {
    m: usize,
    scalar: SparseMatrix,
    neighbors: Vec<Vec<usize>>,
}

impl StrainLaplacian {
    pub fn build(mesh: &TetMesh) -> Result<Self> {
        Self::from_adjacency(mesh.n_tets(), mesh.adjacency())
    }

    /// From an explicit list of adjacent pairs; rejects disconnected graphs.
    pub fn from_adjacency(m: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut b = TripletBuilder::with_capacity(m, m, 4 * pairs.len() + m);
        let mut parent: Vec<usize> = (0..m).collect();
        let mut neighbors = vec![Vec::new(); m];
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..m {
            b.push(i, i, 0.0);
        }
        for &(i, j) in pairs {
            b.push(i, i, 1.0);
            b.push(j, j, 1.0);
            b.push(i, j, -1.0);
            b.push(j, i, -1.0);
            neighbors[i].push(j);
            neighbors[j].push(i);
            let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
            parent[ri.max(rj)] = ri.min(rj);
        }
        let components = (0..m).filter(|&i| root(&mut parent, i) == i).count();
        if components != 1 {
            return Err(Error::Disconnected(components));
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            m,
            scalar: b.build(),
            neighbors,
        })
    }

    pub fn n_tets(&self) -> usize {
        self.m
    }

    pub fn scalar(&self) -> &SparseMatrix {
        &self.scalar
    }

    /// `ψ_c`: `1/√m` on component `c`, zero elsewhere.
    pub fn nullspace(&self) -> Vec<DVector<f64>> {
        let v = 1.0 / (self.m as f64).sqrt();
        (0..6)
            .map(|c| DVector::from_fn(6 * self.m, |i, _| if i % 6 == c { v } else { 0.0 }))
            .collect()
    }

    /// `L s`, evaluated as `Σ_j (s_i − s_j)` over neighbors so that constant
    /// fields map to exactly zero.
    pub fn apply(&self, s: &DVector<f64>) -> DVector<f64> {
        assert_eq!(s.len(), 6 * self.m);
        let mut out = DVector::zeros(6 * self.m);
        for (i, nb) in self.neighbors.iter().enumerate() {
            for c in 0..6 {
                let si = s[6 * i + c];
                let acc: f64 = nb.iter().map(|&j| si - s[6 * j + c]).sum();
                out[6 * i + c] = COMPONENT_WEIGHTS[c] * acc;
            }
        }
        out
    }

    /// `L² s`
    pub fn apply_squared(&self, s: &DVector<f64>) -> DVector<f64> {
        self.apply(&self.apply(s))
    }

    /// `‖L s‖²`
    pub fn smoothness(&self, s: &DVector<f64>) -> f64 {
        self.apply(s).norm_squared()
    }

    /// Explicit `6m × 6m` operator.
    pub fn assemble(&self) -> SparseMatrix {
        let mut b = TripletBuilder::with_capacity(6 * self.m, 6 * self.m, 6 * self.scalar.nnz());
        for (r, c, v) in self.scalar.iter() {
            for k in 0..6 {
                b.push(6 * r + k, 6 * c + k, v * COMPONENT_WEIGHTS[k]);
            }
        }
        b.build()
    }

    /// Factored `B = γL² − Σψψᵀ`.
    pub fn base_matrix(&self, gamma: f64) -> Result<BaseMatrix> {
        if !(gamma > 0.0) {
            return Err(Error::Precondition(format!("smoothness weight must be positive, got {gamma}")));
        }
        let l2 = self.scalar.matmul(&self.scalar);
        let ones = DVector::from_element(self.m, 1.0);
        let kkt = KnownNullspaceMatrix::new(l2, &[ones], 1e-10).map_err(|e| match e {
            Error::Factorization(msg) => Error::Factorization(format!("base matrix: {msg}")),
            e => e,
        })?;
        Ok(BaseMatrix {
            lap: self.clone(),
            gamma,
            kkt,
        })
    }
}

#[derive(Debug)]
pub struct BaseMatrix {
    lap: StrainLaplacian,
    gamma: f64,
    kkt: KnownNullspaceMatrix,
}

impl BaseMatrix {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn laplacian(&self) -> &StrainLaplacian {
        &self.lap
    }

    /// `B v`
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.lap.apply_squared(v) * self.gamma;
        for psi in self.lap.nullspace() {
            let d = psi.dot(v);
            out.axpy(-d, &psi, 1.0);
        }
        out
    }

    /// Dense `B` for small meshes.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = 6 * self.lap.m;
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            d.set_column(j, &self.apply(&e));
        }
        d
    }
}

impl SymmetricSolver for BaseMatrix {
    fn dim(&self) -> usize {
        6 * self.lap.m
    }

    fn solve(&self, h: &DVector<f64>) -> DVector<f64> {
        let m = self.lap.m;
        let cols: Vec<DVector<f64>> = (0..6).map(|c| DVector::from_fn(m, |t, _| h[6 * t + c])).collect();
        let mut out = DVector::zeros(6 * m);
        let sols: Vec<DVector<f64>> = cols
            .par_iter()
            .enumerate()
            .map(|(c, hc)| {
                let scale = self.gamma * COMPONENT_WEIGHTS[c].powi(2);
                // (scale·(L^sc)² − ψψᵀ)⁻¹ = (1/scale)·((L^sc)² − ψψᵀ/scale)⁻¹
                let y = self
                    .kkt
                    .solve_rank_corrected(&[-1.0 / scale], hc)
                    .expect("alpha is nonzero");
                y / scale
            })
            .collect();
        for (c, y) in sols.iter().enumerate() {
            for t in 0..m {
                out[6 * t + c] = y[t];
            }
        }
        out
    }

    fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.lap.m;
        let k = b.ncols();
        // gather all component right-hand sides into one multi-RHS solve
        let mut rhs = DMatrix::zeros(m, 6 * k);
        for j in 0..k {
            for c in 0..6 {
                for t in 0..m {
                    rhs[(t, 6 * j + c)] = b[(6 * t + c, j)];
                }
            }
        }
        let coef: Vec<f64> = (0..6 * k)
            .map(|col| rhs.column(col).sum() / (m as f64).sqrt())
            .collect();
        let x = self.kkt.solve_projected_many(&rhs);
        let inv_sqrt_m = 1.0 / (m as f64).sqrt();
        let mut out = DMatrix::zeros(6 * m, k);
        for j in 0..k {
            for c in 0..6 {
                let col = 6 * j + c;
                let scale = self.gamma * COMPONENT_WEIGHTS[c].powi(2);
                for t in 0..m {
                    out[(6 * t + c, j)] = x[(t, col)] / scale - coef[col] * inv_sqrt_m;
                }
            }
        }
        out
    }
}
