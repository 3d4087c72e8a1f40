//! Benchmark fixtures.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use plasmorph_core::equilibrium::{static_solve_attached, EquilibriumState, NewtonOptions, PointTerm};
use plasmorph_core::optimizer::SolveConfig;
use plasmorph_core::strain_laplacian::StrainLaplacian;
use plasmorph_core::validation::synthetic::{pinned_face, vertex_material_point};
use plasmorph_core::{fixtures, MaterialParams, PlasticField, TetMesh, Vec3};

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `γL² + ZᵀZ` on a grid with a random dense `Z`.
pub struct NormalProblem {
    pub lap: StrainLaplacian,
    pub z: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl NormalProblem {
    /// `rows` marker rows on an `nx × ny × nz` cell grid (six tets per cell).
    pub fn grid(nx: usize, ny: usize, nz: usize, rows: usize, seed: u64) -> Self {
        let mesh = fixtures::grid(nx, ny, nz, Vec3::new(0.05 * nx as f64, 0.05 * ny as f64, 0.05 * nz as f64));
        let lap = StrainLaplacian::build(&mesh).expect("grid is connected");
        let n = 6 * mesh.n_tets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, rows, n) * 1e-2;
        let h = gaussian(&mut rng, n, 1).column(0).into_owned();
        Self { lap, z, h }
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// `[Z; Ψᵀ]`
    pub fn zhat(&self) -> DMatrix<f64> {
        let psi = self.lap.nullspace();
        let mut out = DMatrix::zeros(self.z.nrows() + psi.len(), self.dim());
        out.rows_mut(0, self.z.nrows()).copy_from(&self.z);
        for (i, p) in psi.iter().enumerate() {
            out.row_mut(self.z.nrows() + i).copy_from(&p.transpose());
        }
        out
    }

    /// `(L² + ZᵀZ) v` without forming the matrix.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.lap.apply_squared(v) + self.z.tr_mul(&(&self.z * v))
    }
}

/// Beam pinned at one end with a bending field.
pub struct BeamProblem {
    pub mesh: TetMesh,
    pub params: MaterialParams,
    pub field: PlasticField,
    pub attachments: Vec<PointTerm>,
}

impl BeamProblem {
    pub fn new(amplitude: f64, seed: u64) -> Self {
        let mesh = fixtures::beam();
        let field = fixtures::smooth_field(&mesh, amplitude, seed);
        let beta = SolveConfig::default().beta;
        let attachments = pinned_face(&mesh)
            .into_iter()
            .map(|v| {
                let p = vertex_material_point(&mesh, v);
                PointTerm::from_material(&mesh, &p, mesh.vertices_rest()[v], beta)
            })
            .collect();
        Self {
            mesh,
            params: MaterialParams::default(),
            field,
            attachments,
        }
    }

    pub fn equilibrium(&self) -> EquilibriumState {
        static_solve_attached(
            &self.mesh,
            &self.params,
            &self.field,
            &self.attachments,
            &self.mesh.rest_positions(),
            &NewtonOptions::default(),
        )
        .expect("beam equilibrium converges")
    }
}
