//! Forward-simulated ground truth: prescribe a plastic field, solve for its
//! equilibrium, sample markers from the deformed surface.

use nalgebra::{DVector, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{static_solve_attached, static_solve_unattached, EquilibriumState, Gauge, NewtonOptions};
use crate::equilibrium::polar::polar;
use crate::error::{Error, Result};
use crate::fixtures;
use crate::geometry::Vec3;
use crate::material::{MaterialParams, PlasticField};
use crate::optimizer::{
    attachment_terms, fit, Attachment, ConstraintSet, ErrorStats, FitResult, IcpMarker, Landmark, SolveConfig,
};
use crate::tetmesh::{vertex, MaterialPoint, TetMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FieldRecipe {
    Identity,
    Constant { s: [f64; 6] },
    /// `s₁₁ = 1 + a ŷ` with `ŷ ∈ [−1, 1]` across the height: the top
    /// fibers grow, the bottom ones shrink, and a beam bends.
    Bend { amplitude: f64 },
    /// [`fixtures::smooth_field`]
    Smooth { amplitude: f64, seed: u64 },
    /// `s₁₁ = factor` on tets whose centroid lies in `[lo, hi]` along x
    /// (fractions of the length), identity elsewhere.
    Stretch { lo: f64, hi: f64, factor: f64 },
}

impl FieldRecipe {
    pub fn build(&self, mesh: &TetMesh) -> Result<PlasticField> {
        let m = mesh.n_tets();
        let field = match self {
            FieldRecipe::Identity => PlasticField::identity(m),
            FieldRecipe::Constant { s } => PlasticField::constant(m, s),
            FieldRecipe::Bend { amplitude } => {
                let rest = mesh.rest_positions();
                let (lo, hi) = mesh
                    .vertices_rest()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.y), b.max(v.y)));
                let mut f = PlasticField::identity(m);
                for t in 0..m {
                    let c = mesh.tet_positions(&rest, t).iter().sum::<Vec3>() / 4.0;
                    let yhat = 2.0 * (c.y - lo) / (hi - lo) - 1.0;
                    let mut s = crate::material::IDENTITY_S;
                    s[0] += amplitude * yhat;
                    f.set_tet(t, &s);
                }
                f
            }
            FieldRecipe::Smooth { amplitude, seed } => fixtures::smooth_field(mesh, *amplitude, *seed),
            FieldRecipe::Stretch { lo, hi, factor } => {
                let mut f = PlasticField::identity(m);
                for t in stretch_region(mesh, *lo, *hi) {
                    let mut s = crate::material::IDENTITY_S;
                    s[0] = *factor;
                    f.set_tet(t, &s);
                }
                f
            }
        };
        let min = field.min_eigenvalue();
        if !(min > 0.0) {
            return Err(Error::Precondition(format!(
                "field recipe is not positive definite everywhere (min eigenvalue {min:e})"
            )));
        }
        Ok(field)
    }
}

/// Tets whose rest centroid lies in `[lo, hi]` along x, as fractions of
/// the x extent.
pub fn stretch_region(mesh: &TetMesh, lo: f64, hi: f64) -> Vec<usize> {
    let rest = mesh.rest_positions();
    let (a, b) = mesh
        .vertices_rest()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.x), b.max(v.x)));
    (0..mesh.n_tets())
        .filter(|&t| {
            let c = mesh.tet_positions(&rest, t).iter().sum::<Vec3>() / 4.0;
            let u = (c.x - a) / (b - a);
            (lo..=hi).contains(&u)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub recipe: FieldRecipe,
    /// Pin the vertices of the lowest-x face with attachments at rest.
    pub attached: bool,
    /// Surface vertices sampled as ICP markers.
    pub markers: usize,
    /// How many of the sampled vertices also become landmarks.
    pub landmarks: usize,
    /// Standard deviation of the Gaussian noise on ICP targets, in m.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub mesh: TetMesh,
    pub params: MaterialParams,
    pub field: PlasticField,
    pub equilibrium: EquilibriumState,
    pub constraints: ConstraintSet,
    pub marker_vertices: Vec<usize>,
    pub spec: SyntheticSpec,
}

impl SyntheticCase {
    pub fn x(&self) -> &DVector<f64> {
        &self.equilibrium.x
    }
}

/// Rest vertices on the face of minimal x.
pub fn pinned_face(mesh: &TetMesh) -> Vec<usize> {
    let tol = 1e-9 * mesh.rest_bbox_diagonal();
    let min = mesh.vertices_rest().iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
    (0..mesh.n_vertices()).filter(|&v| mesh.vertices_rest()[v].x <= min + tol).collect()
}

/// Material point sitting exactly on vertex `v`.
pub fn vertex_material_point(mesh: &TetMesh, v: usize) -> MaterialPoint {
    let t = mesh.tets().iter().position(|t| t.contains(&v)).expect("every vertex is used");
    let mut b = [0.0; 4];
    b[mesh.tets()[t].iter().position(|&a| a == v).unwrap()] = 1.0;
    MaterialPoint { tet: t, barycentric: b }
}

pub fn make_synthetic(mesh: &TetMesh, params: &MaterialParams, spec: &SyntheticSpec) -> Result<SyntheticCase> {
    let field = spec.recipe.build(mesh)?;
    let rest = mesh.rest_positions();
    let opts = NewtonOptions::default();
    let pinned = if spec.attached { pinned_face(mesh) } else { Vec::new() };
    let attachments: Vec<Attachment> = pinned
        .iter()
        .map(|&v| Attachment {
            point: vertex_material_point(mesh, v),
            target: mesh.vertices_rest()[v],
            weight: 1.0,
        })
        .collect();
    let equilibrium = if spec.attached {
        let set = ConstraintSet {
            attachments: attachments.clone(),
            ..Default::default()
        };
        let terms = attachment_terms(mesh, &set, SolveConfig::default().beta);
        static_solve_attached(mesh, params, &field, &terms, &rest, &opts)?
    } else {
        let gauge = Gauge::new(mesh, mesh.surface_vertices())?;
        static_solve_unattached(mesh, params, &field, &Vec3::zeros(), &Matrix3::identity(), &gauge, &rest, &opts)?
    };
    if !equilibrium.converged {
        return Err(Error::NotEquilibrium {
            residual: equilibrium.residual_norm,
            tolerance: crate::equilibrium::default_force_tol(mesh, params),
        });
    }

    let candidates: Vec<usize> = mesh.surface_vertices().into_iter().filter(|v| !pinned.contains(v)).collect();
    let count = spec.markers.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen: Vec<usize> = sample(&mut rng, candidates.len(), count).into_iter().map(|i| candidates[i]).collect();
    chosen.sort_unstable();
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Precondition(e.to_string()))?;
    let x = &equilibrium.x;
    let icp = chosen
        .iter()
        .map(|&v| IcpMarker {
            target: vertex(x, v) + Vec3::from_fn(|_, _| if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 }),
            weight: 1.0,
        })
        .collect();
    let stride = if spec.landmarks == 0 { usize::MAX } else { (count / spec.landmarks).max(1) };
    let landmarks = chosen
        .iter()
        .step_by(stride.min(count.max(1)))
        .take(spec.landmarks)
        .map(|&v| Landmark {
            point: vertex_material_point(mesh, v),
            target: vertex(x, v),
            weight: 1.0,
        })
        .collect();
    Ok(SyntheticCase {
        mesh: mesh.clone(),
        params: *params,
        field,
        equilibrium,
        constraints: ConstraintSet {
            attachments,
            landmarks,
            icp,
        },
        marker_vertices: chosen,
        spec: spec.clone(),
    })
}

/// Named fixtures: `beam` (attached bend), `stretch` (attached beam whose
/// middle stretches 2×), `cube` (unattached, smooth), `blob` (unattached,
/// smooth, a lumpy genus-0 solid).
pub fn preset(name: &str) -> Option<(TetMesh, SyntheticSpec)> {
    Some(match name {
        "beam" => (
            fixtures::beam(),
            SyntheticSpec {
                recipe: FieldRecipe::Bend { amplitude: 0.15 },
                attached: true,
                markers: 60,
                landmarks: 15,
                noise: 0.0,
                seed: 1,
            },
        ),
        "stretch" => (
            fixtures::beam(),
            SyntheticSpec {
                recipe: FieldRecipe::Stretch {
                    lo: 0.375,
                    hi: 0.625,
                    factor: 2.0,
                },
                attached: true,
                markers: 60,
                landmarks: 15,
                noise: 0.0,
                seed: 5,
            },
        ),
        "cube" => (
            fixtures::cube(),
            SyntheticSpec {
                recipe: FieldRecipe::Smooth { amplitude: 0.12, seed: 4 },
                attached: false,
                markers: 40,
                landmarks: 10,
                noise: 0.0,
                seed: 2,
            },
        ),
        "blob" => (
            fixtures::blob(),
            SyntheticSpec {
                recipe: FieldRecipe::Smooth { amplitude: 0.12, seed: 9 },
                attached: false,
                markers: 80,
                landmarks: 20,
                noise: 0.0,
                seed: 3,
            },
        ),
        _ => return None,
    })
}

pub const PRESETS: [&str; 4] = ["beam", "stretch", "cube", "blob"];

#[derive(Debug, Clone)]
pub struct RecoveryScore {
    pub fit: FitResult,
    /// ICP markers to the fitted surface.
    pub marker_error: ErrorStats,
    /// Fitted marker vertices to their noise-free positions.
    pub truth_error: ErrorStats,
    /// Per tet `‖S_fit − S*‖_F / ‖S*‖_F` with `S` the symmetric polar factor.
    pub field_error_mean: f64,
    pub field_error_max: f64,
}

/// Gauge-free per-tet field error.
pub fn field_errors(fit: &PlasticField, truth: &PlasticField) -> Result<Vec<f64>> {
    (0..fit.n_tets())
        .map(|t| {
            let (_, a) = polar(&fit.fp(t))?;
            let (_, b) = polar(&truth.fp(t))?;
            Ok((a - b).norm() / b.norm())
        })
        .collect()
}

pub fn recover_and_score(case: &SyntheticCase, config: &SolveConfig) -> Result<RecoveryScore> {
    let fit = fit(&case.mesh, &case.params, &case.constraints, config)?;
    let marker_error = fit
        .report
        .e_final
        .icp
        .ok_or_else(|| Error::Precondition("synthetic case has no ICP markers".into()))?;
    let x = &fit.state.x;
    let truth = case.x();
    let d: Vec<f64> = case
        .marker_vertices
        .iter()
        .map(|&v| (x.fixed_rows::<3>(3 * v) - truth.fixed_rows::<3>(3 * v)).norm())
        .collect();
    let truth_error = ErrorStats::from_meters(&d).expect("markers checked above");
    let errs = field_errors(&fit.field, &case.field)?;
    Ok(RecoveryScore {
        marker_error,
        truth_error,
        field_error_mean: errs.iter().sum::<f64>() / errs.len() as f64,
        field_error_max: errs.iter().fold(0.0, |a: f64, b| a.max(*b)),
        fit,
    })
}
