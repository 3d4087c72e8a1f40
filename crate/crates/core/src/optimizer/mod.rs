//! Staged Gauss-Newton fitting of a plastic field to sparse constraints.
//!
//! Each outer iteration: equilibrium `x(s)` is known, a Gauss-Newton
//! direction `Δs` is computed, Brent's method picks `η` along it with a
//! full equilibrium re-solve per trial, `s` is clamped to SPD, and closest
//! points of the ICP markers are refreshed. Unattached meshes alternate
//! with a rigid `(R, t)` update by weighted shape matching.

pub mod direction;
pub mod line_search;

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::assembly::terms_energy;
use crate::equilibrium::{
    apply_rigid, fit_rigid_weighted, static_solve_attached, static_solve_unattached, EquilibriumState, Gauge,
    NewtonOptions, PointTerm,
};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::material::{MaterialParams, PlasticField, DEFAULT_SPD_FLOOR};
use crate::strain_laplacian::{BaseMatrix, StrainLaplacian};
use crate::tetmesh::{MaterialPoint, SurfacePoint, TetMesh};

pub use direction::{constant_direction, gauss_newton_direction, Direction, Linearization};
pub use line_search::{line_search, LineSearchResult};

/// Material point tied by a stiff spring to a fixed position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub point: MaterialPoint,
    pub target: Vec3,
    pub weight: f64,
}

/// Material point with a known target position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub point: MaterialPoint,
    pub target: Vec3,
    pub weight: f64,
}

/// Position that must lie on the deformed surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpMarker {
    pub target: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub attachments: Vec<Attachment>,
    pub landmarks: Vec<Landmark>,
    pub icp: Vec<IcpMarker>,
}

impl ConstraintSet {
    pub fn is_attached(&self) -> bool {
        !self.attachments.is_empty()
    }

    pub fn validate(&self, mesh: &TetMesh) -> Result<()> {
        let check_point = |what: &str, i: usize, p: &MaterialPoint| -> Result<()> {
            if p.tet >= mesh.n_tets() {
                return Err(Error::Validation(format!(
                    "{what} {i}: tet {} out of range ({} tets)",
                    p.tet,
                    mesh.n_tets()
                )));
            }
            let sum: f64 = p.barycentric.iter().sum();
            if p.barycentric.iter().any(|b| !b.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("{what} {i}: barycentric weights must sum to 1")));
            }
            Ok(())
        };
        let check = |what: &str, i: usize, target: &Vec3, weight: f64| -> Result<()> {
            if !target.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("{what} {i}: non-finite target")));
            }
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::Validation(format!("{what} {i}: weight must be positive, got {weight}")));
            }
            Ok(())
        };
        for (i, a) in self.attachments.iter().enumerate() {
            check_point("attachment", i, &a.point)?;
            check("attachment", i, &a.target, a.weight)?;
        }
        for (i, l) in self.landmarks.iter().enumerate() {
            check_point("landmark", i, &l.point)?;
            check("landmark", i, &l.target, l.weight)?;
        }
        for (i, m) in self.icp.iter().enumerate() {
            check("icp marker", i, &m.target, m.weight)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialGuess,
    Attachments,
    Landmarks,
    Icp,
}

impl Stage {
    fn order(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::InitialGuess => "initial_guess",
            Stage::Attachments => "attachments",
            Stage::Landmarks => "landmarks",
            Stage::Icp => "icp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIter,
    IcpErrorMet,
    EtaSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Weight of landmarks and ICP markers.
    pub alpha: f64,
    /// Weight of attachments, also the spring stiffness per unit weight.
    pub beta: f64,
    /// Weight of the smoothness term `½‖Ls‖²`.
    pub gamma: f64,
    pub spd_floor: f64,
    /// Per stage.
    pub max_outer_iterations: usize,
    pub icp_stop_mm: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub brent_tol: f64,
    pub initial_guess: bool,
    pub stages: Vec<Stage>,
    pub newton_max_iterations: usize,
    /// Equilibrium force tolerance in N; default `1e-9 E L²`.
    pub force_tol: Option<f64>,
    /// Consecutive iterations with clamping that count as divergence.
    pub divergence_streak: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            alpha: 1e9,
            beta: 1e8,
            gamma: 1.0,
            spd_floor: DEFAULT_SPD_FLOOR,
            max_outer_iterations: 20,
            icp_stop_mm: 1.0,
            eta_min: 0.01,
            eta_max: 1.5,
            brent_tol: 1e-3,
            initial_guess: true,
            stages: vec![Stage::Attachments, Stage::Landmarks, Stage::Icp],
            newton_max_iterations: 100,
            force_tol: None,
            divergence_streak: 3,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("spd_floor", self.spd_floor),
            ("icp_stop_mm", self.icp_stop_mm),
            ("eta_max", self.eta_max),
            ("brent_tol", self.brent_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("config: {name} must be positive, got {v}")));
            }
        }
        if !(self.eta_min >= 0.0) {
            return Err(Error::Validation("config: eta_min must be non-negative".into()));
        }
        if self.max_outer_iterations == 0 || self.divergence_streak == 0 {
            return Err(Error::Validation(
                "config: max_outer_iterations and divergence_streak must be at least 1".into(),
            ));
        }
        if let Some(t) = self.force_tol {
            if !(t > 0.0) {
                return Err(Error::Validation("config: force_tol must be positive".into()));
            }
        }
        if self.stages.contains(&Stage::InitialGuess) {
            return Err(Error::Validation(
                "config: the initial guess is enabled by `initial_guess`, not listed as a stage".into(),
            ));
        }
        if self.stages.windows(2).any(|w| w[0].order() >= w[1].order()) {
            return Err(Error::Validation(
                "config: stages must be ordered attachments, landmarks, icp without repeats".into(),
            ));
        }
        Ok(())
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            max_iterations: self.newton_max_iterations,
            force_tol: self.force_tol,
        }
    }
}

/// Error statistics of one marker class, in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean_mm: f64,
    pub max_mm: f64,
}

impl ErrorStats {
    /// From distances in meters; `None` when empty.
    pub fn from_meters(d: &[f64]) -> Option<Self> {
        if d.is_empty() {
            return None;
        }
        Some(Self {
            count: d.len(),
            mean_mm: 1e3 * d.iter().sum::<f64>() / d.len() as f64,
            max_mm: 1e3 * d.iter().fold(0.0, |a: f64, b| a.max(*b)),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkerErrors {
    pub icp: Option<ErrorStats>,
    pub landmarks: Option<ErrorStats>,
    pub attachments: Option<ErrorStats>,
}

/// Per-marker distances in meters: ICP markers to the deformed surface,
/// landmarks and attachments to their targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkerDistances {
    pub icp: Vec<f64>,
    pub landmarks: Vec<f64>,
    pub attachments: Vec<f64>,
}

impl MarkerDistances {
    pub fn measure(mesh: &TetMesh, set: &ConstraintSet, x: &DVector<f64>) -> Self {
        Self {
            icp: closest_points(mesh, set, x).iter().map(|p| p.distance).collect(),
            landmarks: set
                .landmarks
                .iter()
                .map(|l| (l.point.position(mesh, x) - l.target).norm())
                .collect(),
            attachments: set
                .attachments
                .iter()
                .map(|a| (a.point.position(mesh, x) - a.target).norm())
                .collect(),
        }
    }

    pub fn stats(&self) -> MarkerErrors {
        MarkerErrors {
            icp: ErrorStats::from_meters(&self.icp),
            landmarks: ErrorStats::from_meters(&self.landmarks),
            attachments: ErrorStats::from_meters(&self.attachments),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: Stage,
    /// Counted from 1 within the stage.
    pub iteration: usize,
    /// Stage objective after the iteration.
    pub objective: f64,
    /// `γ/2 ‖Ls‖²`
    pub smoothness: f64,
    pub eta: f64,
    pub line_search_evaluations: usize,
    pub errors: MarkerErrors,
    /// Tets whose `F_p` was clamped to the SPD floor.
    pub clamped_tets: usize,
    pub equilibrium_residual: f64,
    pub force_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub iterations: usize,
    pub objective_start: f64,
    pub objective_end: f64,
    /// `None` when the stage ended without running (under-constrained
    /// initial guess).
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub attached: bool,
    pub n_vertices: usize,
    pub n_tets: usize,
    pub config: SolveConfig,
    pub stages: Vec<StageSummary>,
    pub skipped_stages: Vec<Stage>,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub e_init: MarkerErrors,
    pub e_final: MarkerErrors,
    /// Vertices of the shape-matching set (unattached meshes).
    pub gauge_vertices: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl SolveReport {
    pub fn total_iterations(&self) -> usize {
        self.iterations.len()
    }
}

/// Wall-clock timings, kept apart from the report so that reports of
/// repeated runs compare equal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub iterations: Vec<IterationTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTiming {
    pub stage: Stage,
    pub iteration: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub field: PlasticField,
    pub state: EquilibriumState,
    pub report: SolveReport,
    pub timings: Timings,
}

/// Closest points on the surface at `x` for every ICP marker.
pub fn closest_points(mesh: &TetMesh, set: &ConstraintSet, x: &DVector<f64>) -> Vec<SurfacePoint> {
    set.icp.par_iter().map(|m| mesh.closest_surface_point(x, &m.target)).collect()
}

/// Objective rows of one stage at positions `x`.
#[derive(Debug, Clone)]
pub struct StageTerms {
    pub terms: Vec<PointTerm>,
    /// Number of leading attachment rows in `terms`.
    pub n_attachments: usize,
    /// Closest points of the ICP rows (ICP stage only).
    pub icp: Vec<SurfacePoint>,
}

pub fn attachment_terms(mesh: &TetMesh, set: &ConstraintSet, beta: f64) -> Vec<PointTerm> {
    set.attachments
        .iter()
        .map(|a| PointTerm::from_material(mesh, &a.point, a.target, beta * a.weight))
        .collect()
}

fn uses_landmarks(set: &ConstraintSet, stage: Stage) -> bool {
    match stage {
        Stage::Landmarks => true,
        Stage::InitialGuess => !set.landmarks.is_empty(),
        _ => false,
    }
}

fn uses_icp(set: &ConstraintSet, stage: Stage) -> bool {
    match stage {
        Stage::Icp => true,
        Stage::InitialGuess => set.landmarks.is_empty(),
        _ => false,
    }
}

/// Rows `A_k x + b_k` with weights `c_k` active in `stage`. Attachments are
/// always active. ICP rows use closest points at `x`.
pub fn assemble_constraints(
    mesh: &TetMesh,
    set: &ConstraintSet,
    config: &SolveConfig,
    stage: Stage,
    x: &DVector<f64>,
) -> StageTerms {
    let mut terms = attachment_terms(mesh, set, config.beta);
    let n_attachments = terms.len();
    if uses_landmarks(set, stage) {
        terms.extend(
            set.landmarks
                .iter()
                .map(|l| PointTerm::from_material(mesh, &l.point, l.target, config.alpha * l.weight)),
        );
    }
    let mut icp = Vec::new();
    if uses_icp(set, stage) {
        icp = closest_points(mesh, set, x);
        let surface = mesh.surface_triangles();
        for (m, sp) in set.icp.iter().zip(&icp) {
            let tri = surface[sp.triangle].vertices;
            terms.push(PointTerm {
                support: (0..3).filter(|&k| sp.barycentric[k] != 0.0).map(|k| (tri[k], sp.barycentric[k])).collect(),
                target: m.target,
                weight: config.alpha * m.weight,
            });
        }
    }
    StageTerms {
        terms,
        n_attachments,
        icp,
    }
}

fn spans_plane(points: &[Vec3], scale: f64) -> bool {
    if points.len() < 3 {
        return false;
    }
    let c: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        cov += (p - c) * (p - c).transpose();
    }
    let mut sv: Vec<f64> = cov.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv[1] > 1e-12 * scale * scale
}

/// Shape-matching set `D` for an unattached mesh: vertices of landmark
/// tets and of the ICP markers' closest rest triangles; all surface
/// vertices if these do not span a plane.
pub fn gauge_vertices(mesh: &TetMesh, set: &ConstraintSet) -> Vec<usize> {
    let rest = mesh.rest_positions();
    let mut d: Vec<usize> = set.landmarks.iter().flat_map(|l| mesh.tets()[l.point.tet]).collect();
    let surface = mesh.surface_triangles();
    d.extend(closest_points(mesh, set, &rest).iter().flat_map(|p| surface[p.triangle].vertices));
    d.sort_unstable();
    d.dedup();
    let pts: Vec<Vec3> = d.iter().map(|&v| mesh.vertices_rest()[v]).collect();
    if spans_plane(&pts, mesh.rest_bbox_diagonal()) {
        d
    } else {
        mesh.surface_vertices()
    }
}

#[derive(Clone)]
enum Boundary {
    Attached(Vec<PointTerm>),
    Unattached {
        gauge: Gauge,
        rotation: Matrix3<f64>,
        translation: Vec3,
    },
}

struct Fitter<'a> {
    mesh: &'a TetMesh,
    params: &'a MaterialParams,
    set: &'a ConstraintSet,
    config: &'a SolveConfig,
    lap: StrainLaplacian,
    base: BaseMatrix,
    boundary: Boundary,
    force_tol: f64,
    records: Vec<IterationRecord>,
    timings: Vec<IterationTiming>,
}

struct Trial {
    eta: f64,
    s: PlasticField,
    state: EquilibriumState,
    clamped: usize,
}

impl Fitter<'_> {
    fn equilibrium(&self, s: &PlasticField, x0: &DVector<f64>) -> Result<EquilibriumState> {
        let opts = self.config.newton();
        match &self.boundary {
            Boundary::Attached(att) => static_solve_attached(self.mesh, self.params, s, att, x0, &opts),
            Boundary::Unattached {
                gauge,
                rotation,
                translation,
            } => static_solve_unattached(self.mesh, self.params, s, translation, rotation, gauge, x0, &opts),
        }
    }

    fn attachments(&self) -> Option<&[PointTerm]> {
        match &self.boundary {
            Boundary::Attached(a) => Some(a),
            Boundary::Unattached { .. } => None,
        }
    }

    fn smoothness(&self, s: &PlasticField) -> f64 {
        0.5 * self.config.gamma * self.lap.smoothness(s.as_vector())
    }

    fn objective(&self, s: &PlasticField, x: &DVector<f64>, terms: &[PointTerm]) -> f64 {
        self.smoothness(s) + terms_energy(terms, x)
    }

    fn has_rows(&self, stage: Stage) -> bool {
        match stage {
            Stage::Attachments => !self.set.attachments.is_empty(),
            Stage::Landmarks => !self.set.landmarks.is_empty(),
            Stage::Icp => !self.set.icp.is_empty(),
            Stage::InitialGuess => !(self.set.landmarks.is_empty() && self.set.icp.is_empty() && self.set.attachments.is_empty()),
        }
    }

    /// Weighted shape matching of the marker rows; moves `state` rigidly and
    /// re-reads the gauge. Objective cannot increase.
    fn rigid_update(&mut self, state: &mut EquilibriumState, terms: &StageTerms) {
        let Boundary::Unattached {
            gauge,
            rotation,
            translation,
        } = &mut self.boundary
        else {
            return;
        };
        let rows = &terms.terms[terms.n_attachments..];
        let p: Vec<Vec3> = rows.iter().map(|t| t.point(&state.x)).collect();
        let q: Vec<Vec3> = rows.iter().map(|t| t.target).collect();
        let w: Vec<f64> = rows.iter().map(|t| t.weight).collect();
        let Ok((r, t)) = fit_rigid_weighted(&p, &q, &w) else {
            debug!("rigid update skipped: markers do not span a plane");
            return;
        };
        let x = apply_rigid(&state.x, &r, &t);
        match gauge.measure(&x) {
            Ok((rr, tt)) => {
                *rotation = rr;
                *translation = tt;
                state.x = x;
                state.rotation = rr;
                state.translation = tt;
            }
            Err(e) => warn!("rigid update skipped: {e}"),
        }
    }

    fn run_stage(
        &mut self,
        stage: Stage,
        s: &mut PlasticField,
        state: &mut EquilibriumState,
    ) -> Result<Option<StageSummary>> {
        if !self.has_rows(stage) {
            warn!("stage {stage}: no active constraints, skipped");
            return Ok(None);
        }
        let constant = stage == Stage::InitialGuess;
        let m = self.mesh.n_tets();
        let mut terms = assemble_constraints(self.mesh, self.set, self.config, stage, &state.x);
        let objective_start = self.objective(s, &state.x, &terms.terms);
        let mut clamp_streak = 0;
        let mut iteration = 0;
        let termination = loop {
            iteration += 1;
            let clock = Instant::now();
            let mut phi0 = self.objective(s, &state.x, &terms.terms);
            if matches!(self.boundary, Boundary::Unattached { .. }) {
                let (before, boundary) = (state.clone(), self.boundary.clone());
                self.rigid_update(state, &terms);
                let moved = assemble_constraints(self.mesh, self.set, self.config, stage, &state.x);
                let phi = self.objective(s, &state.x, &moved.terms);
                // an already aligned state can come back a rounding error worse
                if phi <= phi0 {
                    terms = moved;
                    phi0 = phi;
                } else {
                    *state = before;
                    self.boundary = boundary;
                }
            }
            let lin = Linearization::new(
                self.mesh,
                self.params,
                s,
                self.attachments(),
                &terms.terms,
                &state.x,
                self.force_tol,
            )?;
            let dir = if constant {
                match constant_direction(&lin, m) {
                    Some(d) => d,
                    None => {
                        warn!("initial guess is under-constrained; keeping the identity field");
                        if iteration == 1 {
                            return Ok(Some(StageSummary {
                                stage,
                                iterations: 0,
                                objective_start,
                                objective_end: objective_start,
                                termination: None,
                            }));
                        }
                        break Termination::EtaSmall;
                    }
                }
            } else {
                gauss_newton_direction(&lin, &self.base, s)?
            };
            drop(lin);

            let mut trials: Vec<Trial> = Vec::new();
            let ls = if dir.ds.amax() == 0.0 {
                LineSearchResult {
                    eta: 0.0,
                    value: phi0,
                    evaluations: 0,
                }
            } else {
                line_search(phi0, self.config.eta_max, self.config.brent_tol, |eta| {
                    let mut trial_s = PlasticField::from_vector(s.as_vector() + &dir.ds * eta).ok()?;
                    let clamped = trial_s.clamp_spd(self.config.spd_floor);
                    let x0 = &state.x + &dir.dx * eta;
                    let eq = match self.equilibrium(&trial_s, &x0) {
                        Ok(eq) if eq.converged => eq,
                        Ok(eq) => {
                            debug!("eta {eta}: equilibrium not converged (|f| = {:e})", eq.residual_norm);
                            return None;
                        }
                        Err(e) => {
                            debug!("eta {eta}: equilibrium failed: {e}");
                            return None;
                        }
                    };
                    let value = self.objective(&trial_s, &eq.x, &terms.terms);
                    trials.push(Trial {
                        eta,
                        s: trial_s,
                        state: eq,
                        clamped,
                    });
                    Some(value)
                })
            };
            let mut clamped = 0;
            if ls.eta > 0.0 {
                let best = trials
                    .into_iter()
                    .find(|t| t.eta == ls.eta)
                    .expect("line search returns an evaluated point");
                *s = best.s;
                *state = best.state;
                clamped = best.clamped;
            }
            terms = assemble_constraints(self.mesh, self.set, self.config, stage, &state.x);
            let objective = self.objective(s, &state.x, &terms.terms);
            let distances = MarkerDistances::measure(self.mesh, self.set, &state.x);
            let errors = distances.stats();
            self.records.push(IterationRecord {
                stage,
                iteration,
                objective,
                smoothness: self.smoothness(s),
                eta: ls.eta,
                line_search_evaluations: ls.evaluations,
                errors,
                clamped_tets: clamped,
                equilibrium_residual: state.residual_norm,
                force_tol: self.force_tol,
            });
            self.timings.push(IterationTiming {
                stage,
                iteration,
                seconds: clock.elapsed().as_secs_f64(),
            });
            info!(
                "{stage} {iteration}: objective {objective:.6e}, eta {:.4}, clamped {clamped}",
                ls.eta
            );

            if clamped > 0 {
                clamp_streak += 1;
                if clamp_streak >= self.config.divergence_streak {
                    return Err(Error::Diverged(format!(
                        "SPD clamping in {clamp_streak} consecutive iterations (stage {stage}, iteration {iteration}); \
                         restart with different weights"
                    )));
                }
            } else {
                clamp_streak = 0;
            }
            let max_icp = distances.icp.iter().fold(0.0, |a: f64, b| a.max(*b));
            if stage == Stage::Icp && max_icp < 1e-3 * self.config.icp_stop_mm {
                break Termination::IcpErrorMet;
            }
            if ls.eta < self.config.eta_min {
                break Termination::EtaSmall;
            }
            if iteration >= self.config.max_outer_iterations {
                break Termination::MaxIter;
            }
        };
        Ok(Some(StageSummary {
            stage,
            iterations: self.records.iter().filter(|r| r.stage == stage).count(),
            objective_start,
            objective_end: self
                .records
                .iter()
                .rev()
                .find(|r| r.stage == stage)
                .map_or(objective_start, |r| r.objective),
            termination: Some(termination),
        }))
    }
}

/// Fits a plastic field to `set`. Attached iff `set` has attachments.
pub fn fit(mesh: &TetMesh, params: &MaterialParams, set: &ConstraintSet, config: &SolveConfig) -> Result<FitResult> {
    let clock = Instant::now();
    params.validate()?;
    config.validate()?;
    set.validate(mesh)?;
    let attached = set.is_attached();
    let rest = mesh.rest_positions();
    let l = mesh.rest_bbox_diagonal();
    let boundary = if attached {
        let att = attachment_terms(mesh, set, config.beta);
        let pts: Vec<Vec3> = att.iter().map(|t| t.point(&rest)).collect();
        if !spans_plane(&pts, l) {
            return Err(Error::Validation(
                "attachments must include at least three non-colinear points".into(),
            ));
        }
        Boundary::Attached(att)
    } else {
        let mut targets: Vec<Vec3> = set.landmarks.iter().map(|m| m.target).collect();
        targets.extend(set.icp.iter().map(|m| m.target));
        if !spans_plane(&targets, l) {
            return Err(Error::Validation(
                "an unattached mesh needs at least three non-colinear markers".into(),
            ));
        }
        Boundary::Unattached {
            gauge: Gauge::new(mesh, gauge_vertices(mesh, set))?,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    };
    let lap = StrainLaplacian::build(mesh)?;
    let base = lap.base_matrix(config.gamma)?;
    let force_tol = config
        .force_tol
        .unwrap_or_else(|| crate::equilibrium::default_force_tol(mesh, params));
    let mut f = Fitter {
        mesh,
        params,
        set,
        config,
        lap,
        base,
        boundary,
        force_tol,
        records: Vec::new(),
        timings: Vec::new(),
    };

    let e_init = MarkerDistances::measure(mesh, set, &rest).stats();
    let mut s = PlasticField::identity(mesh.n_tets());
    let mut state = f.equilibrium(&s, &rest)?;
    if !state.converged {
        return Err(Error::NotEquilibrium {
            residual: state.residual_norm,
            tolerance: force_tol,
        });
    }

    let mut stages = Vec::new();
    let mut skipped = Vec::new();
    let schedule = config.initial_guess.then_some(Stage::InitialGuess).into_iter().chain(config.stages.iter().copied());
    for stage in schedule {
        match f.run_stage(stage, &mut s, &mut state)? {
            Some(summary) => stages.push(summary),
            None => skipped.push(stage),
        }
    }
    // the last stage that ran decides; an under-constrained initial guess
    // alone made no progress
    let termination = if stages.is_empty() {
        return Err(Error::Validation("no optimization stage has active constraints".into()));
    } else {
        stages.iter().rev().find_map(|st| st.termination).unwrap_or(Termination::EtaSmall)
    };

    let e_final = MarkerDistances::measure(mesh, set, &state.x).stats();
    let gauge_vertices = match &f.boundary {
        Boundary::Unattached { gauge, .. } => gauge.vertices.len(),
        Boundary::Attached(_) => 0,
    };
    let report = SolveReport {
        attached,
        n_vertices: mesh.n_vertices(),
        n_tets: mesh.n_tets(),
        config: config.clone(),
        stages,
        skipped_stages: skipped,
        iterations: f.records,
        termination,
        e_init,
        e_final,
        gauge_vertices,
        rotation: state.rotation,
        translation: state.translation,
    };
    Ok(FitResult {
        field: s,
        state,
        report,
        timings: Timings {
            total_seconds: clock.elapsed().as_secs_f64(),
            iterations: f.timings,
        },
    })
}

/// Best constant field for the initial-guess objective, with its
/// equilibrium. Identity when under-constrained.
pub fn initial_guess(
    mesh: &TetMesh,
    params: &MaterialParams,
    set: &ConstraintSet,
    config: &SolveConfig,
) -> Result<FitResult> {
    let cfg = SolveConfig {
        initial_guess: true,
        stages: Vec::new(),
        ..config.clone()
    };
    fit(mesh, params, set, &cfg)
}
