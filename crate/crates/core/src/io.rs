//! Problem files and fit artifacts.
//!
//! Marker files are JSON lines. The first record declares the units of
//! every coordinate in the file:
//!
//! ```text
//! {"kind": "header", "units": "mm"}
//! {"kind": "attachment", "tet": 3, "barycentric": [0.25, 0.25, 0.25, 0.25], "target": [0, 0, 0]}
//! {"kind": "attachment", "position": [0, 0, 10], "target": [0, 0, 10], "weight": 2}
//! {"kind": "landmark", "position": [5, 5, 5], "target": [6, 5, 5]}
//! {"kind": "icp", "target": [7, 1, 2]}
//! ```
//!
//! `position` is a rest-space point embedded in the mesh. Blank lines and
//! lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::material::{MaterialParams, PlasticField};
use crate::optimizer::{
    Attachment, ConstraintSet, FitResult, IcpMarker, Landmark, MarkerDistances, SolveConfig, SolveReport,
    Termination,
};
use crate::tetmesh::{default_dihedral_bins, write_node, MaterialPoint, TetMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[serde(alias = "meters")]
    M,
    #[serde(alias = "millimeters")]
    Mm,
}

impl Units {
    pub fn to_meters(self) -> f64 {
        match self {
            Units::M => 1.0,
            Units::Mm => 1e-3,
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkerRecord {
    Header {
        units: Units,
    },
    Attachment {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tet: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        barycentric: Option<[f64; 4]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        position: Option<[f64; 3]>,
        target: [f64; 3],
        #[serde(default = "default_weight")]
        weight: f64,
    },
    Landmark {
        position: [f64; 3],
        target: [f64; 3],
        #[serde(default = "default_weight")]
        weight: f64,
    },
    Icp {
        target: [f64; 3],
        #[serde(default = "default_weight")]
        weight: f64,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn vec3(a: [f64; 3], scale: f64) -> Vec3 {
    Vec3::new(a[0], a[1], a[2]) * scale
}

/// Reads a marker file, converting coordinates to meters and embedding
/// rest-space positions in `mesh`.
pub fn read_markers(path: impl AsRef<Path>, mesh: &TetMesh) -> Result<ConstraintSet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut units = None;
    let mut set = ConstraintSet::default();
    let mut to_embed: Vec<(bool, usize, Vec3)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec: MarkerRecord =
            serde_json::from_str(line).map_err(|e| parse_error(path, i + 1, e.column(), e.to_string()))?;
        let bad = |msg: String| parse_error(path, i + 1, 1, msg);
        let scale = match (&rec, units) {
            (MarkerRecord::Header { units: u }, None) => {
                units = Some(*u);
                continue;
            }
            (MarkerRecord::Header { .. }, Some(_)) => return Err(bad("duplicate header".into())),
            (_, None) => {
                return Err(bad(
                    "the first record must be a header declaring units, e.g. {\"kind\": \"header\", \"units\": \"mm\"}"
                        .into(),
                ))
            }
            (_, Some(u)) => u.to_meters(),
        };
        let check = |target: &[f64; 3], weight: f64| -> Result<()> {
            if !target.iter().all(|c| c.is_finite()) {
                return Err(bad("non-finite target coordinate".into()));
            }
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(bad(format!("weight must be positive, got {weight}")));
            }
            Ok(())
        };
        match rec {
            MarkerRecord::Header { .. } => unreachable!(),
            MarkerRecord::Attachment {
                tet,
                barycentric,
                position,
                target,
                weight,
            } => {
                check(&target, weight)?;
                let point = match (tet, barycentric, position) {
                    (Some(tet), Some(b), None) => {
                        if tet >= mesh.n_tets() {
                            return Err(bad(format!("tet {tet} out of range ({} tets)", mesh.n_tets())));
                        }
                        if !b.iter().all(|w| w.is_finite() && *w >= -1e-9) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                            return Err(bad("barycentric weights must be non-negative and sum to 1".into()));
                        }
                        MaterialPoint { tet, barycentric: b }
                    }
                    (None, None, Some(p)) => {
                        if !p.iter().all(|c| c.is_finite()) {
                            return Err(bad("non-finite position".into()));
                        }
                        to_embed.push((true, set.attachments.len(), vec3(p, scale)));
                        MaterialPoint {
                            tet: 0,
                            barycentric: [0.25; 4],
                        }
                    }
                    _ => return Err(bad("an attachment needs either `tet` and `barycentric`, or `position`".into())),
                };
                set.attachments.push(Attachment {
                    point,
                    target: vec3(target, scale),
                    weight,
                });
            }
            MarkerRecord::Landmark {
                position,
                target,
                weight,
            } => {
                check(&target, weight)?;
                if !position.iter().all(|c| c.is_finite()) {
                    return Err(bad("non-finite position".into()));
                }
                to_embed.push((false, set.landmarks.len(), vec3(position, scale)));
                set.landmarks.push(Landmark {
                    point: MaterialPoint {
                        tet: 0,
                        barycentric: [0.25; 4],
                    },
                    target: vec3(target, scale),
                    weight,
                });
            }
            MarkerRecord::Icp { target, weight } => {
                check(&target, weight)?;
                set.icp.push(IcpMarker {
                    target: vec3(target, scale),
                    weight,
                });
            }
        }
    }
    if units.is_none() {
        return Err(parse_error(path, 1, 1, "empty marker file: missing units header"));
    }
    let points: Vec<Vec3> = to_embed.iter().map(|e| e.2).collect();
    for ((attachment, k, _), mp) in to_embed.iter().zip(mesh.embed_points(&points)) {
        if *attachment {
            set.attachments[*k].point = mp;
        } else {
            set.landmarks[*k].point = mp;
        }
    }
    Ok(set)
}

/// Writes a marker file in meters. Attachments keep their material
/// coordinates; landmarks are written at their rest-space positions.
pub fn write_markers(path: impl AsRef<Path>, mesh: &TetMesh, set: &ConstraintSet) -> Result<()> {
    let rest = mesh.rest_positions();
    let arr = |v: &Vec3| [v.x, v.y, v.z];
    let mut records = vec![MarkerRecord::Header { units: Units::M }];
    records.extend(set.attachments.iter().map(|a| MarkerRecord::Attachment {
        tet: Some(a.point.tet),
        barycentric: Some(a.point.barycentric),
        position: None,
        target: arr(&a.target),
        weight: a.weight,
    }));
    records.extend(set.landmarks.iter().map(|l| MarkerRecord::Landmark {
        position: arr(&l.point.position(mesh, &rest)),
        target: arr(&l.target),
        weight: l.weight,
    }));
    records.extend(set.icp.iter().map(|m| MarkerRecord::Icp {
        target: arr(&m.target),
        weight: m.weight,
    }));
    let mut s = String::new();
    for r in &records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    write_text(path.as_ref(), &s)
}

/// Material parameters, solver settings and thread count of a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub material: MaterialParams,
    pub solve: SolveConfig,
    /// Worker threads; `None` uses all cores. Results are bitwise
    /// reproducible for a fixed count.
    pub threads: Option<usize>,
}

impl ProblemConfig {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let c: Self = read_json(path)?;
        c.material.validate()?;
        c.solve.validate()?;
        if c.threads == Some(0) {
            return Err(Error::Validation("config: threads must be at least 1".into()));
        }
        Ok(c)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("values serialize");
    s.push('\n');
    write_text(path.as_ref(), &s)
}

const FIELD_MAGIC: &[u8; 4] = b"PLSF";
const FIELD_VERSION: u32 = 1;

/// Binary plastic field: `PLSF`, version `u32`, tet count `u64`, then
/// `6m` little-endian `f64` in tet-major order.
pub fn write_field_binary(path: impl AsRef<Path>, field: &PlasticField) -> Result<()> {
    let path = path.as_ref();
    let s = field.as_vector();
    let mut buf = Vec::with_capacity(16 + 8 * s.len());
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(field.n_tets() as u64).to_le_bytes());
    for v in s.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_field_binary(path: impl AsRef<Path>) -> Result<PlasticField> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Validation(format!("{}: {m}", path.display()));
    if buf.len() < 16 || &buf[..4] != FIELD_MAGIC {
        return Err(bad("not a plastic field file"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FIELD_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let m = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if buf.len() != 16 + 48 * m {
        return Err(bad(&format!("expected {} bytes for {m} tets, got {}", 16 + 48 * m, buf.len())));
    }
    let s = DVector::from_iterator(
        6 * m,
        buf[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
    );
    PlasticField::from_vector(s)
}

pub fn field_csv(field: &PlasticField) -> String {
    let mut s = String::from("tet,s1,s2,s3,s4,s5,s6\n");
    for t in 0..field.n_tets() {
        let v = field.tet(t);
        let _ = writeln!(s, "{t},{:?},{:?},{:?},{:?},{:?},{:?}", v[0], v[1], v[2], v[3], v[4], v[5]);
    }
    s
}

/// Histogram of marker errors before and after the fit, with bins of
/// `bin_mm` covering the largest error.
pub fn error_histogram_csv(initial_m: &[f64], final_m: &[f64], bin_mm: f64) -> String {
    let max = initial_m.iter().chain(final_m).fold(0.0f64, |a, b| a.max(*b)) * 1e3;
    let bins = ((max / bin_mm).floor() as usize + 1).max(1);
    let count = |d: &[f64]| {
        let mut c = vec![0usize; bins];
        for v in d {
            c[((v * 1e3 / bin_mm).floor() as usize).min(bins - 1)] += 1;
        }
        c
    };
    let (ci, cf) = (count(initial_m), count(final_m));
    let mut s = String::from("bin_low_mm,bin_high_mm,initial,final\n");
    for k in 0..bins {
        let _ = writeln!(s, "{},{},{},{}", k as f64 * bin_mm, (k + 1) as f64 * bin_mm, ci[k], cf[k]);
    }
    s
}

/// Paths of the artifacts written by [`write_fit_outputs`].
#[derive(Debug, Clone)]
pub struct FitArtifacts {
    pub node: PathBuf,
    pub field_binary: PathBuf,
    pub field_csv: PathBuf,
    pub report: PathBuf,
    pub timing: PathBuf,
    pub histogram: PathBuf,
    pub dihedral: PathBuf,
    pub obj: Option<PathBuf>,
}

pub const HISTOGRAM_BIN_MM: f64 = 0.25;

/// Errors of the marker class the histogram is drawn from: ICP markers,
/// or landmarks when there are none.
fn histogram_distances(d: &MarkerDistances) -> &[f64] {
    if d.icp.is_empty() {
        &d.landmarks
    } else {
        &d.icp
    }
}

pub fn write_fit_outputs(
    dir: impl AsRef<Path>,
    mesh: &TetMesh,
    set: &ConstraintSet,
    fit: &FitResult,
    obj: Option<&Path>,
) -> Result<FitArtifacts> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = FitArtifacts {
        node: dir.join("deformed.node"),
        field_binary: dir.join("plastic_field.bin"),
        field_csv: dir.join("plastic_field.csv"),
        report: dir.join("report.json"),
        timing: dir.join("timing.json"),
        histogram: dir.join("error_histogram.csv"),
        dihedral: dir.join("dihedral.csv"),
        obj: obj.map(|_| dir.join("deformed_embedded.obj")),
    };
    write_node(&out.node, &fit.state.x)?;
    write_field_binary(&out.field_binary, &fit.field)?;
    write_text(&out.field_csv, &field_csv(&fit.field))?;
    write_json(&out.report, &fit.report)?;
    write_json(&out.timing, &fit.timings)?;
    let before = MarkerDistances::measure(mesh, set, &mesh.rest_positions());
    let after = MarkerDistances::measure(mesh, set, &fit.state.x);
    write_text(
        &out.histogram,
        &error_histogram_csv(histogram_distances(&before), histogram_distances(&after), HISTOGRAM_BIN_MM),
    )?;
    write_text(
        &out.dihedral,
        &mesh.min_dihedral_report(&fit.state.x, &default_dihedral_bins()).to_csv(),
    )?;
    if let (Some(input), Some(output)) = (obj, &out.obj) {
        crate::tetmesh::transfer_obj(mesh, &fit.state.x, input, output)?;
    }
    Ok(out)
}

/// Human-readable summary of a report. Final errors at or below
/// `threshold_mm` are marked `ok`; runs that hit the iteration cap are
/// marked `WARN`.
pub fn summarize_report(report: &SolveReport, threshold_mm: f64) -> Result<String> {
    if report.stages.is_empty() {
        return Err(Error::Validation("report has no stages".into()));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} mesh: {} vertices, {} tets",
        if report.attached { "attached" } else { "unattached" },
        report.n_vertices,
        report.n_tets
    );
    let _ = writeln!(s, "{:<12} {:>6} {:>12} {:>12} {:>12} {:>12}", "markers", "count", "init mean", "init max", "final mean", "final max");
    let classes = [
        ("icp", report.e_init.icp, report.e_final.icp),
        ("landmarks", report.e_init.landmarks, report.e_final.landmarks),
        ("attachments", report.e_init.attachments, report.e_final.attachments),
    ];
    for (name, a, b) in classes {
        let (Some(a), Some(b)) = (a, b) else { continue };
        let flag = if b.max_mm <= threshold_mm { "ok" } else { "HIGH" };
        let _ = writeln!(
            s,
            "{name:<12} {:>6} {:>9.4} mm {:>9.4} mm {:>9.4} mm {:>9.4} mm  {flag}",
            a.count, a.mean_mm, a.max_mm, b.mean_mm, b.max_mm
        );
    }
    let _ = writeln!(s, "iterations: {}", report.total_iterations());
    for st in &report.stages {
        let term = st.termination.map_or("-".to_string(), |t| format!("{t:?}"));
        let _ = writeln!(
            s,
            "  {:<14} {:>3} it  objective {:.6e} -> {:.6e}  {term}",
            st.stage.to_string(),
            st.iterations,
            st.objective_start,
            st.objective_end
        );
    }
    for st in &report.skipped_stages {
        let _ = writeln!(s, "  {:<14} skipped (no rows)", st.to_string());
    }
    let flag = if report.termination == Termination::MaxIter { "  WARN: iteration cap reached" } else { "" };
    let _ = writeln!(s, "termination: {:?}{flag}", report.termination);
    Ok(s)
}
