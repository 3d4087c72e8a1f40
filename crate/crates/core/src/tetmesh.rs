//! Tetrahedral mesh geometry.
//!
//! Positions are passed around as flat `DVector<f64>` of length `3n`
//! (`[x0, y0, z0, x1, ...]`), which is also the layout used by every
//! assembled force vector and stiffness matrix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closest_point_on_tet, closest_point_on_triangle, signed_volume, tet_barycentric, Vec3};

/// Rest volumes below this (m³) are rejected.
pub const DEGENERATE_VOLUME: f64 = 1e-18;

/// Outward faces of a positively oriented tet, each listed opposite the
/// vertex with the same index.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceTriangle {
    pub vertices: [usize; 3],
    pub tet: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialPoint {
    pub tet: usize,
    pub barycentric: [f64; 4],
}

impl MaterialPoint {
    /// Position of the point under deformation `x`.
    pub fn position(&self, mesh: &TetMesh, x: &DVector<f64>) -> Vec3 {
        let t = mesh.tets[self.tet];
        (0..4).map(|k| vertex(x, t[k]) * self.barycentric[k]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub triangle: usize,
    pub barycentric: [f64; 3],
    pub position: Vec3,
    pub distance: f64,
}

#[inline]
pub fn vertex(x: &DVector<f64>, i: usize) -> Vec3 {
    Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
}

#[derive(Debug, Clone)]
pub struct TetMesh {
    vertices_rest: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    rest_shape_inverse: Vec<Matrix3<f64>>,
    rest_volume: Vec<f64>,
    surface: Vec<SurfaceTriangle>,
    adjacency: Vec<(usize, usize)>,
}

impl TetMesh {
    /// Builds a mesh, flipping negatively oriented tets.
    ///
    /// Rejects out-of-range indices, unreferenced vertices, degenerate tets,
    /// non-manifold faces and meshes with more than one face-connected
    /// component.
    pub fn new(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        let n = vertices.len();
        if tets.is_empty() {
            return Err(Error::InvalidMesh("mesh has no tetrahedra".into()));
        }
        let mut used = vec![false; n];
        for (ti, t) in tets.iter().enumerate() {
            for &v in t {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "tet {ti} references vertex {v}, but there are only {n} vertices"
                    )));
                }
                used[v] = true;
            }
            let mut s = *t;
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidMesh(format!("tet {ti} repeats a vertex: {t:?}")));
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not used by any tet")));
        }

        let mut degenerate = Vec::new();
        let mut rest_volume = Vec::with_capacity(tets.len());
        let mut rest_shape_inverse = Vec::with_capacity(tets.len());
        for (ti, t) in tets.iter_mut().enumerate() {
            let mut vol = signed_volume(&[vertices[t[0]], vertices[t[1]], vertices[t[2]], vertices[t[3]]]);
            if vol.abs() < DEGENERATE_VOLUME {
                degenerate.push(ti);
                continue;
            }
            if vol < 0.0 {
                t.swap(2, 3);
                vol = -vol;
            }
            let dm = Matrix3::from_columns(&[
                vertices[t[1]] - vertices[t[0]],
                vertices[t[2]] - vertices[t[0]],
                vertices[t[3]] - vertices[t[0]],
            ]);
            rest_volume.push(vol);
            rest_shape_inverse.push(dm.try_inverse().expect("nondegenerate"));
        }
        if !degenerate.is_empty() {
            return Err(Error::DegenerateTets(degenerate));
        }

        let (surface, adjacency) = faces(&tets)?;
        let components = count_components(tets.len(), &adjacency);
        if components != 1 {
            return Err(Error::Disconnected(components));
        }

        Ok(Self {
            vertices_rest: vertices,
            tets,
            rest_shape_inverse,
            rest_volume,
            surface,
            adjacency,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices_rest.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn vertices_rest(&self) -> &[Vec3] {
        &self.vertices_rest
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn rest_shape_inverse(&self, tet: usize) -> &Matrix3<f64> {
        &self.rest_shape_inverse[tet]
    }

    pub fn rest_volume(&self, tet: usize) -> f64 {
        self.rest_volume[tet]
    }

    pub fn rest_volumes(&self) -> &[f64] {
        &self.rest_volume
    }

    pub fn surface_triangles(&self) -> &[SurfaceTriangle] {
        &self.surface
    }

    /// Face-adjacent tet pairs `(i, j)` with `i < j`, sorted.
    pub fn adjacency(&self) -> &[(usize, usize)] {
        &self.adjacency
    }

    /// Rest positions as a flat `3n` vector.
    pub fn rest_positions(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.n_vertices(), self.vertices_rest.iter().flat_map(|v| [v.x, v.y, v.z]))
    }

    pub fn total_rest_volume(&self) -> f64 {
        self.rest_volume.iter().sum()
    }

    /// Sorted list of vertices on the boundary surface.
    pub fn surface_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.surface.iter().flat_map(|t| t.vertices).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Axis-aligned bounding box diagonal of the configuration `x`.
    pub fn bbox_diagonal(&self, x: &DVector<f64>) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for i in 0..self.n_vertices() {
            let p = vertex(x, i);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        (hi - lo).norm()
    }

    pub fn rest_bbox_diagonal(&self) -> f64 {
        self.bbox_diagonal(&self.rest_positions())
    }

    pub fn tet_positions(&self, x: &DVector<f64>, tet: usize) -> [Vec3; 4] {
        let t = self.tets[tet];
        [vertex(x, t[0]), vertex(x, t[1]), vertex(x, t[2]), vertex(x, t[3])]
    }

    /// `F = Ds · Dm⁻¹` for one tet.
    pub fn deformation_gradient(&self, x: &DVector<f64>, tet: usize) -> Matrix3<f64> {
        let p = self.tet_positions(x, tet);
        let ds = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        ds * self.rest_shape_inverse[tet]
    }

    /// Enclosed volume of configuration `x` via the divergence theorem over
    /// the boundary triangles.
    pub fn surface_volume(&self, x: &DVector<f64>) -> f64 {
        self.surface
            .iter()
            .map(|t| {
                let [a, b, c] = t.vertices.map(|i| vertex(x, i));
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Nearest point on the deformed boundary surface (exhaustive search;
    /// ties go to the lowest triangle index).
    pub fn closest_surface_point(&self, x: &DVector<f64>, z: &Vec3) -> SurfacePoint {
        let mut best: Option<SurfacePoint> = None;
        for (i, tri) in self.surface.iter().enumerate() {
            let [a, b, c] = tri.vertices.map(|v| vertex(x, v));
            let (q, w) = closest_point_on_triangle(z, &a, &b, &c);
            let d = (q - z).norm();
            if best.as_ref().is_none_or(|s| d < s.distance) {
                best = Some(SurfacePoint {
                    triangle: i,
                    barycentric: w,
                    position: q,
                    distance: d,
                });
            }
        }
        best.expect("mesh has a nonempty surface")
    }

    /// Material coordinates of rest-space points. Points outside the mesh
    /// are bound to the nearest tet with clamped barycentrics.
    pub fn embed_points(&self, points: &[Vec3]) -> Vec<MaterialPoint> {
        let rest = self.rest_positions();
        points.par_iter().map(|p| self.embed_point(&rest, p)).collect()
    }

    fn embed_point(&self, rest: &DVector<f64>, p: &Vec3) -> MaterialPoint {
        const INSIDE_TOL: f64 = 1e-12;
        let mut nearest: Option<(f64, usize, [f64; 4])> = None;
        for ti in 0..self.n_tets() {
            let tp = self.tet_positions(rest, ti);
            if let Some(w) = tet_barycentric(p, &tp) {
                if w.iter().all(|&v| v >= -INSIDE_TOL) {
                    return MaterialPoint {
                        tet: ti,
                        barycentric: normalize_weights(w),
                    };
                }
            }
            let (q, w) = closest_point_on_tet(p, &tp);
            let d = (q - p).norm_squared();
            if nearest.as_ref().is_none_or(|b| d < b.0) {
                nearest = Some((d, ti, w));
            }
        }
        let (_, tet, w) = nearest.expect("mesh has tets");
        MaterialPoint {
            tet,
            barycentric: normalize_weights(w),
        }
    }

    pub fn transform_embedded(&self, x: &DVector<f64>, points: &[MaterialPoint]) -> Vec<Vec3> {
        points.iter().map(|p| p.position(self, x)).collect()
    }

    /// Minimum dihedral angle of every tet in configuration `x`, binned by
    /// `bin_edges` (degrees, ascending).
    pub fn min_dihedral_report(&self, x: &DVector<f64>, bin_edges: &[f64]) -> DihedralReport {
        let mut angles = Vec::with_capacity(self.n_tets());
        let mut flagged = Vec::new();
        for ti in 0..self.n_tets() {
            match min_dihedral_angle(&self.tet_positions(x, ti)) {
                Some(a) => angles.push(a),
                None => {
                    angles.push(0.0);
                    flagged.push(ti);
                }
            }
        }
        let counts = histogram(&angles, bin_edges);
        DihedralReport {
            min_angles: angles,
            flagged,
            bin_edges: bin_edges.to_vec(),
            counts,
        }
    }
}

fn normalize_weights(w: [f64; 4]) -> [f64; 4] {
    let c = w.map(|v| v.clamp(0.0, 1.0));
    let s: f64 = c.iter().sum();
    c.map(|v| v / s)
}

type FaceData = (Vec<SurfaceTriangle>, Vec<(usize, usize)>);

fn faces(tets: &[[usize; 4]]) -> Result<FaceData> {
    let mut owners: HashMap<[usize; 3], Vec<usize>> = HashMap::with_capacity(tets.len() * 4);
    for (ti, t) in tets.iter().enumerate() {
        for f in TET_FACES {
            let mut key = [t[f[0]], t[f[1]], t[f[2]]];
            key.sort_unstable();
            owners.entry(key).or_default().push(ti);
        }
    }
    let mut surface = Vec::new();
    let mut adjacency = Vec::new();
    for (ti, t) in tets.iter().enumerate() {
        for f in TET_FACES {
            let tri = [t[f[0]], t[f[1]], t[f[2]]];
            let mut key = tri;
            key.sort_unstable();
            let o = &owners[&key];
            match o.len() {
                1 => surface.push(SurfaceTriangle { vertices: tri, tet: ti }),
                2 => {
                    let other = if o[0] == ti { o[1] } else { o[0] };
                    if ti < other {
                        adjacency.push((ti, other));
                    }
                }
                k => {
                    return Err(Error::InvalidMesh(format!(
                        "face {key:?} is shared by {k} tets"
                    )))
                }
            }
        }
    }
    adjacency.sort_unstable();
    Ok((surface, adjacency))
}

fn count_components(m: usize, adjacency: &[(usize, usize)]) -> usize {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(a, b) in adjacency {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..m).filter(|&i| find(&mut parent, i) == i).count()
}

/// Smallest interior dihedral angle (degrees) or `None` for inverted or
/// flat tets.
pub fn min_dihedral_angle(p: &[Vec3; 4]) -> Option<f64> {
    let vol = signed_volume(p);
    let scale = (0..4)
        .flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))
        .map(|(i, j)| (p[i] - p[j]).norm())
        .fold(0.0, f64::max);
    if vol <= 1e-12 * scale.powi(3) {
        return None;
    }
    let normals: Vec<Vec3> = TET_FACES
        .iter()
        .map(|f| (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]])).normalize())
        .collect();
    let mut best = f64::INFINITY;
    for a in 0..4 {
        for b in (a + 1)..4 {
            // faces opposite a and b meet along the edge joining the other two
            let c = (-normals[a].dot(&normals[b])).clamp(-1.0, 1.0);
            best = best.min(c.acos().to_degrees());
        }
    }
    Some(best)
}

pub(crate) fn histogram(values: &[f64], edges: &[f64]) -> Vec<usize> {
    let nb = edges.len().saturating_sub(1);
    let mut counts = vec![0; nb];
    for &v in values {
        if nb == 0 {
            break;
        }
        if v < edges[0] || v > edges[nb] {
            continue;
        }
        let k = edges[1..].partition_point(|&e| e <= v).min(nb - 1);
        counts[k] += 1;
    }
    counts
}

#[derive(Debug, Clone, Serialize)]
pub struct DihedralReport {
    /// Per-tet minimum dihedral angle in degrees (0 for flagged tets).
    pub min_angles: Vec<f64>,
    /// Inverted or flat tets.
    pub flagged: Vec<usize>,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl DihedralReport {
    pub fn min(&self) -> f64 {
        self.min_angles.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low_deg,bin_high_deg,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.bin_edges[k], self.bin_edges[k + 1], c);
        }
        let _ = writeln!(s, "# flagged (inverted or flat) tets: {}", self.flagged.len());
        s
    }
}

pub fn default_dihedral_bins() -> Vec<f64> {
    (0..=18).map(|k| 5.0 * k as f64).collect()
}

// ---------------------------------------------------------------------------
// TetGen I/O

struct Tokens<'a> {
    path: &'a Path,
    line: usize,
    items: Vec<(usize, &'a str)>,
}

impl<'a> Tokens<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn get<T: std::str::FromStr>(&self, k: usize, what: &str) -> Result<T> {
        match self.items.get(k) {
            Some(&(col, tok)) => tok
                .parse()
                .map_err(|_| self.err(col, format!("expected {what}, found `{tok}`"))),
            None => {
                let col = self.items.last().map(|(c, t)| c + t.len()).unwrap_or(1);
                Err(self.err(col, format!("missing {what}")))
            }
        }
    }
}

fn tokenize<'a>(path: &'a Path, text: &'a str) -> Vec<Tokens<'a>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let content = raw.split('#').next().unwrap_or("");
            let mut items = Vec::new();
            let mut start = None;
            for (pos, ch) in content.char_indices() {
                if ch.is_whitespace() || ch == ',' {
                    if let Some(s) = start.take() {
                        items.push((s + 1, &content[s..pos]));
                    }
                } else if start.is_none() {
                    start = Some(pos);
                }
            }
            if let Some(s) = start {
                items.push((s + 1, &content[s..]));
            }
            (!items.is_empty()).then_some(Tokens {
                path,
                line: i + 1,
                items,
            })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a TetGen `.node`/`.ele` pair. The index base (0 or 1) is taken from
/// the first vertex index in the `.node` file.
pub fn load_tetgen(node_path: impl AsRef<Path>, ele_path: impl AsRef<Path>) -> Result<TetMesh> {
    let node_path = node_path.as_ref();
    let ele_path = ele_path.as_ref();
    let node_text = read_text(node_path)?;
    let ele_text = read_text(ele_path)?;

    let lines = tokenize(node_path, &node_text);
    let header = lines
        .first()
        .ok_or_else(|| parse_error(node_path, 1, "empty .node file"))?;
    let n: usize = header.get(0, "vertex count")?;
    let dim: usize = header.get(1, "dimension")?;
    if dim != 3 {
        return Err(header.err(header.items[1].0, format!("dimension must be 3, got {dim}")));
    }
    if lines.len() < n + 1 {
        return Err(parse_error(
            node_path,
            lines.last().map(|l| l.line + 1).unwrap_or(1),
            &format!("expected {n} vertices, found {}", lines.len() - 1),
        ));
    }
    let base: usize = if n > 0 { lines[1].get(0, "vertex index")? } else { 0 };
    if base > 1 {
        return Err(lines[1].err(1, format!("first index must be 0 or 1, got {base}")));
    }
    let mut vertices = Vec::with_capacity(n);
    for (k, l) in lines[1..=n].iter().enumerate() {
        let idx: usize = l.get(0, "vertex index")?;
        if idx != k + base {
            return Err(l.err(l.items[0].0, format!("expected index {}, got {idx}", k + base)));
        }
        let v = Vec3::new(l.get(1, "x")?, l.get(2, "y")?, l.get(3, "z")?);
        if !v.iter().all(|c: &f64| c.is_finite()) {
            return Err(l.err(l.items[1].0, "non-finite coordinate"));
        }
        vertices.push(v);
    }

    let lines = tokenize(ele_path, &ele_text);
    let header = lines
        .first()
        .ok_or_else(|| parse_error(ele_path, 1, "empty .ele file"))?;
    let m: usize = header.get(0, "tet count")?;
    let per: usize = header.get(1, "nodes per tet")?;
    if per != 4 {
        return Err(header.err(header.items[1].0, format!("only 4-node tets are supported, got {per}")));
    }
    if lines.len() < m + 1 {
        return Err(parse_error(
            ele_path,
            lines.last().map(|l| l.line + 1).unwrap_or(1),
            &format!("expected {m} tets, found {}", lines.len() - 1),
        ));
    }
    let mut tets = Vec::with_capacity(m);
    for l in &lines[1..=m] {
        let mut t = [0usize; 4];
        for (k, slot) in t.iter_mut().enumerate() {
            let v: usize = l.get(k + 1, "vertex index")?;
            if v < base || v - base >= n {
                return Err(l.err(l.items[k + 1].0, format!("vertex index {v} out of range")));
            }
            *slot = v - base;
        }
        tets.push(t);
    }
    TetMesh::new(vertices, tets)
}

fn parse_error(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 1,
        message: msg.to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes positions as a 0-based `.node` file. Floats use the shortest
/// round-trip representation, so reading back is lossless.
pub fn write_node(path: impl AsRef<Path>, x: &DVector<f64>) -> Result<()> {
    let n = x.len() / 3;
    let mut s = format!("{n} 3 0 0\n");
    for i in 0..n {
        let _ = writeln!(s, "{i} {:?} {:?} {:?}", x[3 * i], x[3 * i + 1], x[3 * i + 2]);
    }
    write_text(path.as_ref(), &s)
}

pub fn write_ele(path: impl AsRef<Path>, tets: &[[usize; 4]]) -> Result<()> {
    let mut s = format!("{} 4 0\n", tets.len());
    for (i, t) in tets.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    write_text(path.as_ref(), &s)
}

/// Boundary surface of configuration `x` as OBJ.
pub fn write_surface_obj(path: impl AsRef<Path>, mesh: &TetMesh, x: &DVector<f64>) -> Result<()> {
    let verts = mesh.surface_vertices();
    let mut remap = vec![usize::MAX; mesh.n_vertices()];
    let mut s = String::new();
    for (k, &v) in verts.iter().enumerate() {
        remap[v] = k + 1;
        let p = vertex(x, v);
        let _ = writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z);
    }
    for t in mesh.surface_triangles() {
        let [a, b, c] = t.vertices.map(|v| remap[v]);
        let _ = writeln!(s, "f {a} {b} {c}");
    }
    write_text(path.as_ref(), &s)
}

/// OBJ file kept line by line so that everything except `v` positions
/// (texture coordinates, faces, groups, ...) is written back verbatim.
#[derive(Debug, Clone)]
pub struct ObjFile {
    lines: Vec<String>,
    vertex_lines: Vec<usize>,
    pub vertices: Vec<Vec3>,
}

impl ObjFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let mut lines = Vec::new();
        let mut vertex_lines = Vec::new();
        let mut vertices = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            if it.next() == Some("v") {
                let mut c = [0.0; 3];
                for (k, slot) in c.iter_mut().enumerate() {
                    let tok = it.next().ok_or_else(|| parse_error(path, i + 1, "vertex needs 3 coordinates"))?;
                    *slot = tok.parse().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        column: line.find(tok).map(|p| p + 1).unwrap_or(1),
                        message: format!("bad coordinate {k}: `{tok}`"),
                    })?;
                }
                vertex_lines.push(lines.len());
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            lines.push(line.to_string());
        }
        Ok(Self {
            lines,
            vertex_lines,
            vertices,
        })
    }

    /// Renders the file with vertex positions replaced by `positions`.
    pub fn render_with(&self, positions: &[Vec3]) -> String {
        assert_eq!(positions.len(), self.vertices.len());
        let mut out = self.lines.clone();
        for (k, &li) in self.vertex_lines.iter().enumerate() {
            let p = positions[k];
            out[li] = format!("v {:?} {:?} {:?}", p.x, p.y, p.z);
        }
        let mut s = out.join("\n");
        s.push('\n');
        s
    }

    pub fn write_with(&self, path: impl AsRef<Path>, positions: &[Vec3]) -> Result<()> {
        write_text(path.as_ref(), &self.render_with(positions))
    }
}

/// Embeds an OBJ surface in the rest mesh and writes it deformed by `x`.
pub fn transfer_obj(mesh: &TetMesh, x: &DVector<f64>, input: &Path, output: &Path) -> Result<PathBuf> {
    let obj = ObjFile::read(input)?;
    let embedded = mesh.embed_points(&obj.vertices);
    obj.write_with(output, &mesh.transform_embedded(x, &embedded))?;
    Ok(output.to_path_buf())
}
