//! Small meshes used by tests, benchmarks and the synthetic presets.

use crate::geometry::Vec3;
use crate::tetmesh::TetMesh;

pub fn single_tet() -> TetMesh {
    TetMesh::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
        vec![[0, 1, 2, 3]],
    )
    .unwrap()
}

/// Two tets glued along the face `(1, 2, 3)`.
pub fn two_tets() -> TetMesh {
    TetMesh::new(
        vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::z(),
            Vec3::new(0.8, 0.7, 0.9),
        ],
        vec![[0, 1, 2, 3], [4, 1, 3, 2]],
    )
    .unwrap()
}

/// Unit cube as one central tet surrounded by four corner tets.
pub fn five_tet_cube() -> TetMesh {
    let v = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    TetMesh::new(
        v,
        vec![[1, 2, 4, 7], [0, 1, 2, 4], [3, 1, 2, 7], [5, 1, 4, 7], [6, 2, 4, 7]],
    )
    .unwrap()
}

/// Box `[0, size]` split into `nx × ny × nz` cells of 6 tets each
/// (Freudenthal split along the cell's main diagonal, conforming).
pub fn grid(nx: usize, ny: usize, nz: usize, size: Vec3) -> TetMesh {
    grid_filtered(nx, ny, nz, size, |_| true)
}

/// As [`grid`], keeping only cells whose center satisfies `keep`.
pub fn grid_filtered(nx: usize, ny: usize, nz: usize, size: Vec3, keep: impl Fn(Vec3) -> bool) -> TetMesh {
    let idx = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let h = Vec3::new(size.x / nx as f64, size.y / ny as f64, size.z / nz as f64);
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let center = Vec3::new((i as f64 + 0.5) * h.x, (j as f64 + 0.5) * h.y, (k as f64 + 0.5) * h.z);
                if !keep(center) {
                    continue;
                }
                for p in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [idx(i, j, k), 0, 0, 0];
                    for (s, &axis) in p.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = idx(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let mut all = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                all.push(Vec3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z));
            }
        }
    }
    // drop unused vertices, keep original order
    let mut map = vec![usize::MAX; all.len()];
    for t in &tets {
        for &v in t {
            map[v] = 0;
        }
    }
    let mut verts = Vec::new();
    for (v, slot) in map.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = verts.len();
            verts.push(all[v]);
        }
    }
    for t in &mut tets {
        for v in t.iter_mut() {
            *v = map[*v];
        }
    }
    TetMesh::new(verts, tets).expect("grid fixture is valid")
}

/// 0.4 × 0.1 × 0.1 m beam along x, 8 × 2 × 2 cells.
pub fn beam() -> TetMesh {
    grid(8, 2, 2, Vec3::new(0.4, 0.1, 0.1))
}

/// 0.1 m cube, 3 × 3 × 3 cells.
pub fn cube() -> TetMesh {
    grid(3, 3, 3, Vec3::repeat(0.1))
}

/// Genus-0 lumpy solid about 0.12 m across: an ellipsoid body with a
/// smaller lobe, voxelized and split into tets.
pub fn blob() -> TetMesh {
    let size = Vec3::new(0.12, 0.09, 0.08);
    grid_filtered(8, 6, 5, size, |p| {
        let q = p.component_div(&size) * 2.0 - Vec3::repeat(1.0);
        let body = (q.x / 0.8).powi(2) + (q.y / 0.7).powi(2) + (q.z / 0.9).powi(2) < 1.0;
        let lobe = (q - Vec3::new(0.6, 0.55, 0.3)).norm() < 0.45;
        body || lobe
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_consistent() {
        for (m, vol) in [
            (two_tets(), None),
            (grid(2, 1, 1, Vec3::new(2.0, 1.0, 1.0)), Some(2.0)),
            (beam(), Some(0.004)),
            (cube(), Some(0.001)),
            (blob(), None),
        ] {
            let x = m.rest_positions();
            let rel = (m.surface_volume(&x) - m.total_rest_volume()).abs() / m.total_rest_volume();
            assert!(rel < 1e-12);
            if let Some(v) = vol {
                assert!((m.total_rest_volume() - v).abs() < 1e-12 * v.max(1.0));
            }
        }
        assert_eq!(beam().n_tets(), 8 * 2 * 2 * 6);
        assert!(blob().n_tets() > 300);
    }
}

/// Smooth random plastic field: each of the six components is an affine
/// function of the tet centroid, `s_c = I_c + a (u_c + v_c · X̂)` with
/// `u, v` uniform in `[-1, 1]` and `X̂` the centroid normalized by the
/// bounding-box diagonal. Amplitudes up to about 0.15 keep every tet SPD.
pub fn smooth_field(mesh: &TetMesh, amplitude: f64, seed: u64) -> crate::material::PlasticField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<[f64; 4]> = (0..6)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
        .collect();
    let l = mesh.rest_bbox_diagonal();
    let rest = mesh.rest_positions();
    let lo = mesh.vertices_rest().iter().fold(Vec3::repeat(f64::INFINITY), |a, v| a.inf(v));
    let mut s = crate::material::PlasticField::identity(mesh.n_tets());
    for t in 0..mesh.n_tets() {
        let c = (mesh.tet_positions(&rest, t).iter().sum::<Vec3>() / 4.0 - lo) / l;
        let mut v = crate::material::IDENTITY_S;
        for (k, a) in coef.iter().enumerate() {
            v[k] += amplitude * (a[0] + a[1] * c.x + a[2] * c.y + a[3] * c.z);
        }
        s.set_tet(t, &v);
    }
    s
}
