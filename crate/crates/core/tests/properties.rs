use nalgebra::{DMatrix, DVector, Matrix3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use plasmorph_core::equilibrium::polar::polar;
use plasmorph_core::equilibrium::ElasticSystem;
use plasmorph_core::io::{read_markers, write_markers};
use plasmorph_core::material::clamp_spd;
use plasmorph_core::optimizer::{ConstraintSet, IcpMarker, Landmark};
use plasmorph_core::singular_linalg::{build_woodbury, KnownNullspaceMatrix, DEFAULT_NULLSPACE_TOL};
use plasmorph_core::sparse::TripletBuilder;
use plasmorph_core::strain_laplacian::StrainLaplacian;
use plasmorph_core::{fixtures, MaterialParams, MaterialPoint, PlasticField, Vec3};

fn sym(s: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5])
}

fn rotation(axis: Vec3, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clamp_respects_floor(s in prop::array::uniform6(-3.0..3.0f64), floor in 0.01..0.5f64) {
        let (c, changed) = clamp_spd(&s, floor);
        let min = sym(&c).symmetric_eigenvalues().min();
        prop_assert!(min >= floor * (1.0 - 1e-12), "min eigenvalue {min}");
        if sym(&s).symmetric_eigenvalues().min() >= floor {
            prop_assert!(!changed);
            prop_assert_eq!(c, s);
        }
    }

    #[test]
    fn polar_factors(f in prop::array::uniform9(-2.0..2.0f64)) {
        let mut f = Matrix3::from_row_slice(&f) + Matrix3::identity() * 2.5;
        if f.determinant() <= 0.1 {
            f.set_column(0, &(-f.column(0)));
        }
        prop_assume!(f.determinant() > 0.1);
        let (r, s) = polar(&f).unwrap();
        prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-10);
        prop_assert!((s - s.transpose()).norm() < 1e-10 * s.norm());
        prop_assert!(s.symmetric_eigenvalues().min() > 0.0);
        prop_assert!((r * s - f).norm() < 1e-10 * f.norm());
    }

    #[test]
    fn laplacian_annihilates_constants(nx in 1..4usize, ny in 1..4usize, nz in 1..3usize, c in prop::array::uniform6(-2.0..2.0f64)) {
        let mesh = fixtures::grid(nx, ny, nz, Vec3::new(1.0, 0.7, 0.5));
        let lap = StrainLaplacian::build(&mesh).unwrap();
        let field = PlasticField::constant(mesh.n_tets(), &c);
        prop_assert!(lap.apply(field.as_vector()).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn laplacian_is_symmetric(nx in 1..4usize, ny in 1..3usize, seed in 0..1000u64) {
        let mesh = fixtures::grid(nx, ny, 1, Vec3::repeat(1.0));
        let lap = StrainLaplacian::build(&mesh).unwrap();
        let n = 6 * mesh.n_tets();
        let u = DVector::from_fn(n, |i, _| ((i as u64 * 7 + seed) as f64).sin());
        let v = DVector::from_fn(n, |i, _| ((i as u64 * 3 + seed) as f64).cos());
        let (a, b) = (lap.apply(&u).dot(&v), u.dot(&lap.apply(&v)));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn woodbury_matches_dense(nx in 1..3usize, ny in 1..3usize, rows in 6..16usize, gamma in 1e-3..10.0f64, seed in 0..1000u64) {
        let mesh = fixtures::grid(nx, ny, 1, Vec3::repeat(1.0));
        let lap = StrainLaplacian::build(&mesh).unwrap();
        let n = 6 * mesh.n_tets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let psi = lap.nullspace();
        let mut zhat = DMatrix::zeros(rows + 6, n);
        zhat.rows_mut(0, rows).copy_from(&z);
        for (i, p) in psi.iter().enumerate() {
            zhat.row_mut(rows + i).copy_from(&p.transpose());
        }
        // constant fields outside the row space of Z are not determined
        let zc = &z * plasmorph_core::optimizer::direction::constant_field_basis(mesh.n_tets());
        prop_assume!(zc.svd(false, false).singular_values.min() > 1e-6);
        let base = lap.base_matrix(gamma).unwrap();
        let fast = build_woodbury(&base, zhat).unwrap().solve(&h);
        let l = lap.assemble().to_dense();
        let normal = l.tr_mul(&l) * gamma + z.tr_mul(&z);
        let dense = normal.lu().solve(&h).unwrap();
        prop_assert!((&fast - &dense).norm() <= 1e-8 * dense.norm(), "{:e}", (&fast - &dense).norm() / dense.norm());
    }

    #[test]
    fn singular_solve_is_orthogonal_and_exact(n in 4..30usize, seed in 0..1000u64) {
        // path graph: nullspace is the constant vector
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n - 1 {
            let w = 0.5 + (((i as u64 + seed) as f64) * 0.37).sin().abs();
            b.push(i, i, w);
            b.push(i + 1, i + 1, w);
            b.push(i, i + 1, -w);
            b.push(i + 1, i, -w);
        }
        let a = b.build();
        let op = KnownNullspaceMatrix::new(a.clone(), &[DVector::from_element(n, 1.0)], DEFAULT_NULLSPACE_TOL).unwrap();
        let mut rhs = DVector::from_fn(n, |i, _| ((i as u64 * 5 + seed) as f64).sin());
        rhs.add_scalar_mut(-rhs.mean());
        let x = op.solve_singular(&rhs).unwrap();
        prop_assert!(x.sum().abs() < 1e-10 * x.norm().max(1.0));
        prop_assert!((a.mul_vec(&x) - &rhs).norm() < 1e-10 * rhs.norm().max(1e-300));
    }

    #[test]
    fn energy_is_rigid_invariant(axis in prop::array::uniform3(-1.0..1.0f64), angle in -3.0..3.0f64, t in prop::array::uniform3(-1.0..1.0f64), seed in 0..100u64) {
        let axis = Vec3::from(axis);
        prop_assume!(axis.norm() > 0.1);
        let mesh = fixtures::five_tet_cube();
        let s = fixtures::smooth_field(&mesh, 0.1, seed);
        let sys = ElasticSystem::new(&mesh, &MaterialParams::default(), &s).unwrap();
        let x = mesh.rest_positions().map(|v| v * 1.1);
        let r = rotation(axis, angle);
        let t = Vec3::from(t);
        let y = DVector::from_iterator(x.len(), (0..mesh.n_vertices()).flat_map(|i| {
            let p = r * x.fixed_rows::<3>(3 * i) + t;
            [p.x, p.y, p.z]
        }));
        let (e0, e1) = (sys.energy(&x), sys.energy(&y));
        prop_assert!((e0 - e1).abs() <= 1e-9 * e0.abs().max(1e-12));
    }

    #[test]
    fn marker_file_round_trip(
        picks in prop::collection::vec((0..162usize, prop::array::uniform4(0.01..1.0f64), prop::array::uniform3(-0.2..0.2f64), 0.1..10.0f64), 1..8),
        icp in prop::collection::vec((prop::array::uniform3(-0.2..0.2f64), 0.1..10.0f64), 0..8),
    ) {
        let mesh = fixtures::cube();
        let rest = mesh.rest_positions();
        let landmarks: Vec<Landmark> = picks.iter().map(|(tet, b, target, w)| {
            let sum: f64 = b.iter().sum();
            let point = MaterialPoint { tet: *tet, barycentric: b.map(|v| v / sum) };
            Landmark { point, target: Vec3::from(*target), weight: *w }
        }).collect();
        let set = ConstraintSet {
            attachments: vec![],
            landmarks,
            icp: icp.iter().map(|(t, w)| IcpMarker { target: Vec3::from(*t), weight: *w }).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_markers(&path, &mesh, &set).unwrap();
        let back = read_markers(&path, &mesh).unwrap();
        prop_assert_eq!(back.icp, set.icp);
        prop_assert_eq!(back.landmarks.len(), set.landmarks.len());
        for (a, b) in back.landmarks.iter().zip(&set.landmarks) {
            prop_assert_eq!(a.target, b.target);
            prop_assert_eq!(a.weight, b.weight);
            prop_assert!((a.point.position(&mesh, &rest) - b.point.position(&mesh, &rest)).norm() < 1e-12);
        }
    }
}
