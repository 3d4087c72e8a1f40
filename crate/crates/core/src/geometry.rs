//! Point/triangle/tetrahedron primitives.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;

/// Closest point to `p` on triangle `(a, b, c)`.
///
/// Returns the point and its barycentric weights `(wa, wb, wc)`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    // Voronoi-region walk; see Ericson, Real-Time Collision Detection, 5.1.5.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Barycentric coordinates of `p` with respect to tetrahedron `t`.
/// `None` when the tetrahedron is degenerate.
pub fn tet_barycentric(p: &Vec3, t: &[Vec3; 4]) -> Option<[f64; 4]> {
    let m = Matrix3::from_columns(&[t[1] - t[0], t[2] - t[0], t[3] - t[0]]);
    let inv = m.try_inverse()?;
    let l = inv * (p - t[0]);
    Some([1.0 - l.x - l.y - l.z, l.x, l.y, l.z])
}

/// Closest point to `p` in the solid tetrahedron `t` with its barycentric
/// weights (all nonnegative, summing to one).
pub fn closest_point_on_tet(p: &Vec3, t: &[Vec3; 4]) -> (Vec3, [f64; 4]) {
    if let Some(w) = tet_barycentric(p, t) {
        if w.iter().all(|&v| v >= 0.0) {
            return (*p, w);
        }
    }
    const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
    let mut best: Option<(f64, Vec3, [f64; 4])> = None;
    for f in FACES {
        let (q, bw) = closest_point_on_triangle(p, &t[f[0]], &t[f[1]], &t[f[2]]);
        let d = (q - p).norm_squared();
        if best.as_ref().is_none_or(|b| d < b.0) {
            let mut w = [0.0; 4];
            for (k, &vi) in f.iter().enumerate() {
                w[vi] = bw[k];
            }
            best = Some((d, q, w));
        }
    }
    let (_, q, w) = best.unwrap();
    (q, w)
}

/// Signed volume of a tetrahedron (positive for right-handed ordering).
pub fn signed_volume(t: &[Vec3; 4]) -> f64 {
    (t[1] - t[0]).cross(&(t[2] - t[0])).dot(&(t[3] - t[0])) / 6.0
}

/// Skew matrix `[v]×` with `[v]× u = v × u`.
pub fn cross_matrix(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let u = i as f64 / n as f64;
                let v = j as f64 / n as f64;
                let q = a * (1.0 - u - v) + b * u + c * v;
                best = best.min((q - p).norm());
            }
        }
        best
    }

    #[test]
    fn triangle_regions_against_sampling() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.2, 0.9, 0.1);
        let pts = [
            Vec3::new(-1.0, -1.0, 0.3),
            Vec3::new(2.0, 0.1, -0.2),
            Vec3::new(0.3, 0.3, 1.0),
            Vec3::new(0.5, -0.5, 0.0),
            Vec3::new(0.9, 0.9, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
        ];
        for p in &pts {
            let (q, w) = closest_point_on_triangle(p, &a, &b, &c);
            let recon = a * w[0] + b * w[1] + c * w[2];
            assert!((recon - q).norm() < 1e-12);
            let d = (q - p).norm();
            let bf = brute_triangle(p, &a, &b, &c);
            assert!(d <= bf + 1e-12 && bf - d < 5e-3, "{d} vs {bf}");
        }
    }

    #[test]
    fn tet_projection_inside_and_outside() {
        let t = [
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let (q, w) = closest_point_on_tet(&Vec3::new(0.1, 0.1, 0.1), &t);
        assert!((q - Vec3::new(0.1, 0.1, 0.1)).norm() < 1e-14);
        assert!((w[0] - 0.7).abs() < 1e-14);
        let (q, w) = closest_point_on_tet(&Vec3::new(-1.0, 0.2, 0.2), &t);
        assert!((q - Vec3::new(0.0, 0.2, 0.2)).norm() < 1e-14);
        assert!(w.iter().all(|&v| v >= 0.0));
        assert!((signed_volume(&t) - 1.0 / 6.0).abs() < 1e-15);
    }
}
