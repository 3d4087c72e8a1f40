//! The 1D string: endpoints pinned at `0 ↦ 0` and `1 ↦ 2`, landmarks
//! `¼ ↦ ¼` and `½ ↦ 3/2`. Variational smoothing of order `r` against a
//! plastic stretch field with an elastic equilibrium in between.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub const LANDMARKS: [(f64, f64); 2] = [(0.25, 0.25), (0.5, 1.5)];
pub const END: f64 = 2.0;
/// Slopes implied by the landmarks on `[0,¼]`, `[¼,½]`, `[½,1]`.
pub const IDEAL_SLOPES: [f64; 3] = [1.0, 5.0, 1.0];
/// Total variation of the ideal piecewise-constant slope.
pub const IDEAL_TV: f64 = 8.0;
pub const MIN_SEGMENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Variational1DCase {
    pub order: usize,
    pub landmarks: [(f64, f64); 2],
    pub alpha: f64,
    pub segments: usize,
}

/// Sampled deformation `x_0 … x_N` at `t_i = i/N`.
#[derive(Debug, Clone, Serialize)]
pub struct Profile {
    pub x: Vec<f64>,
}

fn check_segments(n: usize) -> Result<()> {
    if n < MIN_SEGMENTS || n % 4 != 0 {
        return Err(Error::Precondition(format!(
            "1D resolution must be a multiple of 4 and at least {MIN_SEGMENTS}, got {n}"
        )));
    }
    Ok(())
}

impl Profile {
    pub fn segments(&self) -> usize {
        self.x.len() - 1
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.segments();
        self.x[(t * n as f64).round() as usize]
    }

    pub fn slopes(&self) -> Vec<f64> {
        let n = self.segments() as f64;
        self.x.windows(2).map(|w| (w[1] - w[0]) * n).collect()
    }

    /// Worst residual at the default landmarks.
    pub fn landmark_error(&self) -> f64 {
        self.landmark_error_for(&LANDMARKS)
    }

    pub fn landmark_error_for(&self, landmarks: &[(f64, f64)]) -> f64 {
        landmarks.iter().map(|&(t, y)| (self.at(t) - y).abs()).fold(0.0, f64::max)
    }

    /// Total variation of the slope minus that of the ideal three-slope
    /// profile.
    pub fn oscillation(&self) -> f64 {
        let s = self.slopes();
        s.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() - IDEAL_TV
    }

    /// Secant slope over the middle half of each of the three subintervals.
    pub fn interior_slopes(&self) -> [f64; 3] {
        let bounds = [(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)];
        bounds.map(|(a, b)| {
            let w = b - a;
            let (lo, hi) = (a + w / 4.0, b - w / 4.0);
            (self.at(hi) - self.at(lo)) / (hi - lo)
        })
    }

    pub fn overshoots(&self) -> bool {
        self.x.iter().any(|&v| !(-1e-12..=END + 1e-12).contains(&v))
    }
}

/// Binomial forward-difference stencil of order `r`.
fn stencil(r: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for _ in 0..r {
        let mut next = vec![0.0; c.len() + 1];
        for (k, v) in c.iter().enumerate() {
            next[k + 1] += v;
            next[k] -= v;
        }
        c = next;
    }
    c
}

/// Least squares over the interior nodes: rows `√h Δʳx/hʳ` and
/// `√α (x(t_l) − y_l)`, with `x_0 = 0`, `x_N = 2` eliminated.
pub fn solve_variational_1d(case: &Variational1DCase) -> Result<Profile> {
    let n = case.segments;
    check_segments(n)?;
    if !(1..=3).contains(&case.order) {
        return Err(Error::Precondition(format!("order must be 1, 2 or 3, got {}", case.order)));
    }
    if !(case.alpha >= 0.0) {
        return Err(Error::Precondition(format!("alpha must be non-negative, got {}", case.alpha)));
    }
    let h = 1.0 / n as f64;
    let r = case.order;
    let c = stencil(r);
    let scale = h.sqrt() / h.powi(r as i32);
    let n_lm = if case.alpha > 0.0 { case.landmarks.len() } else { 0 };
    let rows = n + 1 - r + n_lm;
    let mut a = DMatrix::zeros(rows, n - 1);
    let mut b = DVector::zeros(rows);
    for k in 0..=n - r {
        for (j, cj) in c.iter().enumerate() {
            let node = k + j;
            let v = scale * cj;
            match node {
                0 => {}
                _ if node == n => b[k] -= v * END,
                _ => a[(k, node - 1)] += v,
            }
        }
    }
    let sa = case.alpha.sqrt();
    for (l, &(t, y)) in case.landmarks.iter().take(n_lm).enumerate() {
        let row = n + 1 - r + l;
        a[(row, (t * n as f64).round() as usize - 1)] = sa;
        b[row] = sa * y;
    }
    if rows < n - 1 {
        return Err(Error::Precondition(format!("singular 1D system at resolution {n}")));
    }
    let sv = a.singular_values();
    if sv.min() <= 1e-14 * sv.max() {
        return Err(Error::Precondition(format!("singular 1D system at resolution {n}")));
    }
    // Householder QR; the SVD solve loses digits in the slopes at large α.
    let qr = a.qr();
    let qtb = qr.q().tr_mul(&b);
    let inner = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Factorization("singular R in the 1D least squares".into()))?;
    let mut x = Vec::with_capacity(n + 1);
    x.push(0.0);
    x.extend(inner.iter());
    x.push(END);
    Ok(Profile { x })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plastic1DCase {
    pub landmarks: [(f64, f64); 2],
    pub alpha: f64,
    pub beta: f64,
    pub segments: usize,
}

impl Default for Plastic1DCase {
    fn default() -> Self {
        Self {
            landmarks: LANDMARKS,
            alpha: 1e8,
            beta: 1e2,
            segments: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Plastic1DSolution {
    pub profile: Profile,
    /// Per-segment plastic stretch.
    pub fp: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Elastic equilibrium of the string for stretches `f`: minimizing
/// `Σ h (ẋ_i/f_i − 1)²` with `Σ h ẋ_i = 2` gives `ẋ_i = f_i + λ f_i²/2`.
struct Equilibrium {
    lambda: f64,
    xdot: DVector<f64>,
    /// `∂λ/∂f_j`
    dl: DVector<f64>,
    /// `∂ẋ_i/∂f_j`
    jac: DMatrix<f64>,
}

fn equilibrium(f: &DVector<f64>, h: f64) -> Equilibrium {
    let s1 = h * f.sum();
    let s2 = h * f.norm_squared();
    let lambda = 2.0 * (END - s1) / s2;
    let xdot = f.map(|v| v + lambda * v * v / 2.0);
    let dl = f.map(|v| -2.0 * h / s2 - lambda * 2.0 * h * v / s2);
    let n = f.len();
    let jac = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { 1.0 + lambda * f[i] } else { 0.0 };
        diag + f[i] * f[i] / 2.0 * dl[j]
    });
    Equilibrium { lambda, xdot, dl, jac }
}

/// Residuals and Jacobian of the plastic objective
/// `∫ f̈² + α Σ (x(t_l) − y_l)² + β ∫ (ẋ/f − 1)²`.
fn plastic_residuals(f: &DVector<f64>, case: &Plastic1DCase) -> (DVector<f64>, DMatrix<f64>) {
    let n = f.len();
    let h = 1.0 / n as f64;
    let eq = equilibrium(f, h);
    let dl = &eq.dl;
    let rows = (n - 2) + case.landmarks.len() + n;
    let mut r = DVector::zeros(rows);
    let mut j = DMatrix::zeros(rows, n);
    let ws = h.sqrt() / (h * h);
    for i in 1..n - 1 {
        r[i - 1] = ws * (f[i - 1] - 2.0 * f[i] + f[i + 1]);
        j[(i - 1, i - 1)] = ws;
        j[(i - 1, i)] = -2.0 * ws;
        j[(i - 1, i + 1)] = ws;
    }
    let sa = case.alpha.sqrt();
    for (l, &(t, y)) in case.landmarks.iter().enumerate() {
        let k = (t * n as f64).round() as usize;
        let row = n - 2 + l;
        r[row] = sa * (h * eq.xdot.rows(0, k).sum() - y);
        for c in 0..n {
            j[(row, c)] = sa * h * eq.jac.view((0, c), (k, 1)).sum();
        }
    }
    let sb = (case.beta * h).sqrt();
    for i in 0..n {
        let row = n - 2 + case.landmarks.len() + i;
        r[row] = sb * eq.lambda * f[i] / 2.0;
        for c in 0..n {
            let d = if i == c { eq.lambda / 2.0 } else { 0.0 };
            j[(row, c)] = sb * (d + f[i] / 2.0 * dl[c]);
        }
    }
    (r, j)
}

fn profile_from(f: &DVector<f64>) -> Profile {
    let n = f.len();
    let h = 1.0 / n as f64;
    let eq = equilibrium(f, h);
    let mut x = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    x.push(0.0);
    for v in eq.xdot.iter() {
        acc += h * v;
        x.push(acc);
    }
    // the constraint holds up to summation round-off
    *x.last_mut().unwrap() = END;
    Profile { x }
}

/// Levenberg-Marquardt on the stretches, starting from the uniform 2×.
pub fn solve_plastic_1d(case: &Plastic1DCase) -> Result<Plastic1DSolution> {
    let n = case.segments;
    check_segments(n)?;
    if !(case.alpha >= 0.0 && case.beta > 0.0) {
        return Err(Error::Precondition("alpha must be non-negative and beta positive".into()));
    }
    let mut f = DVector::from_element(n, END);
    let (mut r, mut jac) = plastic_residuals(&f, case);
    let mut cost = r.norm_squared() / 2.0;
    let mut mu = 1e-3;
    let mut iterations = 0;
    for _ in 0..500 {
        iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let g = jac.tr_mul(&r);
        if g.amax() <= 1e-12 * (1.0 + cost) {
            break;
        }
        let mut improved = false;
        while mu < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 10.0;
                continue;
            };
            let trial = &f + &step;
            if trial.min() > 1e-3 {
                let (rt, jt) = plastic_residuals(&trial, case);
                let ct = rt.norm_squared() / 2.0;
                if ct < cost {
                    let small = (cost - ct) <= 1e-15 * cost && step.amax() <= 1e-12 * f.amax();
                    f = trial;
                    r = rt;
                    jac = jt;
                    cost = ct;
                    mu = (mu / 3.0).max(1e-12);
                    improved = !small;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Plastic1DSolution {
        profile: profile_from(&f),
        fp: f.iter().copied().collect(),
        objective: cost * 2.0,
        iterations,
    })
}

/// Variational solution of order `r` whose landmark error matches
/// `target` (bisection over `log α`; the error falls monotonically with α).
pub fn matched_variational(order: usize, segments: usize, target: f64) -> Result<(f64, Profile)> {
    let solve = |log_a: f64| {
        solve_variational_1d(&Variational1DCase {
            order,
            landmarks: LANDMARKS,
            alpha: 10f64.powf(log_a),
            segments,
        })
    };
    let (mut lo, mut hi) = (-4.0, 16.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if solve(mid)?.landmark_error() > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((10f64.powf(hi), solve(hi)?))
}
