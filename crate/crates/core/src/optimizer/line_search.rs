//! Derivative-free 1D minimization along a Gauss-Newton direction.

use argmin::core::{CostFunction, Executor};
use argmin::solver::brent::BrentOpt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub eta: f64,
    pub value: f64,
    pub evaluations: usize,
}

struct Objective<F> {
    f: std::cell::RefCell<F>,
    failed: f64,
    evaluations: std::cell::Cell<usize>,
}

impl<F: FnMut(f64) -> Option<f64>> CostFunction for Objective<F> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, eta: &f64) -> Result<f64, argmin::core::Error> {
        self.evaluations.set(self.evaluations.get() + 1);
        Ok(match (self.f.borrow_mut())(*eta) {
            Some(v) if v.is_finite() => v,
            // rising with eta so that Brent moves back toward feasible steps
            _ => self.failed * (1.0 + eta),
        })
    }
}

/// Brent minimization of `phi` on `[0, eta_max]` to absolute tolerance
/// `tol`. Trials for which `phi` returns `None` (diverged equilibria) count
/// as worse than `phi0`. Returns `eta = 0` unless some trial improves on
/// `phi0 = phi(0)`.
pub fn line_search(
    phi0: f64,
    eta_max: f64,
    tol: f64,
    phi: impl FnMut(f64) -> Option<f64>,
) -> LineSearchResult {
    let problem = Objective {
        f: std::cell::RefCell::new(phi),
        failed: (phi0.abs() + 1.0) * 1e3,
        evaluations: std::cell::Cell::new(0),
    };
    let solver = BrentOpt::new(0.0, eta_max).set_tolerance(f64::EPSILON.sqrt(), tol / 2.0);
    let run = Executor::new(problem, solver)
        .configure(|state| state.max_iters(100))
        .run()
        .expect("cost function never errors");
    let state = run.state();
    let evaluations = run.problem.problem.as_ref().map_or(0, |p| p.evaluations.get());
    let (eta, value) = (state.best_param.unwrap_or(0.0), state.best_cost);
    if value < phi0 {
        LineSearchResult {
            eta,
            value,
            evaluations,
        }
    } else {
        LineSearchResult {
            eta: 0.0,
            value: phi0,
            evaluations,
        }
    }
}
