//! Quasi-Newton (BFGS) maximization with backtracking line search and
//! optional box bounds handled by projection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient has ∞-norm below `gtol·(1 + |f|)`.
    pub gtol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, gtol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Converged,
    MaxIter,
    /// No ascent step, or five steps in a row without a relative gain above
    /// 1e-15, before the gradient test passed.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub outcome: Outcome,
    /// Objective value after each accepted step, starting point first.
    pub trace: Vec<f64>,
    /// Coordinates held at a bound at termination.
    pub at_bound: Vec<bool>,
}

/// Closed box; either side may be infinite.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Coordinates at a bound where ascent would leave the box.
    fn blocked(&self, x: &DVector<f64>, g: &DVector<f64>) -> Vec<bool> {
        (0..x.len())
            .map(|i| (x[i] >= self.upper[i] && g[i] > 0.0) || (x[i] <= self.lower[i] && g[i] < 0.0))
            .collect()
    }
}

fn masked(v: &DVector<f64>, mask: &[bool]) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| if mask[i] { 0.0 } else { v[i] })
}

/// Maximizes `f`, which returns the value and gradient; infeasible points
/// must return a non-finite value.
pub fn maximize<F>(mut f: F, x0: DVector<f64>, opts: &BfgsOptions, bounds: Option<&Bounds>) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let (mut fx, mut g) = f(&x);
    let mut trace = vec![fx];
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let no_bounds = vec![false; n];
    let mut last_mask = no_bounds.clone();
    let mut stalled = 0;
    let blocked = |x: &DVector<f64>, g: &DVector<f64>| bounds.map_or_else(|| no_bounds.clone(), |b| b.blocked(x, g));

    for iter in 0..opts.max_iter {
        let mask = blocked(&x, &g);
        let pg = masked(&g, &mask);
        if pg.amax() < opts.gtol * (1.0 + fx.abs()) {
            return BfgsResult { x, f: fx, grad: g, iterations: iter, outcome: Outcome::Converged, trace, at_bound: mask };
        }
        if mask != last_mask {
            h = DMatrix::identity(n, n);
            first = true;
            last_mask = mask.clone();
        }
        let mut d = masked(&(&h * &pg), &mask);
        if d.dot(&pg) <= 0.0 {
            h = DMatrix::identity(n, n);
            d = pg.clone();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let mut xn = &x + &d * t;
            if let Some(b) = bounds {
                b.project(&mut xn);
            }
            let (fnew, gnew) = f(&xn);
            if fnew.is_finite() && fnew >= fx + 1e-4 * g.dot(&(&xn - &x)) && fnew >= fx {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            let mask = blocked(&x, &g);
            return BfgsResult {
                x,
                f: fx,
                grad: g,
                iterations: iter,
                outcome: Outcome::LineSearchFailed,
                trace,
                at_bound: mask,
            };
        };
        stalled = if fnew - fx <= 1e-15 * (1.0 + fx.abs()) { stalled + 1 } else { 0 };
        if stalled >= 5 {
            let mask = blocked(&xn, &gnew);
            trace.push(fnew);
            return BfgsResult {
                x: xn,
                f: fnew,
                grad: gnew,
                iterations: iter + 1,
                outcome: Outcome::LineSearchFailed,
                trace,
                at_bound: mask,
            };
        }
        let s = &xn - &x;
        // ascent on f is descent on −f: y = ∇(−f)(new) − ∇(−f)(old)
        let y = &g - &gnew;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h *= sy / y.norm_squared();
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        fx = fnew;
        g = gnew;
        trace.push(fx);
    }
    let mask = blocked(&x, &g);
    let pg = masked(&g, &mask);
    let outcome = if pg.amax() < opts.gtol * (1.0 + fx.abs()) { Outcome::Converged } else { Outcome::MaxIter };
    BfgsResult { x, f: fx, grad: g, iterations: opts.max_iter, outcome, trace, at_bound: mask }
}

/// Central finite-difference Jacobian of a gradient, symmetrized, with step
/// `h_i = rel·(1 + |θ_i|)`.
pub fn fd_hessian<G>(mut grad: G, theta: &DVector<f64>, rel: f64) -> DMatrix<f64>
where
    G: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = theta.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = rel * (1.0 + theta[j].abs());
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += step;
        tm[j] -= step;
        let col = (grad(&tp) - grad(&tm)) / (2.0 * step);
        h.set_column(j, &col);
    }
    (&h + h.transpose()) * 0.5
}

/// Newton steps on the gradient alone, using [`fd_hessian`]; a step is kept
/// only while it shrinks `‖g‖∞`. Near an optimum the objective no longer
/// resolves changes in the last digits but the gradient still does.
pub fn refine_stationary<G>(mut grad: G, x: DVector<f64>, rel: f64, iters: usize) -> DVector<f64>
where
    G: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x;
    let mut g = grad(&x);
    for _ in 0..iters {
        let h = fd_hessian(&mut grad, &x, rel);
        let Some(step) = (-h).lu().solve(&g) else { break };
        let xn = &x + step;
        let gn = grad(&xn);
        if !(gn.amax() < g.amax()) {
            break;
        }
        x = xn;
        g = gn;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosen(x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
        let g = DVector::from_vec(vec![-(-2.0 * (1.0 - a) - 400.0 * a * (b - a * a)), -(200.0 * (b - a * a))]);
        (f, g)
    }

    #[test]
    fn rosenbrock() {
        let r = maximize(rosen, DVector::from_vec(vec![-1.2, 1.0]), &BfgsOptions::default(), None);
        assert_eq!(r.outcome, Outcome::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn bound_is_hit_exactly() {
        // increasing in x₀, concave in x₁
        let f = |x: &DVector<f64>| (x[0] - (x[1] - 2.0).powi(2), DVector::from_vec(vec![1.0, -2.0 * (x[1] - 2.0)]));
        let b = Bounds { lower: DVector::from_vec(vec![-1.0, -10.0]), upper: DVector::from_vec(vec![3.0, 10.0]) };
        let r = maximize(f, DVector::zeros(2), &BfgsOptions::default(), Some(&b));
        assert_eq!(r.outcome, Outcome::Converged);
        assert_eq!(r.x[0], 3.0);
        assert!(r.at_bound[0] && !r.at_bound[1]);
        assert!((r.x[1] - 2.0).abs() < 1e-7);
    }
}
