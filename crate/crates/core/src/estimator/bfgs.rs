//! Quasi-Newton minimization with an inverse-Hessian BFGS update and
//! backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            grad_tol: 1e-7,
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search found no acceptable step even along steepest descent.
    pub stalled: bool,
}

/// Curvature threshold below which the update is skipped.
const CURVATURE_EPS: f64 = 1e-12;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut g = DVector::from_vec(g0);
    if n == 0 {
        return BfgsOutcome {
            x: Vec::new(),
            f: fx,
            grad_inf_norm: 0.0,
            iterations: 0,
            converged: true,
            stalled: false,
        };
    }

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut h_is_identity = true;
    let mut scaled = false;
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            h_is_identity = true;
            d = -g.clone();
            slope = g.dot(&d);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let xn = &x + alpha * &d;
            let (fn_, gn) = f(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + opts.c1 * alpha * slope {
                accepted = Some((xn, fn_, DVector::from_vec(gn)));
                break;
            }
            alpha *= opts.shrink;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if h_is_identity {
                stalled = true;
                break;
            }
            h = DMatrix::identity(n, n);
            h_is_identity = true;
            continue;
        };

        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > CURVATURE_EPS {
            if !scaled {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(s·(Hy)ᵀ + (Hy)·sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h_is_identity = false;
        }
        x = xn;
        fx = fn_;
        g = gn;
    }

    if !converged && inf_norm(&g) <= opts.grad_tol {
        converged = true;
    }
    BfgsOutcome {
        grad_inf_norm: inf_norm(&g),
        x: x.as_slice().to_vec(),
        f: fx,
        iterations,
        converged,
        stalled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-9,
            ..Default::default()
        };
        let out = minimize(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(out.converged, "{out:?}");
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stationary_start_is_returned_unchanged() {
        let quad = |x: &[f64]| ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]);
        let out = minimize(quad, &[2.0], &BfgsOptions::default());
        assert_eq!(out.x, vec![2.0]);
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
    }

    #[test]
    fn never_increases_the_objective() {
        let bumpy = |x: &[f64]| {
            let f = x[0].sin() * 3.0 + 0.1 * x[0] * x[0] + (x[1] - 1.0).powi(4);
            let g = vec![3.0 * x[0].cos() + 0.2 * x[0], 4.0 * (x[1] - 1.0).powi(3)];
            (f, g)
        };
        for start in [-7.0, -2.0, 0.5, 4.0, 9.0] {
            let x0 = [start, start * 0.3];
            let f0 = bumpy(&x0).0;
            let out = minimize(bumpy, &x0, &BfgsOptions::default());
            assert!(out.f <= f0);
        }
    }

    #[test]
    fn empty_problem() {
        let out = minimize(|_| (1.0, vec![]), &[], &BfgsOptions::default());
        assert!(out.converged && out.x.is_empty());
    }
}
