//! Derivative-free maximization and finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Maximizes `f` with the Nelder–Mead simplex method.
///
/// Stops when the spread of function values across the simplex falls below
/// `tol` (absolute, relative to `1 + |f_best|`) and the simplex diameter is
/// below `sqrt(tol)`, or after `max_evals` evaluations. Non-finite values are
/// treated as `−∞`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    initial_step: f64,
    tol: f64,
    max_evals: usize,
) -> OptimResult {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    if d == 0 {
        let value = eval(x0, &mut evals);
        return OptimResult { x: Vec::new(), value, evaluations: evals, converged: value.is_finite() };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += initial_step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals < max_evals {
        // descending order of value: best first
        simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if best.is_finite() && (best - worst).abs() <= tol * (1.0 + best.abs()) && diameter <= tol.sqrt() {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[d].0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr > simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr > worst {
                let xc = along(rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc > worst.max(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for (xi, bi) in x.iter_mut().zip(&x_best) {
                        *xi = bi + sigma * (*xi - bi);
                    }
                    *v = eval(x, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, value) = simplex.swap_remove(0);
    OptimResult { x, value, evaluations: evals, converged }
}

/// Central-difference gradient with step `h`.
pub fn gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian with step `h`; `f0 = f(x)`.
pub fn hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64], f0: f64, h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut out = DMatrix::zeros(d, d);
    let shifted = |i: usize, si: f64, j: usize, sj: f64| {
        let mut y = x.to_vec();
        y[i] += si;
        y[j] += sj;
        f(&y)
    };
    for i in 0..d {
        out[(i, i)] = (shifted(i, h, i, 0.0) - 2.0 * f0 + shifted(i, -h, i, 0.0)) / (h * h);
        for j in 0..i {
            let v = (shifted(i, h, j, h) - shifted(i, h, j, -h) - shifted(i, -h, j, h) + shifted(i, -h, j, -h))
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Refines a maximizer with damped Newton steps on finite-difference
/// derivatives; a step is only accepted if it increases `f`.
pub fn newton_polish(f: &impl Fn(&[f64]) -> f64, x0: &[f64], f0: f64, h: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f0;
    if x.is_empty() {
        return (x, fx);
    }
    for _ in 0..max_iter {
        let g = DVector::from_vec(gradient(f, &x, h));
        let hm = hessian(f, &x, fx, h);
        let neg = -hm;
        let Some(chol) = neg.cholesky() else { break };
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..10 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let fc = f(&cand);
            if fc > fx {
                let gain = fc - fx;
                x = cand;
                fx = fc;
                improved = gain > 1e-12 * (1.0 + fx.abs());
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_maximum() {
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2) - 0.5 * x[0] * x[1];
        let r = nelder_mead(f, &[0.0, 0.0], 0.5, 1e-12, 5000);
        assert!(r.converged);
        // stationary point of the quadratic by direct solve
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 6.0]);
        let b = DVector::from_vec(vec![2.0, -12.0]);
        let s = a.lu().solve(&b).unwrap();
        assert!((r.x[0] - s[0]).abs() < 1e-4 && (r.x[1] - s[1]).abs() < 1e-4);
        let (xp, _) = newton_polish(&f, &r.x, r.value, 1e-3, 10);
        assert!((xp[0] - s[0]).abs() < 1e-8 && (xp[1] - s[1]).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_valley() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let r = nelder_mead(f, &[-1.2, 1.0], 0.5, 1e-14, 10_000);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn finite_difference_hessian_of_a_quadratic_is_exact() {
        let f = |x: &[f64]| 2.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1] * x[1];
        let h = hessian(&f, &[0.3, -0.7], f(&[0.3, -0.7]), 1e-3);
        assert!((h[(0, 0)] - 4.0).abs() < 1e-6);
        assert!((h[(0, 1)] + 1.0).abs() < 1e-6);
        assert!((h[(1, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infinite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NEG_INFINITY } else { -(x[0] - 2.0).powi(2) };
        let r = nelder_mead(f, &[0.5], 1.0, 1e-10, 2000);
        assert!((r.x[0] - 2.0).abs() < 1e-4);
    }
}
