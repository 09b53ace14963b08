//! Derivative-free least-squares search on the unit box `[0, 1]^d`:
//! Latin-hypercube sampling, bounded Nelder–Mead and a finite-difference
//! Levenberg–Marquardt polish.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// Objective wrapper that enforces the evaluation budget and tracks the best point.
pub(crate) struct Evaluator<F> {
    f: F,
    pub used: usize,
    pub max: usize,
    pub best_u: Vec<f64>,
    pub best_value: f64,
}

impl<F: FnMut(&[f64]) -> Vec<f64>> Evaluator<F> {
    pub fn new(f: F, max: usize, dim: usize) -> Self {
        Evaluator { f, used: 0, max, best_u: vec![0.5; dim], best_value: f64::INFINITY }
    }

    pub fn exhausted(&self) -> bool {
        self.used >= self.max
    }

    /// Residual vector and its squared norm, or `None` once the budget is spent.
    pub fn residuals(&mut self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        if self.exhausted() {
            return None;
        }
        self.used += 1;
        let r = (self.f)(u);
        let value: f64 = r.iter().map(|x| x * x).sum();
        let value = if value.is_finite() { value } else { f64::INFINITY };
        if value < self.best_value {
            self.best_value = value;
            self.best_u = u.to_vec();
        }
        Some((value, r))
    }

    pub fn value(&mut self, u: &[f64]) -> Option<f64> {
        self.residuals(u).map(|(v, _)| v)
    }
}

fn clamp_unit(u: &mut [f64]) {
    for x in u {
        *x = x.clamp(0.0, 1.0);
    }
}

/// `n` stratified samples in `[0, 1]^dim`: one per row and column slab.
pub(crate) fn latin_hypercube(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[d] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexOptions {
    pub initial_step: f64,
    pub max_evaluations: usize,
    pub ftol: f64,
    pub xtol: f64,
}

/// Bounded Nelder–Mead with dimension-adaptive coefficients; trial points are
/// clamped to the unit box. Returns the number of evaluations spent.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> Vec<f64>>(
    ev: &mut Evaluator<F>,
    start: &[f64],
    opts: SimplexOptions,
) -> usize {
    let dim = start.len();
    let n = dim as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2.0 * n), 1.0 - 1.0 / n);
    let first = ev.used;
    let budget_left = |ev: &Evaluator<F>| ev.used - first < opts.max_evaluations && !ev.exhausted();

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let Some(f0) = ev.value(start) else { return 0 };
    simplex.push((start.to_vec(), f0));
    for d in 0..dim {
        let mut v = start.to_vec();
        v[d] += if v[d] + opts.initial_step <= 1.0 { opts.initial_step } else { -opts.initial_step };
        clamp_unit(&mut v);
        let Some(f) = ev.value(&v) else { return ev.used - first };
        simplex.push((v, f));
    }

    while budget_left(ev) {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[dim].1);
        let spread = (worst - best).abs() <= opts.ftol * (best.abs() + 1e-300);
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread && diameter <= opts.xtol || diameter <= 1e-3 * opts.xtol {
            break;
        }

        let centroid: Vec<f64> = (0..dim).map(|d| simplex[..dim].iter().map(|(v, _)| v[d]).sum::<f64>() / n).collect();
        let along = |t: f64| {
            let mut v: Vec<f64> = centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + t * (c - w)).collect();
            clamp_unit(&mut v);
            v
        };

        let xr = along(alpha);
        let Some(fr) = ev.value(&xr) else { break };
        if fr < simplex[0].1 {
            let xe = along(alpha * gamma);
            let Some(fe) = ev.value(&xe) else { break };
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst {
            let xc = along(alpha * rho);
            let Some(fc) = ev.value(&xc) else { break };
            (xc, fc)
        } else {
            let xc = along(-rho);
            let Some(fc) = ev.value(&xc) else { break };
            (xc, fc)
        };
        if fc < fr.min(worst) {
            simplex[dim] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let v: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, x)| a + sigma * (x - a)).collect();
            let Some(f) = ev.value(&v) else { return ev.used - first };
            *vertex = (v, f);
        }
    }
    ev.used - first
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PolishOptions {
    pub fd_step: f64,
    pub max_iterations: usize,
    pub rtol: f64,
}

/// Levenberg–Marquardt on the residual vector with a central-difference
/// Jacobian; steps are clamped to the unit box.
pub(crate) fn levenberg_marquardt<F: FnMut(&[f64]) -> Vec<f64>>(
    ev: &mut Evaluator<F>,
    start: &[f64],
    opts: PolishOptions,
) {
    let dim = start.len();
    let mut u = start.to_vec();
    let Some((mut value, mut r)) = ev.residuals(&u) else { return };
    let mut lambda = 1e-3;

    'outer: for _ in 0..opts.max_iterations {
        let m = r.len();
        let mut jac = DMatrix::<f64>::zeros(m, dim);
        for d in 0..dim {
            // one-sided at the box faces
            let h = opts.fd_step;
            let (lo, hi) = ((u[d] - h).max(0.0), (u[d] + h).min(1.0));
            let mut a = u.clone();
            a[d] = lo;
            let mut b = u.clone();
            b[d] = hi;
            let Some((_, ra)) = ev.residuals(&a) else { break 'outer };
            let Some((_, rb)) = ev.residuals(&b) else { break 'outer };
            for i in 0..m {
                jac[(i, d)] = (rb[i] - ra[i]) / (hi - lo);
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_vec(r.clone());

        loop {
            let mut lhs = jtj.clone();
            for d in 0..dim {
                lhs[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = lhs.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    break 'outer;
                }
                continue;
            };
            let mut trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            clamp_unit(&mut trial);
            let moved = trial.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if moved < 1e-14 {
                break 'outer;
            }
            let Some((tv, tr)) = ev.residuals(&trial) else { break 'outer };
            if tv < value {
                let gain = (value - tv) / value.max(1e-300);
                u = trial;
                value = tv;
                r = tr;
                lambda = (lambda / 3.0).max(1e-12);
                if gain < opts.rtol {
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                break 'outer;
            }
        }
    }
}
