//! Limited-memory BFGS minimisation with central finite-difference gradients
//! and a backtracking Armijo line search.
//!
//! Failed objective evaluations are passed in as `+∞`, which the line search
//! treats as an insufficient decrease.

use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `‖∇f‖_∞` falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step improves `f` by less than `f_tol·(1+|f|)`.
    pub f_tol: f64,
    /// Evaluate the gradient coordinates in parallel.
    pub parallel: bool,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 7,
            max_iterations: 200,
            grad_tol: 1e-4,
            f_tol: 1e-12,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Central-difference gradient with step `1e-4·(1+|θ_i|)`; falls back to a
/// one-sided difference if one side is not finite.
pub fn fd_gradient<F>(f: &F, x: &[f64], fx: f64, parallel: bool) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let coord = |i: usize| {
        let h = 1e-4 * (1.0 + x[i].abs());
        let mut xp = x.to_vec();
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        }
    };
    if parallel {
        (0..x.len()).into_par_iter().map(coord).collect()
    } else {
        (0..x.len()).map(coord).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises `f` from `x0`. Accepted steps never increase `f`.
pub fn minimize<F>(f: &F, x0: &[f64], cfg: &LbfgsConfig) -> OptimResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut trace = vec![fx];
    if !fx.is_finite() || n == 0 {
        return OptimResult {
            x,
            f: fx,
            iterations: 0,
            converged: n == 0 && fx.is_finite(),
            trace,
            evaluations: evals,
        };
    }
    let mut g = fd_gradient(f, &x, fx, cfg.parallel);
    evals += 2 * n;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut converged = inf_norm(&g) < cfg.grad_tol;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alphas[i] * yj;
            }
        }
        let gamma = if m > 0 {
            dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / inf_norm(&g).max(1.0)
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..m {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alphas[i] - beta) * sj;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &d);
            s_hist.clear();
            y_hist.clear();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let fnew = f(&xn);
            evals += 1;
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if !s_hist.is_empty() {
                // retry from steepest descent with a fresh memory
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            break;
        };
        let gn = fd_gradient(f, &xn, fnew, cfg.parallel);
        evals += 2 * n;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(fx);
        converged = inf_norm(&g) < cfg.grad_tol || improvement < cfg.f_tol * (1.0 + fx.abs());
    }
    OptimResult {
        x,
        f: fx,
        iterations,
        converged,
        trace,
        evaluations: evals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = LbfgsConfig {
            max_iterations: 500,
            grad_tol: 1e-6,
            ..Default::default()
        };
        let r = minimize(&f, &[-1.2, 1.0], &cfg);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infinite_region_is_avoided() {
        let f = |x: &[f64]| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 2.0).powi(2) };
        let r = minimize(&f, &[3.0], &LbfgsConfig::default());
        assert!((r.x[0] - 2.0).abs() < 1e-4);
        assert!(r.converged);
    }

    #[test]
    fn non_finite_start() {
        let r = minimize(&|_: &[f64]| f64::NAN, &[0.0], &LbfgsConfig::default());
        assert!(!r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn gradient_matches_analytic() {
        let f = |x: &[f64]| x[0].sin() * x[1].exp();
        let x = [0.3, -0.4];
        let g = fd_gradient(&f, &x, f(&x), false);
        assert!((g[0] - x[0].cos() * x[1].exp()).abs() < 1e-7);
        assert!((g[1] - x[0].sin() * x[1].exp()).abs() < 1e-7);
    }
}
