//! Limited-memory BFGS with Armijo backtracking.
//!
//! The objective closure returns the value and a gradient. The gradient does
//! not have to be the exact derivative of the value (barycenters use
//! detached-coupling gradients), so a step is only accepted when it passes
//! the sufficient-decrease test, and a failed line search falls back to a
//! short plain gradient step that is itself only kept if it does not
//! increase the objective.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop once the gradient infinity-norm falls to this value.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    pub max_halvings: usize,
    pub fallback_step: f64,
    pub max_consecutive_fallbacks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            memory: 10,
            grad_tol: 1e-6,
            c1: 1e-4,
            max_halvings: 20,
            fallback_step: 1e-3,
            max_consecutive_fallbacks: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    /// Best iterate found.
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub fallbacks: usize,
    /// Set when the run stopped after repeated line-search failures.
    pub warning: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() || sy <= 0.0 {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let scale = match self.pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / dot(g, g).sqrt().max(1.0),
        };
        for qi in &mut q {
            *qi *= scale;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter().map(|v| -v).collect()
    }
}

pub fn minimize<F>(x0: Vec<f64>, opts: &LbfgsOptions, mut objective: F) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if opts.max_iters == 0 || opts.memory == 0 {
        return Err(Error::InvalidParameter(
            "max_iters and memory must be at least 1".into(),
        ));
    }
    if !(opts.grad_tol > 0.0) {
        return Err(Error::InvalidParameter("gradient tolerance must be positive".into()));
    }
    let mut x = x0;
    let (mut fx, mut g) = objective(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite("initial objective".into()));
    }
    let mut history = History {
        pairs: VecDeque::with_capacity(opts.memory),
        capacity: opts.memory,
    };
    let mut report = LbfgsReport {
        x: Vec::new(),
        value: fx,
        trace: vec![fx],
        iterations: 0,
        converged: false,
        fallbacks: 0,
        warning: false,
    };
    let mut consecutive_fallbacks = 0;

    while report.iterations < opts.max_iters {
        if inf_norm(&g) <= opts.grad_tol {
            report.converged = true;
            break;
        }
        report.iterations += 1;

        let mut d = history.direction(&g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.pairs.clear();
            d = history.direction(&g);
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = objective(&trial)?;
            if ft.is_finite() && ft <= fx + opts.c1 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }

        match accepted {
            Some((xn, fnew, gnew)) => {
                let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
                history.push(s, y);
                x = xn;
                fx = fnew;
                g = gnew;
                report.trace.push(fx);
                consecutive_fallbacks = 0;
            }
            None => {
                report.fallbacks += 1;
                consecutive_fallbacks += 1;
                history.pairs.clear();
                let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - opts.fallback_step * gi).collect();
                let (ft, gt) = objective(&trial)?;
                if ft.is_finite() && ft <= fx {
                    x = trial;
                    fx = ft;
                    g = gt;
                    report.trace.push(fx);
                }
                if consecutive_fallbacks >= opts.max_consecutive_fallbacks {
                    report.warning = true;
                    break;
                }
            }
        }
    }
    report.x = x;
    report.value = fx;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LbfgsOptions {
            max_iters: 500,
            ..Default::default()
        };
        let r = minimize(vec![-1.2, 1.0], &opts, rosenbrock).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_converges_quickly() {
        let r = minimize(vec![3.0, -4.0, 1.0], &LbfgsOptions::default(), |x| {
            let f = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum();
            let g = x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).collect();
            Ok((f, g))
        })
        .unwrap();
        assert!(r.converged);
        assert!(r.value < 1e-12);
        assert!(r.iterations < 20);
    }

    #[test]
    fn misleading_gradient_triggers_fallback_warning() {
        // gradient points uphill, so every search fails
        let r = minimize(vec![1.0], &LbfgsOptions::default(), |x| {
            Ok((x[0] * x[0], vec![-2.0 * x[0]]))
        })
        .unwrap();
        assert!(r.warning);
        assert_eq!(r.fallbacks, 5);
        assert_eq!(r.trace, vec![1.0]);
        assert_eq!(r.x, vec![1.0]);
    }

    #[test]
    fn already_stationary() {
        let r = minimize(vec![0.0], &LbfgsOptions::default(), |x| {
            Ok((x[0] * x[0], vec![2.0 * x[0]]))
        })
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }
}
