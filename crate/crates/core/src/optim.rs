//! Deterministic full-batch minimization: L-BFGS directions with a
//! backtracking (Armijo) line search. Every accepted step strictly decreases
//! the objective, so the recorded trace is non-increasing.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Stop when `|f_k - f_{k+1}| / max(|f_k|, |f_{k+1}|, 1)` falls below this.
    pub ftol: f64,
    /// Stop when the max-norm of the gradient falls below this.
    pub gtol: f64,
    /// Number of correction pairs kept for the inverse-Hessian estimate.
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iter: 1000,
            ftol: 1e-8,
            gtol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

impl Minimum {
    pub fn gradient_max_norm(&self) -> f64 {
        max_norm(&self.gradient)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `objective`, which returns the value at `x` and writes the
/// gradient into its second argument.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &MinimizeOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 60;

    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = objective(&x, &mut grad);
    let mut trace = vec![value];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);

    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    let mut direction = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory.max(1)];

    let mut iterations = 0;
    let termination = loop {
        if max_norm(&grad) <= opts.gtol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }

        // Two-loop recursion: direction = -H * grad.
        direction.copy_from_slice(&grad);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &direction);
            for (d, yj) in direction.iter_mut().zip(y) {
                *d -= alpha[i] * yj;
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            direction.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let beta = rho * dot(y, &direction);
            for (d, sj) in direction.iter_mut().zip(s) {
                *d += (alpha[i] - beta) * sj;
            }
        }
        direction.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&grad, &direction);
        if !(slope < 0.0) {
            history.clear();
            for (d, g) in direction.iter_mut().zip(&grad) {
                *d = -g;
            }
            slope = dot(&grad, &direction);
        }
        let mut step = if history.is_empty() {
            (1.0 / dot(&grad, &grad).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((xn, xi), d) in x_new.iter_mut().zip(&x).zip(&direction) {
                *xn = xi + step * d;
            }
            let v = objective(&x_new, &mut grad_new);
            if v.is_finite() && v <= value + ARMIJO * step * slope && v < value {
                accepted = Some(v);
                break;
            }
            step *= 0.5;
        }
        let Some(value_new) = accepted else {
            break Termination::LineSearchFailed;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            if opts.memory > 0 {
                history.push_back((s, y, 1.0 / sy));
            }
        }

        let scale = value.abs().max(value_new.abs()).max(1.0);
        let rel_change = (value - value_new) / scale;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        value = value_new;
        trace.push(value);
        if rel_change < opts.ftol {
            break if max_norm(&grad) <= opts.gtol {
                Termination::GradientTolerance
            } else {
                Termination::ObjectiveTolerance
            };
        }
    };

    Minimum {
        x,
        value,
        gradient: grad,
        iterations,
        termination,
        trace,
    }
}
