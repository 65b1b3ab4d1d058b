//! Box-constrained minimization: projected gradient or L-BFGS on the free
//! variables, with an Armijo search along the projection arc.

use super::objective::{Evaluation, Stage};
use super::{OcpError, Optimizer};
use std::collections::VecDeque;

const MEMORY: usize = 8;
const ARMIJO: f64 = 1e-4;

pub(crate) struct Outcome {
    pub v: Vec<f64>,
    pub eval: Evaluation,
    pub iterations: usize,
    pub projected_gradient: f64,
    pub converged: bool,
}

fn project(v: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(lo[i], hi[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sup norm of the projected gradient step, in the weighted metric.
fn projected_gradient(v: &[f64], g: &[f64], lo: &[f64], hi: &[f64], w: &[f64]) -> f64 {
    (0..v.len())
        .map(|i| ((v[i] - g[i] / w[i]).clamp(lo[i], hi[i]) - v[i]).abs())
        .fold(0.0, f64::max)
}

fn free_mask(v: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    (0..v.len())
        .map(|i| {
            let span = (hi[i] - lo[i]).abs().min(1.0);
            let eps = 1e-12 * span.max(1e-300);
            !((v[i] <= lo[i] + eps && g[i] > 0.0) || (v[i] >= hi[i] - eps && g[i] < 0.0))
        })
        .collect()
}

/// Two-loop recursion on the masked gradient.
fn lbfgs_direction(g: &[f64], free: &[bool], w: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().zip(free).map(|(&x, &f)| if f { x } else { 0.0 }).collect();
    if mem.is_empty() {
        let scaled: Vec<f64> = q.iter().zip(w).map(|(x, w)| -x / w).collect();
        let top = scaled.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        return if top > 0.0 { scaled.iter().map(|v| v / top).collect() } else { scaled };
    }
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y) in mem.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for i in 0..q.len() {
            q[i] -= a * y[i];
        }
        alphas.push((a, rho));
    }
    let (s, y) = mem.back().unwrap();
    let h0 = dot(s, y) / dot(y, y);
    let mut r: Vec<f64> = q.iter().map(|x| h0 * x).collect();
    for ((s, y), (a, rho)) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &r);
        for i in 0..r.len() {
            r[i] += s[i] * (a - b);
        }
    }
    r.iter().zip(free).map(|(&x, &f)| if f { -x } else { 0.0 }).collect()
}

fn try_eval(stage: &Stage, v: &[f64]) -> Result<Option<Evaluation>, OcpError> {
    match stage.evaluate(v, true) {
        Ok(e) if e.parts.total().is_finite() => Ok(Some(e)),
        Ok(_) | Err(OcpError::Dynamics(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub(crate) fn minimize(stage: &Stage, mut v: Vec<f64>) -> Result<Outcome, OcpError> {
    let cfg = stage.cfg;
    let (lo, hi, w) = stage.bounds();
    project(&mut v, &lo, &hi);
    let mut cur = stage.evaluate(&v, true)?;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(MEMORY);
    let mut accepted = 0;
    let mut quiet = 0;

    for iter in 0..cfg.max_inner {
        let pg = projected_gradient(&v, &cur.grad, &lo, &hi, &w);
        if pg <= cfg.grad_tol {
            return Ok(Outcome {
                v,
                eval: cur,
                iterations: iter,
                projected_gradient: pg,
                converged: true,
            });
        }
        let free = free_mask(&v, &cur.grad, &lo, &hi);
        let mut d = match cfg.optimizer {
            Optimizer::Lbfgs => lbfgs_direction(&cur.grad, &free, &w, &mem),
            Optimizer::ProjectedGradient => lbfgs_direction(&cur.grad, &free, &w, &VecDeque::new()),
        };
        if dot(&d, &cur.grad) >= 0.0 {
            mem.clear();
            d = lbfgs_direction(&cur.grad, &free, &w, &mem);
        }
        let f0 = cur.parts.total();
        let mut step = None;
        let mut s = 1.0;
        for _ in 0..40 {
            let mut cand: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            project(&mut cand, &lo, &hi);
            let moved: Vec<f64> = cand.iter().zip(&v).map(|(a, b)| a - b).collect();
            let slope = dot(&cur.grad, &moved);
            if slope >= 0.0 && moved.iter().all(|&m| m == 0.0) {
                break;
            }
            if let Some(e) = try_eval(stage, &cand)? {
                if e.parts.total() <= f0 + ARMIJO * slope.min(0.0) {
                    step = Some((cand, e));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((cand, e)) = step else {
            if !mem.is_empty() {
                mem.clear();
                continue;
            }
            if accepted == 0 && pg > 1e3 * cfg.grad_tol {
                return Err(OcpError::LineSearchStall {
                    gamma: stage.gamma,
                    iter,
                });
            }
            return Ok(Outcome {
                v,
                eval: cur,
                iterations: iter,
                projected_gradient: pg,
                converged: false,
            });
        };
        accepted += 1;
        let sv: Vec<f64> = cand.iter().zip(&v).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = e.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() {
            if mem.len() == MEMORY {
                mem.pop_front();
            }
            mem.push_back((sv, yv));
        }
        let f1 = e.parts.total();
        quiet = if f0 - f1 <= 1e-14 * (1.0 + f0.abs()) { quiet + 1 } else { 0 };
        v = cand;
        cur = e;
        if quiet >= 3 {
            let pg = projected_gradient(&v, &cur.grad, &lo, &hi, &w);
            return Ok(Outcome {
                v,
                eval: cur,
                iterations: iter + 1,
                projected_gradient: pg,
                converged: false,
            });
        }
    }
    let pg = projected_gradient(&v, &cur.grad, &lo, &hi, &w);
    Ok(Outcome {
        v,
        eval: cur,
        iterations: cfg.max_inner,
        projected_gradient: pg,
        converged: pg <= cfg.grad_tol,
    })
}
