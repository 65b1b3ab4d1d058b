//! Packaging a solve into maximum principle multipliers.
//!
//! The penalized solution only approaches the sweeping process, so its
//! state sits a distance of order `ln(gamma)/gamma` inside the active
//! constraints. The certificate therefore pairs the discrete adjoint with
//! the catching-up trajectory of the same control: the adjoint is
//! projected onto the tangent space of the constraints that carry a
//! multiplier, and the measures are recovered cell by cell as the normal
//! part of the adjoint increments. Whatever the tangential dynamics fail
//! to explain stays in the residual for the verifier to see.

use super::objective::terminal_normal;
use super::{InitialSet, OcpError, SolveConfig, SolveResult, SweepingProblem};
use crate::dynamics::{atom_runs, integrate_catching_up, AdjointMeasure, Atom, MeasureThresholds};
use crate::pmp::{adjoint_field, Jump, PmpCertificate, PmpError};
use nalgebra::{DMatrix, DVector};

const ACTIVE: f64 = 1e-9;

impl From<PmpError> for OcpError {
    fn from(e: PmpError) -> Self {
        match e {
            PmpError::Expr(e) => OcpError::Expr(e),
            PmpError::Set(e) => OcpError::Set(e),
            PmpError::Dynamics(e) => OcpError::Dynamics(e),
            PmpError::GridMismatch(s) => OcpError::Invalid(s),
        }
    }
}

/// Least-squares coefficients of `v` on the columns `grads`.
fn lsq(grads: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
    if grads.is_empty() {
        return DVector::zeros(0);
    }
    let a = DMatrix::from_columns(grads);
    a.svd(true, true).solve(v, 1e-12).unwrap_or_else(|_| DVector::zeros(grads.len()))
}

fn combine(grads: &[DVector<f64>], w: &DVector<f64>, n: usize) -> DVector<f64> {
    grads.iter().zip(w.iter()).fold(DVector::zeros(n), |acc, (g, &c)| acc + g * c)
}

/// Scale `(p, nu, lambda)` so that `|p(T)| + lambda = 1`, or so that
/// `lambda = 1` exactly for a free endpoint.
pub fn normalize(cert: &mut PmpCertificate, free_endpoint: bool) -> Result<(), OcpError> {
    let pt = cert.p.last().map(|p| p.norm()).unwrap_or(0.0);
    let s = if free_endpoint { cert.lambda } else { pt + cert.lambda };
    if !(s >= 1e-12) {
        return Err(OcpError::DegenerateNormalization(if free_endpoint { cert.lambda } else { pt + cert.lambda }));
    }
    let c = 1.0 / s;
    cert.p.iter_mut().for_each(|p| *p *= c);
    cert.p_jumps.iter_mut().for_each(|j| j.dp *= c);
    for nu in cert.nu.iter_mut() {
        nu.density.iter_mut().for_each(|d| *d *= c);
        nu.atoms.iter_mut().for_each(|a| a.weight *= c);
    }
    cert.lambda = if free_endpoint { 1.0 } else { cert.lambda * c };
    Ok(())
}

pub fn extract_certificate(
    res: &SolveResult,
    prob: &SweepingProblem,
    cfg: &SolveConfig,
) -> Result<PmpCertificate, OcpError> {
    let spec = &prob.spec;
    let set = &spec.set;
    let (n, r) = (prob.n(), prob.r());
    let times = res.trajectory.times.clone();
    let steps = times.len() - 1;
    if res.adjoint.p.len() != times.len() || steps != cfg.cells * cfg.substeps {
        return Err(OcpError::Invalid("solve result does not match the configuration".into()));
    }
    let u_fine = res.control.refine(cfg.substeps);
    let x0 = match &prob.c0 {
        InitialSet::Point(c) => c.clone(),
        InitialSet::Sublevel { .. } => {
            if set.psi_max(res.x0.as_slice())? > set.feas_tol() {
                set.project(res.x0.as_slice(), 1e-12)?.z
            } else {
                res.x0.clone()
            }
        }
    };
    let limit = integrate_catching_up(spec, x0.as_slice(), &u_fine, steps)?;
    let x = limit.states;
    let psi: Vec<Vec<f64>> = x
        .iter()
        .map(|x| set.psi_values(x.as_slice()))
        .collect::<Result<_, _>>()?;
    // a node sits between two projection steps; its multiplier is their mean
    let mut xi = vec![vec![0.0; steps + 1]; r];
    for k in 0..=steps {
        for i in 0..r {
            if psi[k][i] >= -ACTIVE {
                let next = limit.xi.get(k + 1).map_or(limit.xi[k][i], |v| v[i]);
                xi[i][k] = if k == 0 { limit.xi[0][i] } else { 0.5 * (limit.xi[k][i] + next) };
            }
        }
    }
    let grads_at = |x: &DVector<f64>, idx: &[usize]| -> Result<Vec<DVector<f64>>, OcpError> {
        idx.iter().map(|&i| Ok(set.psi_grad(i, x.as_slice())?.1)).collect()
    };
    let carrying = |k: usize| -> Vec<usize> { (0..r).filter(|&i| xi[i][k] > 0.0).collect() };
    let tangent = |k: usize, p: &DVector<f64>| -> Result<DVector<f64>, OcpError> {
        let g = grads_at(&x[k], &carrying(k))?;
        Ok(p - combine(&g, &lsq(&g, p), n))
    };

    let p_raw = &res.adjoint.p;
    let mut p: Vec<DVector<f64>> = (0..steps).map(|k| tangent(k, &p_raw[k])).collect::<Result<_, _>>()?;
    // terminal value from the limit endpoint with the solver's multipliers
    let (_, _, gt) = prob.g_eval(x[0].as_slice(), x[steps].as_slice())?;
    let p_end = -gt - terminal_normal(prob, &x[steps], &res.terminal_multipliers)?;
    let p_left_end = tangent(steps, &p_end)?;
    p.push(p_end.clone());

    // normal part of each cell's increment, by constraint
    let mut dens = vec![vec![0.0; steps]; r];
    let mut normal_inc = vec![DVector::zeros(n); steps];
    for k in 0..steps {
        let h = times[k + 1] - times[k];
        let pr = if k + 1 == steps { p_left_end.clone() } else { p[k + 1].clone() };
        let u = u_fine.cell(k);
        let xi_at = |j: usize| -> Vec<f64> { (0..r).map(|i| xi[i][j]).collect() };
        let gl = adjoint_field(spec, times[k], &x[k], u, &xi_at(k), &p[k])?;
        let gr = adjoint_field(spec, times[k + 1], &x[k + 1], u, &xi_at(k + 1), &pr)?;
        let d = &pr - &p[k] - (gl + gr) * (0.5 * h);
        let idx: Vec<usize> = (0..r)
            .filter(|&i| psi[k][i] >= -ACTIVE || psi[k + 1][i] >= -ACTIVE)
            .collect();
        let xm = (&x[k] + &x[k + 1]) * 0.5;
        let g = grads_at(&xm, &idx)?;
        let w = lsq(&g, &d);
        normal_inc[k] = combine(&g, &w, n);
        for (j, &i) in idx.iter().enumerate() {
            dens[i][k] = w[j] / h;
        }
    }

    // spikes become atoms at the right end of their run, with the matching
    // jump of p; inside a run p keeps only its drift
    let th = MeasureThresholds::default();
    let mut runs: Vec<(usize, usize)> = (0..r).flat_map(|i| atom_runs(&dens[i], &times, th)).collect();
    runs.sort();
    let mut merged: Vec<(usize, usize)> = vec![];
    for (s, e) in runs {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    let mut atoms: Vec<Vec<Atom>> = vec![vec![]; r];
    let mut jumps: Vec<Jump> = vec![];
    for &(s, e) in &merged {
        let mut acc = DVector::zeros(n);
        for c in s..e {
            acc += &normal_inc[c];
            if c + 1 < e {
                p[c + 1] -= &acc;
            }
        }
        for i in 0..r {
            let w: f64 = (s..e).map(|c| dens[i][c] * (times[c + 1] - times[c])).sum();
            (s..e).for_each(|c| dens[i][c] = 0.0);
            if w != 0.0 {
                atoms[i].push(Atom { t: times[e], weight: w });
            }
        }
        jumps.push(Jump { t: times[e], dp: acc });
    }

    // jump into the terminal value
    let dp_end = &p_end - &p_left_end;
    if dp_end.iter().any(|&v| v != 0.0) {
        let idx = carrying(steps);
        let g = grads_at(&x[steps], &idx)?;
        let w = lsq(&g, &dp_end);
        for (j, &i) in idx.iter().enumerate() {
            match atoms[i].iter_mut().find(|a| a.t == times[steps]) {
                Some(a) => a.weight += w[j],
                None => atoms[i].push(Atom {
                    t: times[steps],
                    weight: w[j],
                }),
            }
        }
        match jumps.iter_mut().find(|j| j.t == times[steps]) {
            Some(j) => j.dp += dp_end,
            None => jumps.push(Jump {
                t: times[steps],
                dp: dp_end,
            }),
        }
    }

    let mut u: Vec<DVector<f64>> = u_fine.values().to_vec();
    u.push(u_fine.cell(steps - 1).clone());
    let nu = dens
        .into_iter()
        .zip(atoms)
        .map(|(density, atoms)| AdjointMeasure {
            times: times.clone(),
            density,
            atoms,
        })
        .collect();
    let mut cert = PmpCertificate {
        times,
        x,
        u,
        p,
        p_jumps: jumps,
        nu,
        xi,
        lambda: 1.0,
    };
    normalize(&mut cert, prob.free_endpoint())?;
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn zero_multipliers_cannot_be_normalized() {
        let mut cert = reference::certificate(20);
        cert.p.iter_mut().for_each(|p| p.fill(0.0));
        cert.lambda = 0.0;
        assert!(matches!(
            normalize(&mut cert, false),
            Err(OcpError::DegenerateNormalization(_))
        ));
    }

    #[test]
    fn normalization_fixes_the_sum() {
        let mut cert = reference::certificate(20);
        cert.lambda = 1.0;
        cert.p.iter_mut().for_each(|p| *p *= 4.0);
        normalize(&mut cert, false).unwrap();
        let s = cert.p.last().unwrap().norm() + cert.lambda;
        assert!((s - 1.0).abs() < 1e-15);
        assert!((cert.lambda - 0.25).abs() < 1e-15);
    }
}
