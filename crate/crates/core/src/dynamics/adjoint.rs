//! Backward sweep of the exact discrete adjoint of the implicit
//! transcription.
//!
//! With `A_k = I - h J(x_k)` the forward step is
//! `x_{k+1} - x_k - h F(x_{k+1}) = 0`; its adjoint is
//! `p_k = A_{k+1}^{-T} p_{k+1} - r_k`, where `r_k` is the gradient of the
//! running cost at node `k`. The Jacobian `J` carries the penalty term
//! `gamma xi_i grad psi_i grad psi_i^T`, whose action on the adjoint is
//! recorded as the measure densities `gamma xi_i <grad psi_i, p>`.

use super::{ControlSignal, DynamicsError, DynamicsSpec, Trajectory};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub times: Vec<f64>,
    /// Adjoint at every node of the fine grid.
    pub p: Vec<DVector<f64>>,
    /// `A_{k+1}^{-T} p_{k+1}` for each cell `k`.
    pub mu: Vec<DVector<f64>>,
    /// `nu_density[i][k]` is constant on cell `k`.
    pub nu_density: Vec<Vec<f64>>,
    /// Gradient of the discrete objective with respect to each control cell.
    pub grad_u: Vec<DVector<f64>>,
}

pub fn adjoint_sweep(
    spec: &DynamicsSpec,
    gamma: f64,
    traj: &Trajectory,
    u: &ControlSignal,
    blend: Option<(&ControlSignal, f64)>,
    running: &[DVector<f64>],
    p_terminal: &DVector<f64>,
) -> Result<AdjointPath, DynamicsError> {
    let steps = traj.len() - 1;
    if steps == 0 {
        return Ok(AdjointPath {
            times: traj.times.clone(),
            p: vec![p_terminal.clone()],
            mu: vec![],
            nu_density: vec![vec![]; spec.r()],
            grad_u: vec![DVector::zeros(u.m()); u.cells()],
        });
    }
    if steps % u.cells() != 0 || running.len() < steps {
        return Err(DynamicsError::GridMismatch);
    }
    let substeps = steps / u.cells();
    let (n, r) = (spec.n(), spec.r());
    let mut p = vec![DVector::zeros(n); steps + 1];
    let mut mu = vec![DVector::zeros(n); steps];
    let mut nu = vec![vec![0.0; steps]; r];
    let mut grad_u = vec![DVector::zeros(u.m()); u.cells()];
    p[steps] = p_terminal.clone();

    for k in (0..steps).rev() {
        let cell = k / substeps;
        let h = traj.times[k + 1] - traj.times[k];
        let x1 = traj.states[k + 1].as_slice();
        let bl = blend.map(|(rf, b)| (rf.cell(cell).as_slice(), b));
        let e = spec.rhs(gamma, traj.times[k + 1], x1, u.cell(cell).as_slice(), bl)?;
        let a_t = (DMatrix::identity(n, n) - e.jac_x * h).transpose();
        let m = a_t
            .lu()
            .solve(&p[k + 1])
            .ok_or(DynamicsError::StepFailure(traj.times[k + 1]))?;
        for i in 0..r {
            if e.xi[i] != 0.0 {
                let g = spec.set.psi_grad(i, x1)?.1;
                nu[i][k] = gamma * e.xi[i] * g.dot(&m);
            }
        }
        grad_u[cell] -= e.jac_u.transpose() * &m * h;
        p[k] = &m - &running[k];
        mu[k] = m;
    }
    Ok(AdjointPath {
        times: traj.times.clone(),
        p,
        mu,
        nu_density: nu,
        grad_u,
    })
}

/// Adjoint along a penalized trajectory with running term `lambda omega`,
/// terminal value `p_t`, and `f` blended between `u_ref` and `u` by `beta`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_adjoint(
    spec: &DynamicsSpec,
    gamma: f64,
    traj: &Trajectory,
    u: &ControlSignal,
    u_ref: &ControlSignal,
    beta: f64,
    lambda: f64,
    omega: &[DVector<f64>],
    p_t: &DVector<f64>,
) -> Result<AdjointPath, DynamicsError> {
    if omega.len() != traj.len() {
        return Err(DynamicsError::GridMismatch);
    }
    let running: Vec<DVector<f64>> = (0..traj.len())
        .map(|k| {
            let h = if k + 1 < traj.len() { traj.times[k + 1] - traj.times[k] } else { 0.0 };
            &omega[k] * (h * lambda)
        })
        .collect();
    adjoint_sweep(spec, gamma, traj, u, Some((u_ref, beta)), &running, p_t)
}
