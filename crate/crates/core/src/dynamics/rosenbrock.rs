//! Adaptive two-stage Rosenbrock (W-method) integration of the penalized
//! system. The penalty and potential Jacobians are treated implicitly, the
//! perturbation `f` explicitly.

use super::{ControlSignal, DynamicsError, DynamicsSpec, StepDiag, Trajectory};
use nalgebra::{DMatrix, DVector};

const GAMMA_R: f64 = 1.0 + std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenalizedOpts {
    pub atol: f64,
    pub rtol: f64,
    /// Smallest step as a fraction of the horizon.
    pub h_min_factor: f64,
    /// Invariance slack; `None` means `1e-6 (1 + 2 Mbar / eta)`.
    pub inv_tol: Option<f64>,
}

impl Default for PenalizedOpts {
    fn default() -> Self {
        PenalizedOpts {
            atol: 1e-8,
            rtol: 1e-6,
            h_min_factor: 1e-9,
            inv_tol: None,
        }
    }
}

impl PenalizedOpts {
    pub fn inv_tol(&self, spec: &DynamicsSpec) -> f64 {
        self.inv_tol
            .unwrap_or(1e-6 * (1.0 + 2.0 * spec.mbar / spec.set.eta()))
    }
}

struct Stage {
    f: DVector<f64>,
    jac: DMatrix<f64>,
    xi_sum: f64,
}

fn stage(
    spec: &DynamicsSpec,
    gamma: f64,
    t: f64,
    x: &DVector<f64>,
    u: &[f64],
    with_jac: bool,
) -> Result<Stage, DynamicsError> {
    let fphi = spec.f_phi(t, x.as_slice(), u)?;
    let (xi, force, pjac) = spec.penalty(gamma, x.as_slice(), with_jac)?;
    let jac = if with_jac {
        let (_, hphi) = spec.phi_hessian(t, x.as_slice())?;
        -(pjac + hphi)
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(Stage {
        f: fphi - force,
        jac,
        xi_sum: xi.iter().sum(),
    })
}

/// Integrate the penalized system from `x0` under `u`, sampling on the
/// control grid. `x0` must lie in `C^gamma` and `gamma > 2 Mbar / eta`.
pub fn integrate_penalized(
    spec: &DynamicsSpec,
    gamma: f64,
    x0: &[f64],
    u: &ControlSignal,
    opts: &PenalizedOpts,
) -> Result<Trajectory, DynamicsError> {
    let floor = 2.0 * spec.mbar / spec.set.eta();
    if !(gamma > floor) {
        return Err(DynamicsError::Precondition(format!(
            "gamma = {gamma} must exceed 2*Mbar/eta = {floor:.6}"
        )));
    }
    let start = spec.set.psi_gamma(gamma, x0)?.value;
    if start > 0.0 {
        return Err(DynamicsError::Precondition(format!(
            "x0 is outside C^gamma (psi_gamma = {start:e})"
        )));
    }
    if u.m() != spec.m() {
        return Err(DynamicsError::Invalid("control dimension mismatch".into()));
    }
    let inv_tol = opts.inv_tol(spec);
    let n = spec.n();
    let xi_at = |x: &DVector<f64>| -> Result<Vec<f64>, DynamicsError> {
        Ok(spec.penalty(gamma, x.as_slice(), false)?.0)
    };

    let mut x = DVector::from_column_slice(x0);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        controls: vec![u.cell(0).clone()],
        xi: vec![xi_at(&x)?],
        diag: vec![],
    };
    if u.horizon() == 0.0 {
        return Ok(traj);
    }
    let h_min = u.horizon() * opts.h_min_factor;
    let mut h = (u.dt()).min(1e-3 * u.horizon());

    for j in 0..u.cells() {
        let uj = u.cell(j).as_slice().to_vec();
        let (mut t, t_end) = (u.time(j), u.time(j + 1));
        let mut diag = StepDiag::default();
        while t < t_end {
            let last = t + h >= t_end - 1e-14 * t_end.abs().max(1.0);
            let step = if last { t_end - t } else { h };
            let s0 = stage(spec, gamma, t, &x, &uj, true)?;
            let w = DMatrix::identity(n, n) - &s0.jac * (GAMMA_R * step);
            let lu = w.lu();
            let trial = (|| -> Result<Option<(DVector<f64>, f64)>, DynamicsError> {
                let Some(k1) = lu.solve(&s0.f) else { return Ok(None) };
                let x1 = &x + &k1 * step;
                let s1 = stage(spec, gamma, t + step, &x1, &uj, false)?;
                let Some(k2) = lu.solve(&(&s1.f - &k1 * 2.0)) else { return Ok(None) };
                let xn = &x + &k1 * (1.5 * step) + &k2 * (0.5 * step);
                let e = (&k1 + &k2) * (0.5 * step);
                let mut err: f64 = 0.0;
                for i in 0..n {
                    let sc = opts.atol + opts.rtol * x[i].abs().max(xn[i].abs());
                    err = err.max(e[i].abs() / sc);
                }
                if !err.is_finite() || !xn.iter().all(|v| v.is_finite()) {
                    return Ok(None);
                }
                Ok(Some((xn, err)))
            })()?;
            match trial {
                Some((xn, err)) if err <= 1.0 => {
                    x = xn;
                    t = if last { t_end } else { t + step };
                    diag.substeps += 1;
                    diag.max_penalty = diag.max_penalty.max(s0.xi_sum);
                    let fac = if err == 0.0 { 5.0 } else { (0.9 / err.sqrt()).clamp(0.2, 5.0) };
                    if !last || fac < 1.0 {
                        h = step * fac;
                    }
                }
                Some((_, err)) => h = step * (0.9 / err.sqrt()).clamp(0.1, 0.5),
                None => h = step * 0.25,
            }
            if h < h_min {
                return Err(DynamicsError::StepFailure(t));
            }
        }
        let pg = spec.set.psi_gamma(gamma, x.as_slice())?.value;
        if pg > inv_tol {
            return Err(DynamicsError::InvarianceViolation { t: t_end, value: pg });
        }
        traj.times.push(t_end);
        traj.xi.push(xi_at(&x)?);
        traj.states.push(x.clone());
        traj.controls.push(u.cell(j + 1).clone());
        traj.diag.push(diag);
    }
    Ok(traj)
}
