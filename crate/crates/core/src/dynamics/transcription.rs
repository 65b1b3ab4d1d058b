//! Fixed-step backward Euler transcription of the penalized system. Its
//! exact discrete adjoint lives in `adjoint.rs`.

use super::{ControlSignal, DynamicsError, DynamicsSpec, StepDiag, Trajectory};
use nalgebra::{DMatrix, DVector};

const MAX_NEWTON: usize = 40;

/// `x_{k+1} = x_k + h F(t_{k+1}, x_{k+1}, u)` with `substeps` steps per
/// control cell, returned on the fine grid. `blend` mixes `f` at a
/// reference control with weight `1 - beta`.
pub fn integrate_implicit(
    spec: &DynamicsSpec,
    gamma: f64,
    x0: &[f64],
    u: &ControlSignal,
    substeps: usize,
    blend: Option<(&ControlSignal, f64)>,
) -> Result<Trajectory, DynamicsError> {
    if substeps == 0 {
        return Err(DynamicsError::Invalid("substeps must be positive".into()));
    }
    let n = spec.n();
    let steps = u.cells() * substeps;
    let h = u.horizon() / steps as f64;
    let mut x = DVector::from_column_slice(x0);
    let xi0 = spec.penalty(gamma, x0, false)?.0;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        xi: Vec::with_capacity(steps + 1),
        diag: Vec::with_capacity(steps),
    };
    traj.times.push(0.0);
    traj.states.push(x.clone());
    traj.controls.push(u.cell(0).clone());
    traj.xi.push(xi0);

    for k in 0..steps {
        let cell = k / substeps;
        let uk = u.cell(cell).as_slice();
        let bl = blend.map(|(r, b)| (r.cell(cell).as_slice(), b));
        let t1 = if k + 1 == steps { u.horizon() } else { h * (k + 1) as f64 };
        let residual = |y: &DVector<f64>| -> Result<(DVector<f64>, Vec<f64>, DMatrix<f64>), DynamicsError> {
            let e = spec.rhs(gamma, t1, y.as_slice(), uk, bl)?;
            Ok((y - &x - e.value * h, e.xi, e.jac_x))
        };
        let mut y = x.clone();
        let (mut res, mut xi, mut jac) = residual(&y)?;
        let mut rn = finite_norm(&res);
        let mut iters = 0;
        loop {
            if rn <= 1e-14 * (1.0 + x.norm()) {
                break;
            }
            iters += 1;
            if iters > MAX_NEWTON {
                return Err(DynamicsError::StepFailure(t1));
            }
            let a = DMatrix::identity(n, n) - jac * h;
            let d = a.lu().solve(&res).ok_or(DynamicsError::StepFailure(t1))?;
            let mut s = 1.0;
            loop {
                let cand = &y - &d * s;
                let (r2, xi2, j2) = residual(&cand)?;
                let n2 = finite_norm(&r2);
                if n2 < (1.0 - 1e-4 * s) * rn || (s < 1e-6 && n2.is_finite()) {
                    y = cand;
                    res = r2;
                    xi = xi2;
                    jac = j2;
                    rn = n2;
                    break;
                }
                s *= 0.5;
                if s < 1e-12 {
                    return Err(DynamicsError::StepFailure(t1));
                }
            }
            if d.norm() * s <= 1e-15 * (1.0 + y.norm()) {
                break;
            }
        }
        x = y;
        traj.times.push(t1);
        traj.states.push(x.clone());
        traj.controls.push(u.cell((k + 1) / substeps).clone());
        traj.diag.push(StepDiag {
            substeps: iters,
            max_penalty: xi.iter().sum(),
        });
        traj.xi.push(xi);
    }
    Ok(traj)
}

fn finite_norm(v: &DVector<f64>) -> f64 {
    let n = v.norm();
    if n.is_finite() {
        n
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn tracks_penalized_limit() {
        let spec = example_spec();
        let u = ControlSignal::constant(0.5, 200, &[1.0]);
        let traj = integrate_implicit(&spec, 200.0, &[0.0, 1.0, -1.02], &u, 4, None).unwrap();
        assert_eq!(traj.len(), 801);
        let err = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, x)| (x - closed_form(t)).norm())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn steps_satisfy_the_scheme() {
        let spec = example_spec();
        let u = ControlSignal::constant(0.5, 20, &[0.3]);
        let traj = integrate_implicit(&spec, 100.0, &[0.1, 1.0, -1.5], &u, 2, None).unwrap();
        let h = 0.5 / 40.0;
        for k in 0..40 {
            let e = spec
                .rhs(100.0, traj.times[k + 1], traj.states[k + 1].as_slice(), &[0.3], None)
                .unwrap();
            let r = &traj.states[k + 1] - &traj.states[k] - e.value * h;
            assert!(r.norm() < 1e-12);
        }
    }
}
