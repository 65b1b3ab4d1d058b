use super::{ControlSignal, DynamicsError, DynamicsSpec, StepDiag, Trajectory};
use nalgebra::DVector;

const PROJ_TOL: f64 = 1e-11;

/// Moreau catching-up scheme `x+ = proj_C(x + h f_Phi(t, x, u))` with
/// `n_sub` uniform steps, reported on the control grid. Multipliers are the
/// projection's KKT coefficients divided by `h`.
pub fn integrate_catching_up(
    spec: &DynamicsSpec,
    x0: &[f64],
    u: &ControlSignal,
    n_sub: usize,
) -> Result<Trajectory, DynamicsError> {
    let cells = u.cells();
    if n_sub == 0 || n_sub % cells != 0 {
        return Err(DynamicsError::Invalid(format!(
            "step count {n_sub} must be a positive multiple of the {cells} control cells"
        )));
    }
    let top = spec.set.psi_max(x0)?;
    if top > spec.set.feas_tol() {
        return Err(DynamicsError::Precondition(format!("x0 is outside C (psi = {top:e})")));
    }
    let r = spec.r();
    let per_cell = n_sub / cells;
    let h = u.horizon() / n_sub as f64;

    let mut x = DVector::from_column_slice(x0);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        controls: vec![u.cell(0).clone()],
        xi: vec![vec![0.0; r]],
        diag: vec![],
    };
    if u.horizon() == 0.0 {
        return Ok(traj);
    }
    for j in 0..cells {
        let uj = u.cell(j).as_slice();
        let mut xi = vec![0.0; r];
        let mut diag = StepDiag::default();
        for s in 0..per_cell {
            let t = h * (j * per_cell + s) as f64;
            let y = &x + spec.f_phi(t, x.as_slice(), uj)? * h;
            let proj = spec
                .set
                .project(y.as_slice(), PROJ_TOL)
                .map_err(|_| DynamicsError::ProjectionFailure(t))?;
            x = proj.z;
            xi = proj.multipliers.iter().map(|m| m / h).collect();
            diag.substeps += 1;
            diag.max_penalty = diag.max_penalty.max(xi.iter().sum());
        }
        if j == 0 {
            // the first node takes the multipliers of the first cell
            traj.xi[0] = xi.clone();
        }
        traj.times.push(u.time(j + 1));
        traj.states.push(x.clone());
        traj.controls.push(u.cell(j + 1).clone());
        traj.xi.push(xi);
        traj.diag.push(diag);
    }
    Ok(traj)
}
