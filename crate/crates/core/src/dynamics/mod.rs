//! Penalized sweeping dynamics, the catching-up oracle, the implicit
//! transcription used by the solver, and its discrete adjoint.

mod adjoint;
mod catching_up;
mod measure;
mod rosenbrock;
mod transcription;

pub use adjoint::{integrate_adjoint, adjoint_sweep, AdjointPath};
pub use catching_up::integrate_catching_up;
pub use measure::{accumulate_measures, atom_runs, AdjointMeasure, Atom, MeasureThresholds};
pub use rosenbrock::{integrate_penalized, PenalizedOpts};
pub use transcription::integrate_implicit;

use crate::expr::{ExprError, FieldKind, ScalarField, Wrt};
use crate::sweepset::{SweepError, SweepingSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Set(#[from] SweepError),
    #[error("invalid dynamics: {0}")]
    Invalid(String),
    #[error("step size underflow at t = {0}")]
    StepFailure(f64),
    #[error("invariance violated at t = {t}: psi_gamma = {value:e}")]
    InvarianceViolation { t: f64, value: f64 },
    #[error("projection failed at t = {0}")]
    ProjectionFailure(f64),
    #[error("trajectories live on different grids")]
    GridMismatch,
    #[error("precondition failed: {0}")]
    Precondition(String),
}

/// Componentwise control box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ControlBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DynamicsError> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(DynamicsError::Invalid("control box needs lo <= hi".into()));
        }
        Ok(ControlBox { lo, hi })
    }

    pub fn m(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for (v, (a, b)) in u.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*a, *b);
        }
    }
}

/// Piecewise-constant control on a uniform grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    horizon: f64,
    values: Vec<DVector<f64>>,
}

impl ControlSignal {
    pub fn new(horizon: f64, values: Vec<DVector<f64>>) -> Result<Self, DynamicsError> {
        if values.is_empty() {
            return Err(DynamicsError::Invalid("control needs at least one cell".into()));
        }
        let m = values[0].len();
        if values.iter().any(|v| v.len() != m) {
            return Err(DynamicsError::Invalid("control cells differ in dimension".into()));
        }
        if !(horizon >= 0.0) {
            return Err(DynamicsError::Invalid("horizon must be nonnegative".into()));
        }
        Ok(ControlSignal { horizon, values })
    }

    pub fn constant(horizon: f64, cells: usize, u: &[f64]) -> Self {
        ControlSignal {
            horizon,
            values: vec![DVector::from_column_slice(u); cells.max(1)],
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    pub fn m(&self) -> usize {
        self.values[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.cells() as f64
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.values
    }

    pub fn cell(&self, j: usize) -> &DVector<f64> {
        &self.values[j.min(self.cells() - 1)]
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.cells() {
            self.horizon
        } else {
            self.horizon * j as f64 / self.cells() as f64
        }
    }

    pub fn at(&self, t: f64) -> &DVector<f64> {
        if self.horizon == 0.0 {
            return &self.values[0];
        }
        let j = (t / self.dt()).floor().max(0.0) as usize;
        self.cell(j)
    }

    pub fn within(&self, bx: &ControlBox) -> bool {
        self.values.iter().all(|v| bx.contains(v.as_slice()))
    }

    /// Same signal on a grid with `cells * factor` cells.
    pub fn refine(&self, factor: usize) -> ControlSignal {
        let values = self
            .values
            .iter()
            .flat_map(|v| std::iter::repeat(v.clone()).take(factor))
            .collect();
        ControlSignal {
            horizon: self.horizon,
            values,
        }
    }

    /// Cell-average onto a coarser grid; `cells` must divide the current count.
    pub fn coarsen(&self, cells: usize) -> ControlSignal {
        let f = self.cells() / cells;
        let values = (0..cells)
            .map(|c| {
                let mut s = DVector::zeros(self.m());
                for k in 0..f {
                    s += &self.values[c * f + k];
                }
                s / f as f64
            })
            .collect();
        ControlSignal {
            horizon: self.horizon,
            values,
        }
    }
}

/// Per-cell integrator diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiag {
    pub substeps: usize,
    pub max_penalty: f64,
}

/// States, controls and multipliers sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Control in force on the cell starting at each node; the last node
    /// repeats the final cell.
    pub controls: Vec<DVector<f64>>,
    /// `xi[j][i]` is the multiplier of constraint `i` at node `j`.
    pub xi: Vec<Vec<f64>>,
    pub diag: Vec<StepDiag>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has a node")
    }

    /// CSV with header `t,x1..xn,u1..um,xi1..xir` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.controls.first().map_or(0, |u| u.len());
        let r = self.xi.first().map_or(0, |x| x.len());
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",u{i}");
        }
        for i in 1..=r {
            let _ = write!(out, ",xi{i}");
        }
        out.push('\n');
        for j in 0..self.len() {
            let _ = write!(out, "{}", fmt17(self.times[j]));
            for v in self.states[j].iter().chain(self.controls[j].iter()).chain(self.xi[j].iter()) {
                let _ = write!(out, ",{}", fmt17(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV written by [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str, n: usize, m: usize, r: usize) -> Result<Trajectory, DynamicsError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| DynamicsError::Invalid("empty CSV".into()))?;
        let cols = header.split(',').count();
        if cols != 1 + n + m + r {
            return Err(DynamicsError::Invalid(format!(
                "expected {} columns, found {cols}",
                1 + n + m + r
            )));
        }
        let mut traj = Trajectory {
            times: vec![],
            states: vec![],
            controls: vec![],
            xi: vec![],
            diag: vec![],
        };
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DynamicsError::Invalid(format!("row {}: {e}", row + 2)))?;
            if vals.len() != cols {
                return Err(DynamicsError::Invalid(format!("row {} has {} fields", row + 2, vals.len())));
            }
            traj.times.push(vals[0]);
            traj.states.push(DVector::from_column_slice(&vals[1..1 + n]));
            traj.controls.push(DVector::from_column_slice(&vals[1 + n..1 + n + m]));
            traj.xi.push(vals[1 + n + m..].to_vec());
        }
        traj.diag = vec![StepDiag::default(); traj.len().saturating_sub(1)];
        Ok(traj)
    }
}

/// Shortest decimal form that round-trips; at most 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:?}")
}

/// Sup and L2 distance between two state paths on the same grid.
pub fn compare_to_oracle(pen: &Trajectory, oracle: &Trajectory) -> Result<(f64, f64), DynamicsError> {
    if pen.len() != oracle.len()
        || pen
            .times
            .iter()
            .zip(&oracle.times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
    {
        return Err(DynamicsError::GridMismatch);
    }
    let d: Vec<f64> = pen
        .states
        .iter()
        .zip(&oracle.states)
        .map(|(a, b)| (a - b).norm())
        .collect();
    let sup = d.iter().copied().fold(0.0, f64::max);
    let mut l2 = 0.0;
    for j in 1..d.len() {
        l2 += 0.5 * (pen.times[j] - pen.times[j - 1]) * (d[j] * d[j] + d[j - 1] * d[j - 1]);
    }
    Ok((sup, l2.sqrt()))
}

/// Right-hand side pieces at one point.
pub(crate) struct RhsEval {
    pub value: DVector<f64>,
    pub jac_x: DMatrix<f64>,
    pub jac_u: DMatrix<f64>,
    pub xi: Vec<f64>,
}

/// Data of the controlled sweeping process.
#[derive(Debug, Clone)]
pub struct DynamicsSpec {
    pub f: Vec<ScalarField>,
    pub phi: ScalarField,
    pub set: SweepingSet,
    pub horizon: f64,
    pub mbar: f64,
}

impl DynamicsSpec {
    pub fn new(
        f: Vec<ScalarField>,
        phi: ScalarField,
        set: SweepingSet,
        horizon: f64,
        mbar: f64,
    ) -> Result<Self, DynamicsError> {
        let n = set.n();
        if f.len() != n || f.iter().any(|c| c.n() != n) {
            return Err(DynamicsError::Invalid(format!("f needs {n} components over x1..x{n}")));
        }
        let m = f[0].m();
        if f.iter().any(|c| c.m() != m || c.kind() != FieldKind::Dynamics) {
            return Err(DynamicsError::Invalid("f components must share control dimension".into()));
        }
        if phi.n() != n || phi.kind() != FieldKind::Potential {
            return Err(DynamicsError::Invalid("phi must be a potential over the state".into()));
        }
        if !(horizon >= 0.0) || !(mbar > 0.0) {
            return Err(DynamicsError::Invalid("need T >= 0 and Mbar > 0".into()));
        }
        Ok(DynamicsSpec {
            f,
            phi,
            set,
            horizon,
            mbar,
        })
    }

    pub fn n(&self) -> usize {
        self.set.n()
    }

    pub fn m(&self) -> usize {
        self.f[0].m()
    }

    pub fn r(&self) -> usize {
        self.set.r()
    }

    fn phi_u(&self) -> Vec<f64> {
        vec![0.0; self.phi.m()]
    }

    pub fn f_value(&self, t: f64, x: &[f64], u: &[f64]) -> Result<DVector<f64>, DynamicsError> {
        let mut out = DVector::zeros(self.n());
        for (i, c) in self.f.iter().enumerate() {
            out[i] = c.value(t, x, u)?;
        }
        Ok(out)
    }

    /// `f - grad Phi`.
    pub fn f_phi(&self, t: f64, x: &[f64], u: &[f64]) -> Result<DVector<f64>, DynamicsError> {
        let grad = self.phi.eval(t, x, &self.phi_u(), 1)?.grad.unwrap();
        Ok(self.f_value(t, x, u)? - grad)
    }

    /// Jacobians of `f` in `x` and `u`.
    pub fn f_jacobians(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), DynamicsError> {
        let (n, m) = (self.n(), self.m());
        let mut val = DVector::zeros(n);
        let mut jx = DMatrix::zeros(n, n);
        let mut ju = DMatrix::zeros(n, m);
        for (i, c) in self.f.iter().enumerate() {
            let e = c.eval_wrt(t, x, u, Wrt::StateControl, 1)?;
            val[i] = e.value;
            let g = e.grad.unwrap();
            for k in 0..n {
                jx[(i, k)] = g[k];
            }
            for k in 0..m {
                ju[(i, k)] = g[n + k];
            }
        }
        Ok((val, jx, ju))
    }

    pub fn phi_hessian(&self, t: f64, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>), DynamicsError> {
        let e = self.phi.eval(t, x, &self.phi_u(), 2)?;
        Ok((e.grad.unwrap(), e.hess.unwrap()))
    }

    /// Multipliers `xi_i = gamma e^{gamma psi_i(x)}`, the force
    /// `sum xi_i grad psi_i`, and its Jacobian. Overflowing exponentials
    /// come back as infinities for the caller to reject.
    pub fn penalty(
        &self,
        gamma: f64,
        x: &[f64],
        with_jac: bool,
    ) -> Result<(Vec<f64>, DVector<f64>, DMatrix<f64>), DynamicsError> {
        let n = self.n();
        let mut xi = Vec::with_capacity(self.r());
        let mut force = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..self.r() {
            let (v, g, h) = if with_jac {
                self.set.psi_hess(i, x)?
            } else {
                let (v, g) = self.set.psi_grad(i, x)?;
                (v, g, DMatrix::zeros(0, 0))
            };
            let e = gamma * (gamma * v).exp();
            xi.push(e);
            if e == 0.0 {
                continue;
            }
            force.axpy(e, &g, 1.0);
            if with_jac {
                jac += &h * e;
                jac += (&g * g.transpose()) * (gamma * e);
            }
        }
        Ok((xi, force, jac))
    }

    /// Right side `F = (1-beta) f(u_ref) + beta f(u) - grad Phi - penalty`
    /// with its Jacobians.
    pub(crate) fn rhs(
        &self,
        gamma: f64,
        t: f64,
        x: &[f64],
        u: &[f64],
        blend: Option<(&[f64], f64)>,
    ) -> Result<RhsEval, DynamicsError> {
        let (mut fv, mut jx, mut ju) = self.f_jacobians(t, x, u)?;
        if let Some((u_ref, beta)) = blend {
            if beta < 1.0 {
                let (fr, jr, _) = self.f_jacobians(t, x, u_ref)?;
                fv = fv * beta + fr * (1.0 - beta);
                jx = jx * beta + jr * (1.0 - beta);
                ju *= beta;
            }
        }
        let (gphi, hphi) = self.phi_hessian(t, x)?;
        let (xi, force, pjac) = self.penalty(gamma, x, true)?;
        Ok(RhsEval {
            value: fv - gphi - force,
            jac_x: jx - hphi - pjac,
            jac_u: ju,
            xi,
        })
    }

    /// `1.1 * max |f - grad Phi|` over random points of `C` in the box
    /// times random controls.
    pub fn estimate_mbar(
        &self,
        lo: &[f64],
        hi: &[f64],
        ubox: &ControlBox,
        count: usize,
        seed: u64,
    ) -> Result<f64, DynamicsError> {
        let pts = self.set.sample_interior(lo, hi, count, seed)?;
        let bnd = self.set.sample_boundary(lo, hi, count / 4 + 1, seed.wrapping_add(2))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let mut best: f64 = 0.0;
        for x in pts.iter().chain(&bnd) {
            // box corners carry the extremes of control-affine fields
            for corner in 0..(1usize << ubox.m().min(8)) {
                let u: Vec<f64> = (0..ubox.m())
                    .map(|k| if corner >> k & 1 == 1 { ubox.hi[k] } else { ubox.lo[k] })
                    .collect();
                best = best.max(self.f_phi(0.0, x.as_slice(), &u)?.norm());
            }
            let u: Vec<f64> = (0..ubox.m())
                .map(|k| {
                    if ubox.hi[k] > ubox.lo[k] {
                        rng.gen_range(ubox.lo[k]..ubox.hi[k])
                    } else {
                        ubox.lo[k]
                    }
                })
                .collect();
            let t = rng.gen_range(0.0..=self.horizon.max(0.0));
            best = best.max(self.f_phi(t, x.as_slice(), &u)?.norm());
        }
        Ok(1.1 * best)
    }

    pub fn with_mbar(&self, mbar: f64) -> DynamicsSpec {
        DynamicsSpec {
            mbar,
            ..self.clone()
        }
    }
}
