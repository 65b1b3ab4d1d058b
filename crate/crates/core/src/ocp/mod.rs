//! Direct transcription of the penalized approximating problems.
//!
//! Controls are piecewise constant on `cells` intervals; the state follows
//! the backward Euler transcription with `substeps` steps per interval, and
//! gradients come from its exact discrete adjoint. Terminal constraints are
//! handled by an augmented Lagrangian outer loop and the penalty parameter
//! by continuation along the schedule.

mod certificate;
mod objective;
mod optimize;

pub use certificate::{extract_certificate, normalize};
pub use objective::{gradient_check, localization, objective_j, Incumbent};

use crate::dynamics::{
    accumulate_measures, AdjointMeasure, AdjointPath, ControlBox, ControlSignal, DynamicsError,
    DynamicsSpec, MeasureThresholds, Trajectory,
};
use crate::expr::{ExprError, FieldKind, ScalarField};
use crate::sweepset::{PenaltySchedule, SweepError};
use nalgebra::DVector;
use objective::{AlState, Stage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OcpError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Set(#[from] SweepError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("line search stalled at gamma = {gamma}, iteration {iter}")]
    LineSearchStall { gamma: f64, iter: usize },
    #[error("terminal constraint infeasible: residual {0:e}")]
    TerminalInfeasible(f64),
    #[error("cannot normalize multipliers: |p(T)| + lambda = {0:e}")]
    DegenerateNormalization(f64),
}

#[derive(Debug, Clone)]
pub enum InitialSet {
    Point(DVector<f64>),
    /// `{x : h_j(x) <= 0}` with a starting guess for the optimizer.
    Sublevel { fields: Vec<ScalarField>, guess: DVector<f64> },
}

#[derive(Debug, Clone)]
pub enum TerminalSet {
    All,
    /// `{x : <a, x> = b}`.
    Affine { a: DVector<f64>, b: f64 },
    Sublevel(Vec<ScalarField>),
}

/// Fixed-horizon Mayer problem over the controlled sweeping process.
#[derive(Debug, Clone)]
pub struct SweepingProblem {
    pub spec: DynamicsSpec,
    /// Cost over `(x(0), x(T))`, read as variables `x1..x2n`.
    pub g: ScalarField,
    pub c0: InitialSet,
    pub ct: TerminalSet,
    pub ubox: ControlBox,
    /// Localization radius of the strong local minimizer.
    pub delta: f64,
}

impl SweepingProblem {
    pub fn new(
        spec: DynamicsSpec,
        g: ScalarField,
        c0: InitialSet,
        ct: TerminalSet,
        ubox: ControlBox,
        delta: f64,
    ) -> Result<Self, OcpError> {
        let n = spec.n();
        if g.n() != 2 * n || g.m() != 0 || g.kind() != FieldKind::Cost {
            return Err(OcpError::Invalid(format!("g must be a cost over x1..x{}", 2 * n)));
        }
        if ubox.m() != spec.m() {
            return Err(OcpError::Invalid("control box dimension differs from f".into()));
        }
        if !(delta > 0.0) {
            return Err(OcpError::Invalid("delta must be positive".into()));
        }
        let sub_ok = |fs: &[ScalarField]| fs.iter().all(|h| h.n() == n && h.m() == 0);
        match &c0 {
            InitialSet::Point(x) => {
                if x.len() != n {
                    return Err(OcpError::Invalid("C0 point has the wrong dimension".into()));
                }
                let top = spec.set.psi_max(x.as_slice())?;
                if top > spec.set.feas_tol() {
                    return Err(OcpError::Invalid(format!("C0 point lies outside C (psi = {top:e})")));
                }
            }
            InitialSet::Sublevel { fields, guess } => {
                if !sub_ok(fields) || guess.len() != n {
                    return Err(OcpError::Invalid("C0 fields must be state functions".into()));
                }
            }
        }
        match &ct {
            TerminalSet::Affine { a, .. } if a.len() != n || a.norm() == 0.0 => {
                return Err(OcpError::Invalid("CT normal must be a nonzero n-vector".into()))
            }
            TerminalSet::Sublevel(fs) if !sub_ok(fs) => {
                return Err(OcpError::Invalid("CT fields must be state functions".into()))
            }
            _ => {}
        }
        Ok(SweepingProblem {
            spec,
            g,
            c0,
            ct,
            ubox,
            delta,
        })
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    pub fn r(&self) -> usize {
        self.spec.r()
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn free_endpoint(&self) -> bool {
        matches!(self.ct, TerminalSet::All)
    }

    /// `g` with its gradients in `x(0)` and `x(T)`.
    pub fn g_eval(
        &self,
        x0: &[f64],
        xt: &[f64],
    ) -> Result<(f64, DVector<f64>, DVector<f64>), OcpError> {
        let n = self.n();
        let z: Vec<f64> = x0.iter().chain(xt).copied().collect();
        let e = self.g.eval(0.0, &z, &[], 1)?;
        let grad = e.grad.unwrap();
        Ok((e.value, grad.rows(0, n).into_owned(), grad.rows(n, n).into_owned()))
    }

    /// Largest violation of the terminal constraint at `xt`.
    pub fn terminal_residual(&self, xt: &[f64]) -> Result<f64, OcpError> {
        Ok(match &self.ct {
            TerminalSet::All => 0.0,
            TerminalSet::Affine { a, b } => (a.dot(&DVector::from_column_slice(xt)) - b).abs(),
            TerminalSet::Sublevel(fs) => fs
                .iter()
                .map(|h| h.value(0.0, xt, &[]).map(|v| v.max(0.0)))
                .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    ProjectedGradient,
    /// Limited-memory quasi-Newton restricted to the free variables.
    Lbfgs,
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub schedule: PenaltySchedule,
    /// Control intervals.
    pub cells: usize,
    /// Backward Euler steps per control interval.
    pub substeps: usize,
    /// Weight of `f(u)` against `f(reference)`; 1 disables blending.
    pub beta: f64,
    pub reference: Option<ControlSignal>,
    pub alpha_prox: f64,
    pub k_tilde: f64,
    pub optimizer: Optimizer,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Bound on the projected gradient, measured per unit time.
    pub grad_tol: f64,
    pub terminal_tol: f64,
    /// Residual above which the final iterate is declared infeasible.
    pub infeasible_tol: f64,
    pub rho0: f64,
}

impl SolveConfig {
    pub fn new(schedule: PenaltySchedule, cells: usize) -> Self {
        SolveConfig {
            schedule,
            cells,
            substeps: 10,
            beta: 1.0,
            reference: None,
            alpha_prox: 0.0,
            k_tilde: 100.0,
            optimizer: Optimizer::Lbfgs,
            max_outer: 20,
            max_inner: 200,
            grad_tol: 1e-6,
            terminal_tol: 1e-6,
            infeasible_tol: 1e-3,
            rho0: 10.0,
        }
    }

    fn validate(&self) -> Result<(), OcpError> {
        if self.cells < 16 {
            return Err(OcpError::Invalid(format!("need at least 16 cells, got {}", self.cells)));
        }
        if self.substeps == 0 || self.schedule.is_empty() {
            return Err(OcpError::Invalid("empty schedule or zero substeps".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(OcpError::Invalid("beta must lie in (0, 1]".into()));
        }
        if self.beta < 1.0 && self.reference.is_none() {
            return Err(OcpError::Invalid("beta < 1 needs a reference control".into()));
        }
        if !(self.alpha_prox >= 0.0) || !(self.k_tilde >= 0.0) || !(self.rho0 > 0.0) {
            return Err(OcpError::Invalid("weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub(crate) fn blend(&self) -> Option<(&ControlSignal, f64)> {
        self.reference.as_ref().map(|r| (r, self.beta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaLog {
    pub gamma: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub terminal_residual: f64,
    pub projected_gradient: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Penalized trajectory at the last `gamma`, on the fine grid.
    pub trajectory: Trajectory,
    pub control: ControlSignal,
    /// Start of the limit problem: the `C0` point, or the optimized start.
    pub x0: DVector<f64>,
    pub gamma: f64,
    /// `g + K L + prox` at the final iterate.
    pub objective: f64,
    pub mayer: f64,
    pub terminal_residual: f64,
    /// Effective terminal multipliers `mu + rho c`.
    pub terminal_multipliers: Vec<f64>,
    /// Discrete adjoint at the final iterate, with `g` weighted by one.
    pub adjoint: AdjointPath,
    pub measures: Vec<AdjointMeasure>,
    pub log: Vec<GammaLog>,
}

/// Solve along the schedule, warm-starting each `gamma` from the last.
pub fn solve(
    prob: &SweepingProblem,
    cfg: &SolveConfig,
    u_init: &ControlSignal,
) -> Result<SolveResult, OcpError> {
    cfg.validate()?;
    if u_init.cells() != cfg.cells || u_init.m() != prob.m() {
        return Err(OcpError::Invalid("initial control does not match the grid".into()));
    }
    if (u_init.horizon() - prob.horizon()).abs() > 1e-12 * prob.horizon().max(1.0) {
        return Err(OcpError::Invalid("initial control has the wrong horizon".into()));
    }
    if !u_init.within(&prob.ubox) {
        return Err(OcpError::Invalid("initial control leaves U".into()));
    }
    let sched = &cfg.schedule;
    let mut u = u_init.clone();
    let mut x0_free = match &prob.c0 {
        InitialSet::Point(_) => None,
        InitialSet::Sublevel { guess, .. } => Some(guess.clone()),
    };
    let mut al = AlState::new(prob, cfg.rho0);
    let mut log = Vec::with_capacity(sched.len());
    let mut residual = f64::INFINITY;

    for k in 0..sched.len() {
        let gamma = sched.gamma(k);
        let fixed_start = match &prob.c0 {
            InitialSet::Point(c) => Some(prob.spec.set.shifted_start(sched, k, c.as_slice())?.0),
            InitialSet::Sublevel { .. } => None,
        };
        let mut entry = GammaLog {
            gamma,
            outer_iterations: 0,
            inner_iterations: 0,
            objective: f64::NAN,
            terminal_residual: f64::NAN,
            projected_gradient: f64::NAN,
            converged: false,
        };
        let mut prev = f64::INFINITY;
        for _ in 0..cfg.max_outer {
            let x0 = fixed_start.clone().or_else(|| x0_free.clone()).unwrap();
            let center = crate::dynamics::integrate_implicit(
                &prob.spec,
                gamma,
                x0.as_slice(),
                &u,
                cfg.substeps,
                cfg.blend(),
            )?;
            let inc = Incumbent {
                u: u.clone(),
                x0: x0.clone(),
                xt: center.last_state().clone(),
            };
            let stage = Stage {
                prob,
                cfg,
                gamma,
                alpha: sched.alpha(k),
                center: Some(&center.states),
                prox: Some(&inc),
                al: &al,
                fixed_start: fixed_start.as_ref(),
            };
            let out = optimize::minimize(&stage, stage.pack(&u, x0_free.as_ref()))?;
            let (u_new, x0_new) = stage.unpack(&out.v);
            u = u_new;
            if x0_free.is_some() {
                x0_free = x0_new;
            }
            residual = stage.constraint_residual(&out.eval.traj)?;
            entry.outer_iterations += 1;
            entry.inner_iterations += out.iterations;
            entry.objective = out.eval.parts.objective();
            entry.terminal_residual = residual;
            entry.projected_gradient = out.projected_gradient;
            entry.converged = out.converged;
            // the localization ball must not have been what stopped the step
            let reach = out
                .eval
                .traj
                .states
                .iter()
                .zip(&center.states)
                .map(|(x, c)| (x - c).norm())
                .fold(0.0, f64::max);
            let settled = reach < 0.4 * prob.delta;
            if residual <= cfg.terminal_tol && settled {
                break;
            }
            let grow = residual > 0.25 * prev && residual > cfg.terminal_tol;
            al = stage.update_multipliers(&out.eval.traj, grow)?;
            prev = residual;
        }
        log.push(entry);
    }
    if residual > cfg.infeasible_tol {
        return Err(OcpError::TerminalInfeasible(residual));
    }

    let k_last = sched.len() - 1;
    let gamma = sched.gamma(k_last);
    let fixed_start = match &prob.c0 {
        InitialSet::Point(c) => Some(prob.spec.set.shifted_start(sched, k_last, c.as_slice())?.0),
        InitialSet::Sublevel { .. } => None,
    };
    let stage = Stage {
        prob,
        cfg,
        gamma,
        alpha: sched.alpha(k_last),
        center: None,
        prox: None,
        al: &al,
        fixed_start: fixed_start.as_ref(),
    };
    let eval = stage.evaluate(&stage.pack(&u, x0_free.as_ref()), true)?;
    let adjoint = eval.adjoint.expect("gradient requested");
    let measures = accumulate_measures(&adjoint.nu_density, &adjoint.times, MeasureThresholds::default());
    let x0 = match &prob.c0 {
        InitialSet::Point(c) => c.clone(),
        InitialSet::Sublevel { .. } => x0_free.unwrap(),
    };
    Ok(SolveResult {
        terminal_residual: prob.terminal_residual(eval.traj.last_state().as_slice())?,
        terminal_multipliers: stage.effective_multipliers(&eval.traj)?,
        trajectory: eval.traj,
        control: u,
        x0,
        gamma,
        objective: eval.parts.objective(),
        mayer: eval.parts.mayer,
        adjoint,
        measures,
        log,
    })
}
