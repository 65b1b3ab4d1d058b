use super::{InitialSet, OcpError, SolveConfig, SweepingProblem, TerminalSet};
use crate::dynamics::{adjoint_sweep, integrate_implicit, AdjointPath, ControlSignal, Trajectory};
use nalgebra::DVector;

/// Reference point of the proximal terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub u: ControlSignal,
    pub x0: DVector<f64>,
    pub xt: DVector<f64>,
}

/// `L = max(|x - c|^2 - delta^2/4, 0)` and a gradient (zero at the kink).
pub fn localization(delta: f64, x: &DVector<f64>, center: &DVector<f64>) -> (f64, DVector<f64>) {
    let d = x - center;
    let v = d.norm_squared() - 0.25 * delta * delta;
    if v > 0.0 {
        (v, d * 2.0)
    } else {
        (0.0, DVector::zeros(x.len()))
    }
}

fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let k = times.len();
    let mut w = vec![0.0; k];
    for j in 0..k.saturating_sub(1) {
        let h = times[j + 1] - times[j];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    w
}

/// `K sum w_k L(t_k, x_k)` and its gradient at every node.
fn running_terms(
    delta: f64,
    k_tilde: f64,
    traj: &Trajectory,
    center: Option<&[DVector<f64>]>,
) -> (f64, Vec<DVector<f64>>) {
    let n = traj.states[0].len();
    let mut grads = vec![DVector::zeros(n); traj.len()];
    let Some(center) = center else { return (0.0, grads) };
    let w = trapezoid_weights(&traj.times);
    let mut total = 0.0;
    for k in 0..traj.len() {
        let (v, g) = localization(delta, &traj.states[k], &center[k]);
        total += k_tilde * w[k] * v;
        grads[k] = g * (k_tilde * w[k]);
    }
    (total, grads)
}

fn l1_with_sign(a: &DVector<f64>, b: &DVector<f64>) -> (f64, DVector<f64>) {
    let d = a - b;
    (d.iter().map(|v| v.abs()).sum(), d.map(|v| if v == 0.0 { 0.0 } else { v.signum() }))
}

struct Prox {
    value: f64,
    u: Vec<DVector<f64>>,
    x0: DVector<f64>,
    xt: DVector<f64>,
}

fn prox_terms(
    alpha: f64,
    u: &ControlSignal,
    x0: &DVector<f64>,
    xt: &DVector<f64>,
    inc: Option<&Incumbent>,
    free_start: bool,
) -> Prox {
    let n = x0.len();
    let mut out = Prox {
        value: 0.0,
        u: vec![DVector::zeros(u.m()); u.cells()],
        x0: DVector::zeros(n),
        xt: DVector::zeros(n),
    };
    let Some(inc) = inc.filter(|_| alpha > 0.0) else { return out };
    let dt = u.dt();
    for c in 0..u.cells() {
        let (v, s) = l1_with_sign(u.cell(c), inc.u.cell(c));
        out.value += alpha * dt * v;
        out.u[c] = s * (alpha * dt);
    }
    if free_start {
        let (v, s) = l1_with_sign(x0, &inc.x0);
        out.value += alpha * v;
        out.x0 = s * alpha;
    }
    let (v, s) = l1_with_sign(xt, &inc.xt);
    out.value += alpha * v;
    out.xt = s * alpha;
    out
}

/// Objective of the approximating problem without constraint terms:
/// `g + K int L + alpha (|u - u_inc|_1 + endpoint distances)`. `L` is
/// centered on `center`, which defaults to `traj` itself.
pub fn objective_j(
    prob: &SweepingProblem,
    k_tilde: f64,
    alpha_prox: f64,
    traj: &Trajectory,
    u: &ControlSignal,
    center: Option<&Trajectory>,
    incumbent: Option<&Incumbent>,
) -> Result<f64, OcpError> {
    if let Some(c) = center {
        if c.len() != traj.len() {
            return Err(crate::dynamics::DynamicsError::GridMismatch.into());
        }
    }
    let x0 = &traj.states[0];
    let xt = traj.last_state();
    let (mayer, _, _) = prob.g_eval(x0.as_slice(), xt.as_slice())?;
    let (loc, _) = running_terms(prob.delta, k_tilde, traj, center.map(|c| c.states.as_slice()));
    let free = matches!(prob.c0, InitialSet::Sublevel { .. });
    let prox = prox_terms(alpha_prox, u, x0, xt, incumbent, free);
    Ok(mayer + loc + prox.value)
}

struct Con {
    value: f64,
    grad: DVector<f64>,
    eq: bool,
}

fn terminal_cons(prob: &SweepingProblem, xt: &DVector<f64>) -> Result<Vec<Con>, OcpError> {
    Ok(match &prob.ct {
        TerminalSet::All => vec![],
        TerminalSet::Affine { a, b } => vec![Con {
            value: a.dot(xt) - b,
            grad: a.clone(),
            eq: true,
        }],
        TerminalSet::Sublevel(fs) => fs
            .iter()
            .map(|h| {
                let e = h.eval(0.0, xt.as_slice(), &[], 1)?;
                Ok(Con {
                    value: e.value,
                    grad: e.grad.unwrap(),
                    eq: false,
                })
            })
            .collect::<Result<_, OcpError>>()?,
    })
}

/// `sum_j m_j grad c_j(xt)` over the terminal constraints.
pub(crate) fn terminal_normal(prob: &SweepingProblem, xt: &DVector<f64>, mults: &[f64]) -> Result<DVector<f64>, OcpError> {
    Ok(terminal_cons(prob, xt)?
        .iter()
        .zip(mults)
        .fold(DVector::zeros(xt.len()), |acc, (c, &m)| acc + &c.grad * m))
}

/// Multiplier estimates and the common penalty weight.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AlState {
    pub mu_t: Vec<f64>,
    pub mu_0: Vec<f64>,
    pub rho: f64,
}

impl AlState {
    pub fn new(prob: &SweepingProblem, rho: f64) -> Self {
        let nt = match &prob.ct {
            TerminalSet::All => 0,
            TerminalSet::Affine { .. } => 1,
            TerminalSet::Sublevel(fs) => fs.len(),
        };
        let n0 = match &prob.c0 {
            InitialSet::Point(_) => 0,
            InitialSet::Sublevel { fields, .. } => fields.len() + 1,
        };
        AlState {
            mu_t: vec![0.0; nt],
            mu_0: vec![0.0; n0],
            rho,
        }
    }
}

fn shifted(c: &Con, mu: f64, rho: f64) -> f64 {
    if c.eq {
        mu + rho * c.value
    } else {
        (mu + rho * c.value).max(0.0)
    }
}

fn al_value(cons: &[Con], mu: &[f64], rho: f64, n: usize) -> (f64, DVector<f64>) {
    let mut val = 0.0;
    let mut grad = DVector::zeros(n);
    for (c, &m) in cons.iter().zip(mu) {
        let s = shifted(c, m, rho);
        val += if c.eq {
            m * c.value + 0.5 * rho * c.value * c.value
        } else {
            (s * s - m * m) / (2.0 * rho)
        };
        grad.axpy(s, &c.grad, 1.0);
    }
    (val, grad)
}

fn violation(cons: &[Con]) -> f64 {
    cons.iter()
        .map(|c| if c.eq { c.value.abs() } else { c.value.max(0.0) })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Parts {
    pub mayer: f64,
    pub localization: f64,
    pub prox: f64,
    pub augmented: f64,
}

impl Parts {
    pub fn objective(&self) -> f64 {
        self.mayer + self.localization + self.prox
    }

    pub fn total(&self) -> f64 {
        self.objective() + self.augmented
    }
}

pub(crate) struct Evaluation {
    pub parts: Parts,
    pub grad: Vec<f64>,
    pub traj: Trajectory,
    pub adjoint: Option<AdjointPath>,
}

/// One penalized subproblem: fixed `gamma`, localization center,
/// proximal anchor and multiplier estimates.
pub(crate) struct Stage<'a> {
    pub prob: &'a SweepingProblem,
    pub cfg: &'a SolveConfig,
    pub gamma: f64,
    pub alpha: f64,
    pub center: Option<&'a [DVector<f64>]>,
    pub prox: Option<&'a Incumbent>,
    pub al: &'a AlState,
    /// Shifted start when `C0` is a point; `None` optimizes the start.
    pub fixed_start: Option<&'a DVector<f64>>,
}

impl Stage<'_> {
    fn free_start(&self) -> bool {
        self.fixed_start.is_none()
    }

    fn m(&self) -> usize {
        self.prob.m()
    }

    pub fn pack(&self, u: &ControlSignal, x0: Option<&DVector<f64>>) -> Vec<f64> {
        let mut v: Vec<f64> = u.values().iter().flat_map(|c| c.iter().copied()).collect();
        if self.free_start() {
            v.extend(x0.expect("free start needs a value").iter());
        }
        v
    }

    pub fn unpack(&self, v: &[f64]) -> (ControlSignal, Option<DVector<f64>>) {
        let m = self.m();
        let cells = self.cfg.cells;
        let values = (0..cells)
            .map(|c| DVector::from_column_slice(&v[c * m..(c + 1) * m]))
            .collect();
        let u = ControlSignal::new(self.prob.horizon(), values).expect("grid checked");
        let x0 = self
            .free_start()
            .then(|| DVector::from_column_slice(&v[cells * m..]));
        (u, x0)
    }

    /// Box bounds and the metric weight of each variable.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (m, cells) = (self.m(), self.cfg.cells);
        let dt = self.prob.horizon() / cells as f64;
        let bx = &self.prob.ubox;
        let mut lo: Vec<f64> = (0..cells).flat_map(|_| bx.lo.iter().copied()).collect();
        let mut hi: Vec<f64> = (0..cells).flat_map(|_| bx.hi.iter().copied()).collect();
        let mut w = vec![dt.max(f64::MIN_POSITIVE); cells * m];
        if self.free_start() {
            let n = self.prob.n();
            lo.extend(std::iter::repeat(f64::NEG_INFINITY).take(n));
            hi.extend(std::iter::repeat(f64::INFINITY).take(n));
            w.extend(std::iter::repeat(1.0).take(n));
        }
        (lo, hi, w)
    }

    fn initial_cons(&self, x0: &DVector<f64>) -> Result<Vec<Con>, OcpError> {
        let InitialSet::Sublevel { fields, .. } = &self.prob.c0 else { return Ok(vec![]) };
        let mut cons = fields
            .iter()
            .map(|h| {
                let e = h.eval(0.0, x0.as_slice(), &[], 1)?;
                Ok(Con {
                    value: e.value,
                    grad: e.grad.unwrap(),
                    eq: false,
                })
            })
            .collect::<Result<Vec<_>, OcpError>>()?;
        // the penalized start must lie in the shrunken smoothed set
        let pg = self.prob.spec.set.psi_gamma(self.gamma, x0.as_slice())?;
        cons.push(Con {
            value: pg.value + self.alpha,
            grad: pg.grad,
            eq: false,
        });
        Ok(cons)
    }

    pub fn constraint_residual(&self, traj: &Trajectory) -> Result<f64, OcpError> {
        let t = violation(&terminal_cons(self.prob, traj.last_state())?);
        let s = violation(&self.initial_cons(&traj.states[0])?);
        Ok(t.max(s))
    }

    pub fn update_multipliers(&self, traj: &Trajectory, grow: bool) -> Result<AlState, OcpError> {
        let rho = self.al.rho;
        let tc = terminal_cons(self.prob, traj.last_state())?;
        let ic = self.initial_cons(&traj.states[0])?;
        Ok(AlState {
            mu_t: tc.iter().zip(&self.al.mu_t).map(|(c, &m)| shifted(c, m, rho)).collect(),
            mu_0: ic.iter().zip(&self.al.mu_0).map(|(c, &m)| shifted(c, m, rho)).collect(),
            rho: if grow { rho * 2.0 } else { rho },
        })
    }

    pub fn effective_multipliers(&self, traj: &Trajectory) -> Result<Vec<f64>, OcpError> {
        let tc = terminal_cons(self.prob, traj.last_state())?;
        Ok(tc
            .iter()
            .zip(&self.al.mu_t)
            .map(|(c, &m)| shifted(c, m, self.al.rho))
            .collect())
    }

    pub fn evaluate(&self, v: &[f64], want_grad: bool) -> Result<Evaluation, OcpError> {
        let (u, x0_var) = self.unpack(v);
        let x0 = self.fixed_start.cloned().or(x0_var).unwrap();
        let spec = &self.prob.spec;
        let n = spec.n();
        let traj = integrate_implicit(spec, self.gamma, x0.as_slice(), &u, self.cfg.substeps, self.cfg.blend())?;
        let xt = traj.last_state().clone();
        let (mayer, g0, gt) = self.prob.g_eval(x0.as_slice(), xt.as_slice())?;
        let (loc, running) = running_terms(self.prob.delta, self.cfg.k_tilde, &traj, self.center);
        let prox = prox_terms(self.cfg.alpha_prox, &u, &x0, &xt, self.prox, self.free_start());
        let (al_t, gal_t) = al_value(&terminal_cons(self.prob, &xt)?, &self.al.mu_t, self.al.rho, n);
        let (al_0, gal_0) = al_value(&self.initial_cons(&x0)?, &self.al.mu_0, self.al.rho, n);
        let parts = Parts {
            mayer,
            localization: loc,
            prox: prox.value,
            augmented: al_t + al_0,
        };
        if !want_grad {
            return Ok(Evaluation {
                parts,
                grad: vec![],
                traj,
                adjoint: None,
            });
        }
        let last = traj.len() - 1;
        let p_t = -(gt + gal_t + &prox.xt + &running[last]);
        let path = adjoint_sweep(spec, self.gamma, &traj, &u, self.cfg.blend(), &running, &p_t)?;
        let mut grad: Vec<f64> = path
            .grad_u
            .iter()
            .zip(&prox.u)
            .flat_map(|(a, b)| (a + b).iter().copied().collect::<Vec<_>>())
            .collect();
        if self.free_start() {
            let g = g0 + gal_0 + &prox.x0 - &path.p[0];
            grad.extend(g.iter());
        }
        Ok(Evaluation {
            parts,
            grad,
            traj,
            adjoint: Some(path),
        })
    }
}

/// Directional derivative of the full subproblem objective at `u` along
/// `direction`, from the adjoint and from central differences with
/// `eps = 1e-5 (1 + max|u|)`.
///
/// The check runs at the last `gamma` of the schedule, with the
/// localization centered on the trajectory of the mirrored control
/// `lo + hi - u` so that its gradient is exercised, and with unit
/// multiplier estimates on every constraint.
pub fn gradient_check(
    prob: &SweepingProblem,
    cfg: &SolveConfig,
    u: &ControlSignal,
    direction: &ControlSignal,
) -> Result<(f64, f64), OcpError> {
    let eps = 1e-5 * (1.0 + u.values().iter().map(|c| c.amax()).fold(0.0, f64::max));
    gradient_check_eps(prob, cfg, u, direction, eps)
}

pub(crate) fn gradient_check_eps(
    prob: &SweepingProblem,
    cfg: &SolveConfig,
    u: &ControlSignal,
    direction: &ControlSignal,
    eps: f64,
) -> Result<(f64, f64), OcpError> {
    cfg.validate()?;
    if u.cells() != cfg.cells || direction.cells() != cfg.cells {
        return Err(OcpError::Invalid("controls do not match the grid".into()));
    }
    let k = cfg.schedule.len() - 1;
    let gamma = cfg.schedule.gamma(k);
    let fixed = match &prob.c0 {
        InitialSet::Point(c) => Some(prob.spec.set.shifted_start(&cfg.schedule, k, c.as_slice())?.0),
        InitialSet::Sublevel { .. } => None,
    };
    let x0_free = match &prob.c0 {
        InitialSet::Sublevel { guess, .. } => Some(guess.clone()),
        InitialSet::Point(_) => None,
    };
    let bx = &prob.ubox;
    let mirrored = ControlSignal::new(
        u.horizon(),
        u.values()
            .iter()
            .map(|c| DVector::from_iterator(c.len(), (0..c.len()).map(|j| bx.lo[j] + bx.hi[j] - c[j])))
            .collect(),
    )?;
    let x0 = fixed.clone().or_else(|| x0_free.clone()).unwrap();
    let center = integrate_implicit(&prob.spec, gamma, x0.as_slice(), &mirrored, cfg.substeps, cfg.blend())?;
    let inc = Incumbent {
        u: mirrored,
        x0: x0.clone(),
        xt: center.last_state().clone(),
    };
    let mut al = AlState::new(prob, cfg.rho0);
    al.mu_t.iter_mut().for_each(|m| *m = 1.0);
    al.mu_0.iter_mut().for_each(|m| *m = 1.0);
    let stage = Stage {
        prob,
        cfg,
        gamma,
        alpha: cfg.schedule.alpha(k),
        center: Some(&center.states),
        prox: Some(&inc),
        al: &al,
        fixed_start: fixed.as_ref(),
    };
    let v = stage.pack(u, x0_free.as_ref());
    let d = {
        let mut d = stage.pack(direction, x0_free.as_ref());
        d.truncate(cfg.cells * prob.m());
        d.resize(v.len(), 0.0);
        d
    };
    let e = stage.evaluate(&v, true)?;
    let adj: f64 = e.grad.iter().zip(&d).map(|(g, d)| g * d).sum();
    let at = |s: f64| -> Result<f64, OcpError> {
        let w: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + s * b).collect();
        Ok(stage.evaluate(&w, false)?.parts.total())
    };
    let fd = (at(eps)? - at(-eps)?) / (2.0 * eps);
    Ok((adj, fd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn localization_values() {
        let c = DVector::from_vec(vec![0.0, 0.0]);
        let delta = 0.8;
        let at = |r: f64| localization(delta, &DVector::from_vec(vec![r, 0.0]), &c).0;
        assert_eq!(at(delta / 2.0), 0.0);
        assert!((at(delta) - 0.75 * delta * delta).abs() < 1e-15);
        assert_eq!(at(0.1), 0.0);
    }

    #[test]
    fn objective_vanishes_at_the_known_solution() {
        let prob = reference::example_problem();
        let cells = 1000;
        let times: Vec<f64> = (0..=cells).map(|k| 0.5 * k as f64 / cells as f64).collect();
        let traj = Trajectory {
            states: times.iter().map(|&t| reference::state(t)).collect(),
            controls: vec![DVector::from_element(1, 1.0); cells + 1],
            xi: vec![vec![1.0, 1.0]; cells + 1],
            diag: vec![],
            times,
        };
        let u = ControlSignal::constant(0.5, cells, &[1.0]);
        let j = objective_j(&prob, 100.0, 0.0, &traj, &u, None, None).unwrap();
        assert!(j.abs() < 1e-14, "{j}");
    }

    #[test]
    fn zero_direction_gives_zero_derivatives() {
        let prob = reference::example_problem();
        let cfg = reference::example_config(vec![100.0], 16, 2);
        let u = ControlSignal::constant(0.5, 16, &[0.5]);
        let z = ControlSignal::constant(0.5, 16, &[0.0]);
        let (a, f) = gradient_check(&prob, &cfg, &u, &z).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(f, 0.0);
    }
}
