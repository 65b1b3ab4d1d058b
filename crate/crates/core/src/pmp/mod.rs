//! Grid-resolution checks of a candidate against the maximum principle.
//!
//! A passing report means "consistent with the necessary conditions at
//! this resolution", nothing stronger. Conditions that are invariant under
//! positive scaling of `(p, nu, lambda)` are normalized accordingly.

use crate::dynamics::{AdjointMeasure, DynamicsError, DynamicsSpec};
use crate::expr::ExprError;
use crate::ocp::{InitialSet, SweepingProblem, TerminalSet};
use crate::sweepset::{qp, SweepError};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PmpError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Set(#[from] SweepError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("certificate and problem disagree: {0}")]
    GridMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub t: f64,
    pub dp: DVector<f64>,
}

/// Candidate multipliers for an admissible pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PmpCertificate {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// `u[k]` holds on `[t_k, t_{k+1})`; the last entry repeats.
    pub u: Vec<DVector<f64>>,
    /// Right-continuous node values.
    pub p: Vec<DVector<f64>>,
    /// Jumps `p(t) - p(t-)`, located on grid nodes.
    pub p_jumps: Vec<Jump>,
    pub nu: Vec<AdjointMeasure>,
    /// `xi[i][k]` at node `k`.
    pub xi: Vec<Vec<f64>>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub primal: f64,
    pub adjoint: f64,
    pub slack_a: f64,
    pub slack_b: f64,
    pub transversality: f64,
    pub nontriviality: f64,
    pub maximization: f64,
    pub active_tol: f64,
    /// Seed of the random test functions.
    pub seed: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            primal: 5e-3,
            adjoint: 1e-2,
            slack_a: 1e-6,
            slack_b: 1e-3,
            transversality: 1e-6,
            nontriviality: 1e-6,
            maximization: 1e-6,
            active_tol: 1e-6,
            seed: 0,
        }
    }
}

impl Tolerances {
    /// Every residual tolerance multiplied by `f`.
    pub fn scaled(self, f: f64) -> Self {
        Tolerances {
            primal: self.primal * f,
            adjoint: self.adjoint * f,
            slack_a: self.slack_a * f,
            slack_b: self.slack_b * f,
            transversality: self.transversality * f,
            nontriviality: self.nontriviality * f,
            maximization: self.maximization * f,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
}

impl Residual {
    pub fn pass(&self) -> bool {
        self.value <= self.tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub residuals: Vec<Residual>,
}

impl ResidualReport {
    pub fn pass(&self) -> bool {
        self.residuals.iter().all(Residual::pass)
    }

    pub fn get(&self, name: &str) -> Option<&Residual> {
        self.residuals.iter().find(|r| r.name == name)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.residuals.iter().filter(|r| !r.pass()).map(|r| r.name).collect()
    }
}

pub const CONDITIONS: [&str; 7] = [
    "primal_dynamics",
    "nontriviality",
    "adjoint",
    "slack_a",
    "slack_b",
    "transversality",
    "maximization",
];

/// Certificate bundled with derived per-node quantities.
struct View<'a> {
    cert: &'a PmpCertificate,
    prob: &'a SweepingProblem,
    /// Jump recorded at each node.
    jump: Vec<DVector<f64>>,
    /// `|p|_inf + lambda`, or one when that vanishes.
    scale: f64,
}

impl<'a> View<'a> {
    fn new(cert: &'a PmpCertificate, prob: &'a SweepingProblem) -> Result<Self, PmpError> {
        let (n, m, r) = (prob.n(), prob.m(), prob.r());
        let nodes = cert.times.len();
        let bad = |s: &str| Err(PmpError::GridMismatch(s.into()));
        if nodes < 2 {
            return bad("need at least two grid nodes");
        }
        if cert.x.len() != nodes || cert.u.len() != nodes || cert.p.len() != nodes {
            return bad("x, u and p must have one entry per node");
        }
        if cert.x.iter().chain(&cert.p).any(|v| v.len() != n) || cert.u.iter().any(|v| v.len() != m) {
            return bad("vector dimensions differ from the problem");
        }
        if cert.xi.len() != r || cert.xi.iter().any(|x| x.len() != nodes) {
            return bad("xi needs one path per constraint");
        }
        if cert.nu.len() != r || cert.nu.iter().any(|nu| nu.density.len() != nodes - 1 || nu.times != cert.times) {
            return bad("nu needs one measure per constraint on the certificate grid");
        }
        if cert.times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("grid must be strictly increasing");
        }
        let t_end = *cert.times.last().unwrap();
        if (cert.times[0]).abs() > 1e-12 || (t_end - prob.horizon()).abs() > 1e-9 * (1.0 + t_end) {
            return bad("grid must span [0, T]");
        }
        if !(cert.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        let mut jump = vec![DVector::zeros(n); nodes];
        for j in &cert.p_jumps {
            let k = nearest(&cert.times, j.t);
            if (cert.times[k] - j.t).abs() > 1e-9 * (1.0 + t_end) || j.dp.len() != n {
                return bad("p jumps must sit on grid nodes");
            }
            jump[k] += &j.dp;
        }
        let mut top: f64 = 0.0;
        for k in 0..nodes {
            top = top.max(cert.p[k].norm()).max((&cert.p[k] - &jump[k]).norm());
        }
        let s = top + cert.lambda;
        Ok(View {
            cert,
            prob,
            jump,
            scale: if s > 0.0 { s } else { 1.0 },
        })
    }

    fn nodes(&self) -> usize {
        self.cert.times.len()
    }

    fn p_left(&self, k: usize) -> DVector<f64> {
        &self.cert.p[k] - &self.jump[k]
    }

    /// State at an arbitrary time by linear interpolation.
    fn x_at(&self, t: f64) -> DVector<f64> {
        let ts = &self.cert.times;
        let k = ts.partition_point(|&s| s <= t).clamp(1, ts.len() - 1);
        let (a, b) = (ts[k - 1], ts[k]);
        let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
        &self.cert.x[k - 1] * (1.0 - w) + &self.cert.x[k] * w
    }

    fn grad_psi(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>, PmpError> {
        Ok(self.prob.spec.set.psi_grad(i, x.as_slice())?.1)
    }

    fn adjoint_rhs(&self, k: usize, u: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>, PmpError> {
        let xi: Vec<f64> = (0..self.prob.r()).map(|i| self.cert.xi[i][k]).collect();
        adjoint_field(&self.prob.spec, self.cert.times[k], &self.cert.x[k], u, &xi, p)
    }
}

/// `(theta - zeta^T) p + sum xi_i vartheta_i p`: the drift of the adjoint
/// without its measure part.
pub(crate) fn adjoint_field(
    spec: &DynamicsSpec,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    xi: &[f64],
    p: &DVector<f64>,
) -> Result<DVector<f64>, PmpError> {
    let (_, zeta, _) = spec.f_jacobians(t, x.as_slice(), u.as_slice())?;
    let (_, theta) = spec.phi_hessian(t, x.as_slice())?;
    let mut out = &theta * p - zeta.transpose() * p;
    for (i, &w) in xi.iter().enumerate() {
        if w != 0.0 {
            let (_, _, h) = spec.set.psi_hess(i, x.as_slice())?;
            out += h * p * w;
        }
    }
    Ok(out)
}

fn nearest(times: &[f64], t: f64) -> usize {
    let k = times.partition_point(|&s| s < t);
    if k == 0 {
        0
    } else if k == times.len() || (t - times[k - 1]) <= (times[k] - t) {
        k - 1
    } else {
        k
    }
}

/// Central-difference mismatch of the primal equation plus the largest
/// constraint violation.
pub fn check_primal(cert: &PmpCertificate, prob: &SweepingProblem) -> Result<f64, PmpError> {
    let v = View::new(cert, prob)?;
    primal(&v)
}

fn primal(v: &View) -> Result<f64, PmpError> {
    let (cert, spec) = (v.cert, &v.prob.spec);
    let mut worst: f64 = 0.0;
    for k in 1..v.nodes() - 1 {
        let x = cert.x[k].as_slice();
        let t = cert.times[k];
        let cd = (&cert.x[k + 1] - &cert.x[k - 1]) / (cert.times[k + 1] - cert.times[k - 1]);
        let mut rhs = (spec.f_phi(t, x, cert.u[k - 1].as_slice())? + spec.f_phi(t, x, cert.u[k].as_slice())?) * 0.5;
        for i in 0..v.prob.r() {
            if cert.xi[i][k] != 0.0 {
                rhs -= v.grad_psi(i, &cert.x[k])? * cert.xi[i][k];
            }
        }
        worst = worst.max((cd - rhs).norm());
    }
    let mut viol: f64 = 0.0;
    for x in &cert.x {
        viol = viol.max(spec.set.psi_max(x.as_slice())?);
    }
    Ok(worst + viol.max(0.0))
}

/// Test functions: `(t/T)^q e_j` for `q <= 3` and 16 random bump pairs.
fn dictionary(n: usize, horizon: f64, seed: u64) -> Vec<Box<dyn Fn(f64) -> DVector<f64>>> {
    let mut out: Vec<Box<dyn Fn(f64) -> DVector<f64>>> = vec![];
    let h = if horizon > 0.0 { horizon } else { 1.0 };
    for q in 0..4 {
        for j in 0..n {
            out.push(Box::new(move |t: f64| {
                let mut z = DVector::zeros(n);
                z[j] = (t / h).powi(q);
                z
            }));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e57);
    for _ in 0..16 {
        let bump = |rng: &mut ChaCha8Rng| {
            let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let c = c.normalize();
            let t0 = rng.gen_range(0.0..=h);
            let w = h * rng.gen_range(0.05..0.3);
            (c, t0, w)
        };
        let (c1, a1, w1) = bump(&mut rng);
        let (c2, a2, w2) = bump(&mut rng);
        out.push(Box::new(move |t: f64| {
            let b1 = (-((t - a1) / w1).powi(2)).exp();
            let b2 = (-((t - a2) / w2).powi(2)).exp();
            (&c1 * b1 + &c2 * b2) * 0.5
        }));
    }
    out
}

/// Largest mismatch of the weak adjoint identity over the test functions,
/// relative to `TV(p) + sum TV(nu_i)`.
pub fn check_adjoint(cert: &PmpCertificate, prob: &SweepingProblem, seed: u64) -> Result<f64, PmpError> {
    let v = View::new(cert, prob)?;
    adjoint(&v, seed)
}

fn adjoint(v: &View, seed: u64) -> Result<f64, PmpError> {
    let cert = v.cert;
    let (n, r) = (v.prob.n(), v.prob.r());
    let cells = v.nodes() - 1;
    let ts = &cert.times;

    let mut inc = Vec::with_capacity(cells);
    let mut g_left = Vec::with_capacity(cells);
    let mut g_right = Vec::with_capacity(cells);
    let mut nu_cell = Vec::with_capacity(cells);
    let mut tv = v.jump[0].norm();
    for k in 0..cells {
        let pr = v.p_left(k + 1);
        inc.push(&pr - &cert.p[k]);
        tv += (&cert.p[k + 1] - &cert.p[k]).norm();
        g_left.push(v.adjoint_rhs(k, &cert.u[k], &cert.p[k])?);
        g_right.push(v.adjoint_rhs(k + 1, &cert.u[k], &pr)?);
        let xm = (&cert.x[k] + &cert.x[k + 1]) * 0.5;
        let mut s = DVector::zeros(n);
        for i in 0..r {
            let mass = cert.nu[i].cell_mass(k);
            if mass != 0.0 {
                s += v.grad_psi(i, &xm)? * mass;
            }
        }
        nu_cell.push(s);
    }
    let mut atoms = vec![];
    for i in 0..r {
        tv += cert.nu[i].total_variation();
        for a in &cert.nu[i].atoms {
            atoms.push((a.t, v.grad_psi(i, &v.x_at(a.t))? * a.weight));
        }
    }
    let jumps: Vec<(f64, &DVector<f64>)> = (0..v.nodes())
        .filter(|&k| v.jump[k].iter().any(|&x| x != 0.0))
        .map(|k| (ts[k], &v.jump[k]))
        .collect();
    let scale = if tv > 0.0 { tv } else { 1.0 };

    let mut worst: f64 = 0.0;
    for z in dictionary(n, v.prob.horizon(), seed) {
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for k in 0..cells {
            let h = ts[k + 1] - ts[k];
            let zm = z(0.5 * (ts[k] + ts[k + 1]));
            lhs += zm.dot(&inc[k]);
            rhs += 0.5 * h * (z(ts[k]).dot(&g_left[k]) + z(ts[k + 1]).dot(&g_right[k]));
            rhs += zm.dot(&nu_cell[k]);
        }
        for (t, dp) in &jumps {
            lhs += z(*t).dot(dp);
        }
        for (t, w) in &atoms {
            rhs += z(*t).dot(w);
        }
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst / scale)
}

/// `(res_a, res_b)`: multipliers or measure mass off the active set, and
/// the largest `|xi_i <grad psi_i, p>|`.
pub fn check_slackness(cert: &PmpCertificate, prob: &SweepingProblem, active_tol: f64) -> Result<(f64, f64), PmpError> {
    let v = View::new(cert, prob)?;
    slackness(&v, active_tol)
}

fn slackness(v: &View, active_tol: f64) -> Result<(f64, f64), PmpError> {
    let cert = v.cert;
    let set = &v.prob.spec.set;
    let psi: Vec<Vec<f64>> = cert
        .x
        .iter()
        .map(|x| set.psi_values(x.as_slice()))
        .collect::<Result<_, _>>()?;
    let (mut res_a, mut off_mass, mut res_b) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..v.prob.r() {
        for k in 0..v.nodes() {
            let xi = cert.xi[i][k];
            if psi[k][i] < -active_tol {
                res_a = res_a.max(xi.abs());
            }
            if xi != 0.0 {
                let g = v.grad_psi(i, &cert.x[k])?;
                res_b = res_b.max((xi * g.dot(&v.p_left(k))).abs());
            }
        }
        let nu = &cert.nu[i];
        let mut mass = 0.0;
        for k in 0..v.nodes() - 1 {
            if psi[k][i] < -active_tol && psi[k + 1][i] < -active_tol {
                mass += nu.cell_mass(k).abs();
            }
        }
        for a in &nu.atoms {
            if set.psi_values(v.x_at(a.t).as_slice())?[i] < -active_tol {
                mass += a.weight.abs();
            }
        }
        off_mass = off_mass.max(mass);
    }
    Ok((res_a.max(off_mass / v.scale), res_b / v.scale))
}

/// Distance from `v` to the cone spanned by `rays`.
fn cone_distance(v: &DVector<f64>, rays: &[DVector<f64>]) -> f64 {
    if rays.is_empty() {
        return v.norm();
    }
    let a = DMatrix::from_columns(rays);
    let c = qp::nnls(&a, v);
    (v - a * c).norm()
}

fn active_rays(
    fields: &[crate::expr::ScalarField],
    x: &DVector<f64>,
    active_tol: f64,
) -> Result<Vec<DVector<f64>>, PmpError> {
    let mut rays = vec![];
    for h in fields {
        let e = h.eval(0.0, x.as_slice(), &[], 1)?;
        if e.value >= -active_tol {
            rays.push(e.grad.unwrap());
        }
    }
    Ok(rays)
}

fn control_samples(prob: &SweepingProblem, seed: u64) -> Vec<DVector<f64>> {
    let bx = &prob.ubox;
    let m = bx.m();
    let mut out = vec![];
    if m <= 2 {
        let per = 21usize;
        let total = per.pow(m as u32);
        for idx in 0..total {
            let mut rem = idx;
            out.push(DVector::from_fn(m, |j, _| {
                let q = rem % per;
                rem /= per;
                bx.lo[j] + (bx.hi[j] - bx.lo[j]) * q as f64 / (per - 1) as f64
            }));
        }
        return out;
    }
    for corner in 0..(1usize << m.min(10)) {
        out.push(DVector::from_fn(m, |j, _| if j < 10 && corner >> j & 1 == 1 { bx.hi[j] } else { bx.lo[j] }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_117e);
    for _ in 0..64 {
        out.push(DVector::from_fn(m, |j, _| {
            if bx.hi[j] > bx.lo[j] {
                rng.gen_range(bx.lo[j]..=bx.hi[j])
            } else {
                bx.lo[j]
            }
        }));
    }
    out
}

/// `(res_tv, res_max, res_nontriv)`.
pub fn check_transversality_and_max(
    cert: &PmpCertificate,
    prob: &SweepingProblem,
    active_tol: f64,
    seed: u64,
) -> Result<(f64, f64, f64), PmpError> {
    let v = View::new(cert, prob)?;
    transversality_and_max(&v, active_tol, seed)
}

fn transversality_and_max(v: &View, active_tol: f64, seed: u64) -> Result<(f64, f64, f64), PmpError> {
    let (cert, prob) = (v.cert, v.prob);
    let last = v.nodes() - 1;
    let (x0, xt) = (&cert.x[0], &cert.x[last]);
    let (p0, pt) = (&cert.p[0], &cert.p[last]);
    let lam = cert.lambda;
    let (_, g0, gt) = prob
        .g_eval(x0.as_slice(), xt.as_slice())
        .map_err(|e| PmpError::GridMismatch(e.to_string()))?;

    let r0 = match &prob.c0 {
        InitialSet::Point(_) => 0.0,
        InitialSet::Sublevel { fields, .. } => {
            cone_distance(&(p0 - &g0 * lam), &active_rays(fields, x0, active_tol)?)
        }
    };
    let vt = -pt - &gt * lam;
    let rt = match &prob.ct {
        TerminalSet::All => vt.norm(),
        TerminalSet::Affine { a, .. } => {
            let an = a.normalize();
            (&vt - &an * an.dot(&vt)).norm()
        }
        TerminalSet::Sublevel(fields) => cone_distance(&vt, &active_rays(fields, xt, active_tol)?),
    };
    let res_tv = (r0 * r0 + rt * rt).sqrt() / v.scale;

    let samples = control_samples(prob, seed);
    let spec = &prob.spec;
    let mut res_max: f64 = 0.0;
    for k in 0..last {
        for (node, p) in [(k, cert.p[k].clone()), (k + 1, v.p_left(k + 1))] {
            let (t, x) = (cert.times[node], cert.x[node].as_slice());
            let h_bar = spec.f_value(t, x, cert.u[k].as_slice())?.dot(&p);
            for s in &samples {
                res_max = res_max.max(spec.f_value(t, x, s.as_slice())?.dot(&p) - h_bar);
            }
        }
    }
    let res_nontriv = if prob.free_endpoint() {
        (lam - 1.0).abs()
    } else {
        (pt.norm() + lam - 1.0).abs()
    };
    Ok((res_tv, res_max / v.scale, res_nontriv))
}

/// Run every check and compare against `tol`.
pub fn verify(cert: &PmpCertificate, prob: &SweepingProblem, tol: &Tolerances) -> Result<ResidualReport, PmpError> {
    let v = View::new(cert, prob)?;
    let primal = primal(&v)?;
    let adj = adjoint(&v, tol.seed)?;
    let (sa, sb) = slackness(&v, tol.active_tol)?;
    let (tv, mx, nt) = transversality_and_max(&v, tol.active_tol, tol.seed)?;
    let values = [
        (primal, tol.primal),
        (nt, tol.nontriviality),
        (adj, tol.adjoint),
        (sa, tol.slack_a),
        (sb, tol.slack_b),
        (tv, tol.transversality),
        (mx, tol.maximization),
    ];
    Ok(ResidualReport {
        residuals: CONDITIONS
            .iter()
            .zip(values)
            .map(|(&name, (value, tol))| Residual { name, value, tol })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn closed_form_certificate_passes() {
        let prob = reference::example_problem();
        let cert = reference::certificate(2000);
        let rep = verify(&cert, &prob, &Tolerances::default()).unwrap();
        assert!(rep.pass(), "{rep:#?}");
    }

    #[test]
    fn every_corruption_is_caught() {
        let prob = reference::example_problem();
        let cert = reference::certificate(2000);
        let tol = Tolerances::default();
        for c in reference::corruptions(&cert) {
            let rep = verify(&c.cert, &prob, &tol).unwrap();
            let hit = rep.residuals.iter().any(|r| r.value > 10.0 * r.tol);
            assert!(hit, "{}: {rep:#?}", c.name);
            let r = rep.get(c.condition).unwrap();
            assert!(r.value > 10.0 * r.tol, "{}: {r:?}", c.name);
        }
    }

    #[test]
    fn trivial_adjoint_has_zero_residual() {
        let prob = reference::example_problem();
        let mut cert = reference::certificate(50);
        for p in cert.p.iter_mut() {
            *p = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        }
        cert.p_jumps.clear();
        for nu in cert.nu.iter_mut() {
            *nu = AdjointMeasure::zero(cert.times.clone());
        }
        assert_eq!(check_adjoint(&cert, &prob, 3).unwrap(), 0.0);
    }

    #[test]
    fn residuals_are_scale_invariant() {
        let prob = reference::example_problem();
        let cert = reference::certificate(400);
        let mut big = cert.clone();
        let c = 3.7;
        big.lambda *= c;
        big.p.iter_mut().for_each(|p| *p *= c);
        big.p_jumps.iter_mut().for_each(|j| j.dp *= c);
        for nu in big.nu.iter_mut() {
            nu.density.iter_mut().for_each(|d| *d *= c);
            nu.atoms.iter_mut().for_each(|a| a.weight *= c);
        }
        let tol = Tolerances::default();
        let a = verify(&cert, &prob, &tol).unwrap();
        let b = verify(&big, &prob, &tol).unwrap();
        for name in ["adjoint", "slack_a", "slack_b", "transversality", "maximization"] {
            let (x, y) = (a.get(name).unwrap().value, b.get(name).unwrap().value);
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{name}: {x} vs {y}");
        }
        assert!(b.get("nontriviality").unwrap().value > 1.0);
    }

    #[test]
    fn adjoint_verdict_is_stable_across_seeds() {
        let prob = reference::example_problem();
        let cert = reference::certificate(2000);
        for seed in 0..10 {
            assert!(check_adjoint(&cert, &prob, seed).unwrap() <= 1e-2);
        }
    }

    #[test]
    fn rejects_misaligned_certificates() {
        let prob = reference::example_problem();
        let mut cert = reference::certificate(20);
        cert.x.pop();
        assert!(matches!(verify(&cert, &prob, &Tolerances::default()), Err(PmpError::GridMismatch(_))));
    }
}
