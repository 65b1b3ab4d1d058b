//! The subcommands, as functions returning data; `main` does the printing.

use crate::certio::{self, ReportFile};
use crate::problem::{Ball, Built, ProblemFile};
use crate::registry;
use crate::CliError;
use nalgebra::DVector;
use serde::Serialize;
use std::path::Path;
use sweep_core::dynamics::{
    compare_to_oracle, integrate_catching_up, integrate_penalized, ControlSignal, PenalizedOpts, StepDiag, Trajectory,
};
use sweep_core::ocp::{self, InitialSet, SolveResult, SweepingProblem};
use sweep_core::pmp::{self, PmpCertificate, ResidualReport, Tolerances};
use sweep_core::sweepset::PenaltySchedule;

const ACTIVE_TOL: f64 = 1e-8;
const A22_SAMPLES: usize = 400;

#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: u64,
    pub tol_scale: f64,
}

impl Default for Globals {
    fn default() -> Self {
        Globals {
            seed: 0,
            tol_scale: 1.0,
        }
    }
}

/// A path to a problem file, or the name of a builtin.
pub fn load_problem(arg: &str) -> Result<ProblemFile, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        return ProblemFile::from_json(&std::fs::read_to_string(path)?);
    }
    registry::find(arg)
        .map(|b| b.problem())
        .ok_or_else(|| CliError::Usage(format!("`{arg}` is neither a file nor a builtin example")))
}

/// `const:v1,..,vm` (one value per control) or `csv:path` (one row per cell,
/// optional header).
pub fn parse_control(arg: &str, built: &Built) -> Result<ControlSignal, CliError> {
    let prob = &built.problem;
    let (m, horizon, cells) = (prob.m(), prob.horizon(), built.config.cells);
    let parse_row = |s: &str| -> Result<Vec<f64>, CliError> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Usage(format!("control value: {e}")))
    };
    let values: Vec<DVector<f64>> = if let Some(rest) = arg.strip_prefix("const:") {
        let row = parse_row(rest)?;
        vec![DVector::from_vec(row); cells]
    } else if let Some(path) = arg.strip_prefix("csv:") {
        let text = std::fs::read_to_string(path)?;
        let mut out = vec![];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line.starts_with(|c: char| c.is_ascii_alphabetic()) {
                continue;
            }
            out.push(DVector::from_vec(parse_row(line)?));
        }
        out
    } else {
        return Err(CliError::Usage(format!("control must be const:... or csv:..., got `{arg}`")));
    };
    if values.is_empty() || values.iter().any(|v| v.len() != m) {
        return Err(CliError::Usage(format!("control rows must have m = {m} values")));
    }
    let u = ControlSignal::new(horizon, values)?;
    if !u.within(&prob.ubox) {
        return Err(CliError::Usage("control leaves the box U".into()));
    }
    Ok(u)
}

fn midpoint_control(built: &Built) -> ControlSignal {
    let b = &built.problem.ubox;
    let mid: Vec<f64> = b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect();
    ControlSignal::constant(built.problem.horizon(), built.config.cells, &mid)
}

/// Start of the limit dynamics: the `C0` point, or the projected guess.
fn limit_start(prob: &SweepingProblem) -> Result<DVector<f64>, CliError> {
    Ok(match &prob.c0 {
        InitialSet::Point(c) => c.clone(),
        InitialSet::Sublevel { guess, .. } => {
            let set = &prob.spec.set;
            if set.psi_max(guess.as_slice())? > set.feas_tol() {
                set.project(guess.as_slice(), 1e-12)?.z
            } else {
                guess.clone()
            }
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub eta_hat: f64,
    /// Largest normalized Gram off-diagonal sum along the trajectory.
    pub b_hat: f64,
    pub mbar_psi_hat: f64,
    pub mbar_hat: f64,
    pub a22: bool,
    pub a23: bool,
    pub contact_nodes: usize,
    pub unbounded_direction: Option<Vec<f64>>,
    pub ball_suggestion: Option<Ball>,
    pub first_failure: Option<&'static str>,
}

/// Assumption checks; `traj` defaults to the catching-up path under
/// `control`, which defaults to the middle of `U`.
pub fn check(
    pf: &ProblemFile,
    g: Globals,
    traj: Option<Trajectory>,
    control: Option<&str>,
) -> Result<CheckReport, CliError> {
    use rayon::prelude::*;
    let built = pf.build(g.seed)?;
    let prob = &built.problem;
    let set = &prob.spec.set;
    let bx = &built.sample_box;
    let samples = set.sample_boundary(&bx.lo, &bx.hi, A22_SAMPLES, g.seed)?;
    let a22 = set.check_a22(&samples)?;
    let est = set.estimate_constants(&bx.lo, &bx.hi, A22_SAMPLES, g.seed)?;
    let mbar_hat = prob.spec.estimate_mbar(&bx.lo, &bx.hi, &prob.ubox, A22_SAMPLES, g.seed)?;

    let traj = match traj {
        Some(t) => t,
        None => {
            let u = match control {
                Some(c) => parse_control(c, &built)?,
                None => midpoint_control(&built),
            };
            let steps = u.cells() * built.config.substeps;
            let x0 = limit_start(prob)?;
            integrate_catching_up(&prob.spec, x0.as_slice(), &u.refine(built.config.substeps), steps)?
        }
    };
    let per_node: Vec<Option<f64>> = traj
        .states
        .par_iter()
        .map(|x| match set.active_set(x.as_slice(), ACTIVE_TOL) {
            Ok(a) if a.is_empty() => Ok(None),
            Ok(_) => set.check_a23(x.as_slice(), ACTIVE_TOL).map(|(b, _)| Some(b)),
            Err(e) => Err(e),
        })
        .collect::<Result<_, _>>()?;
    let contact_nodes = per_node.iter().flatten().count();
    let b_hat = per_node.iter().flatten().copied().fold(0.0, f64::max) + 0.0;

    let center = limit_start(prob)?;
    let unbounded = set.recession_direction(center.as_slice(), 64, g.seed)?;
    let ball_suggestion = unbounded.as_ref().map(|_| {
        let diag = bx.lo.iter().zip(&bx.hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt();
        Ball {
            y0: center.as_slice().to_vec(),
            r0: diag.max(1.0),
        }
    });
    let a22_ok = a22.pass() && a22.eta_hat > 1e-9;
    let a23_ok = b_hat < 1.0 - 1e-9;
    let first_failure = if !a22_ok {
        Some("A2.2")
    } else if !a23_ok {
        Some("A2.3")
    } else {
        None
    };
    Ok(CheckReport {
        eta_hat: a22.eta_hat,
        b_hat,
        mbar_psi_hat: est.mbar_psi,
        mbar_hat,
        a22: a22_ok,
        a23: a23_ok,
        contact_nodes,
        unbounded_direction: unbounded.map(|d| d.as_slice().to_vec()),
        ball_suggestion,
        first_failure,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub gamma: f64,
    pub alpha: f64,
    /// `max_j psi_gamma(x_j) + alpha`; nonpositive means the path stayed in
    /// the shrunken set.
    pub invariance_margin: f64,
    pub max_xi: f64,
    pub xi_bound: f64,
    pub start_shift: f64,
    pub sup_dist: Option<f64>,
    pub l2_dist: Option<f64>,
}

pub struct Simulation {
    pub trajectory: Trajectory,
    pub oracle: Option<Trajectory>,
    pub summary: SimulateSummary,
}

pub fn simulate(pf: &ProblemFile, g: Globals, gamma: f64, control: &str, oracle: bool) -> Result<Simulation, CliError> {
    let built = pf.build(g.seed)?;
    let prob = &built.problem;
    let spec = &prob.spec;
    let floor = 2.0 * spec.mbar / spec.set.eta();
    if !(gamma > floor) {
        return Err(CliError::Usage(format!(
            "gamma = {gamma} violates the schedule precondition gamma > 2*Mbar/eta = {floor:.6}"
        )));
    }
    let u = parse_control(control, &built)?;
    let sched = PenaltySchedule::new(vec![gamma], spec.mbar, &spec.set)?;
    let c = limit_start(prob)?;
    let (x0, shift) = spec.set.shifted_start(&sched, 0, c.as_slice())?;
    let steps = u.cells() * built.config.substeps;
    let (pen, orc) = rayon::join(
        || integrate_penalized(spec, gamma, x0.as_slice(), &u, &PenalizedOpts::default()),
        || oracle.then(|| integrate_catching_up(spec, c.as_slice(), &u.refine(built.config.substeps), steps)),
    );
    let mut pen = pen?;
    let mut orc = orc.transpose()?;
    // the oracle reports on the fine grid of the refined control
    if let Some(o) = orc.as_mut() {
        let sub = built.config.substeps;
        if o.times.len() != pen.times.len() && sub > 1 {
            *o = thin(o, sub);
        }
    }
    let mut margin = f64::NEG_INFINITY;
    for x in &pen.states {
        margin = margin.max(spec.set.psi_gamma(gamma, x.as_slice())?.value);
    }
    let alpha = sched.alpha(0);
    let max_xi = pen.xi.iter().flatten().copied().fold(0.0, f64::max);
    let (sup, l2) = match &orc {
        Some(o) => {
            let (s, l) = compare_to_oracle(&pen, o)?;
            (Some(s), Some(l))
        }
        None => (None, None),
    };
    if pen.times.is_empty() {
        pen.times.push(0.0);
    }
    Ok(Simulation {
        summary: SimulateSummary {
            gamma,
            alpha,
            invariance_margin: margin + alpha,
            max_xi,
            xi_bound: sched.xi_bound(),
            start_shift: shift,
            sup_dist: sup,
            l2_dist: l2,
        },
        trajectory: pen,
        oracle: orc,
    })
}

/// Every `sub`-th node of a fine-grid trajectory.
fn thin(t: &Trajectory, sub: usize) -> Trajectory {
    fn every<T: Clone>(v: &[T], sub: usize) -> Vec<T> {
        v.iter().step_by(sub).cloned().collect()
    }
    Trajectory {
        times: every(&t.times, sub),
        states: every(&t.states, sub),
        controls: every(&t.controls, sub),
        xi: every(&t.xi, sub),
        diag: t
            .diag
            .chunks(sub)
            .map(|c| StepDiag {
                substeps: c.iter().map(|d| d.substeps).sum(),
                max_penalty: c.iter().map(|d| d.max_penalty).fold(0.0, f64::max),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaEntry {
    pub gamma: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub terminal_residual: f64,
    pub projected_gradient: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub gamma: f64,
    pub objective: f64,
    pub mayer: f64,
    pub terminal_residual: f64,
    pub terminal_multipliers: Vec<f64>,
    pub lambda: f64,
    pub terminal_state: Vec<f64>,
    pub certificate_pass: bool,
    pub failed: Vec<&'static str>,
    pub log: Vec<GammaEntry>,
}

pub struct SolveOutcome {
    pub result: SolveResult,
    pub certificate: PmpCertificate,
    pub report: ResidualReport,
    pub summary: SolveSummary,
}

impl SolveOutcome {
    /// Artifacts in the order they are written.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("trajectory.csv", self.result.trajectory.to_csv()),
            ("adjoint.csv", certio::adjoint_csv(&self.certificate)),
            ("atoms.json", certio::atoms_json(&self.certificate)),
            ("certificate.json", certio::certificate_to_json(&self.certificate)),
            (
                "report.json",
                serde_json::to_string_pretty(&ReportFile::from_report(&self.report)).expect("serializable"),
            ),
            ("solve.json", serde_json::to_string_pretty(&self.summary).expect("serializable")),
        ]
    }
}

pub fn tolerances(g: Globals) -> Tolerances {
    Tolerances {
        seed: g.seed,
        ..Tolerances::default()
    }
    .scaled(g.tol_scale)
}

pub fn solve(pf: &ProblemFile, g: Globals, init: Option<&str>) -> Result<SolveOutcome, CliError> {
    let built = pf.build(g.seed)?;
    let prob = &built.problem;
    let u0 = match init {
        Some(c) => parse_control(c, &built)?,
        None => midpoint_control(&built),
    };
    if u0.cells() != built.config.cells {
        return Err(CliError::Usage(format!(
            "initial control has {} cells, the problem uses N = {}",
            u0.cells(),
            built.config.cells
        )));
    }
    let result = ocp::solve(prob, &built.config, &u0)?;
    let certificate = ocp::extract_certificate(&result, prob, &built.config)?;
    let report = pmp::verify(&certificate, prob, &tolerances(g))?;
    let summary = SolveSummary {
        gamma: result.gamma,
        objective: result.objective,
        mayer: result.mayer,
        terminal_residual: result.terminal_residual,
        terminal_multipliers: result.terminal_multipliers.clone(),
        lambda: certificate.lambda,
        terminal_state: result.trajectory.last_state().as_slice().to_vec(),
        certificate_pass: report.pass(),
        failed: report.failed(),
        log: result
            .log
            .iter()
            .map(|l| GammaEntry {
                gamma: l.gamma,
                outer_iterations: l.outer_iterations,
                inner_iterations: l.inner_iterations,
                objective: l.objective,
                terminal_residual: l.terminal_residual,
                projected_gradient: l.projected_gradient,
                converged: l.converged,
            })
            .collect(),
    };
    Ok(SolveOutcome {
        result,
        certificate,
        report,
        summary,
    })
}

pub fn verify(cert: &PmpCertificate, pf: &ProblemFile, g: Globals) -> Result<ResidualReport, CliError> {
    let built = pf.build(g.seed)?;
    Ok(pmp::verify(cert, &built.problem, &tolerances(g))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ProblemFile {
        registry::find("paper-6-1").unwrap().problem()
    }

    #[test]
    fn controls_parse_and_validate() {
        let built = example().build(0).unwrap();
        let u = parse_control("const:0.5", &built).unwrap();
        assert_eq!(u.cells(), 64);
        assert!(parse_control("const:2", &built).is_err());
        assert!(parse_control("const:0.1,0.2", &built).is_err());
        assert!(parse_control("zero", &built).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.csv");
        std::fs::write(&p, "u1\n0.5\n-0.5\n1\n").unwrap();
        let u = parse_control(&format!("csv:{}", p.display()), &built).unwrap();
        assert_eq!(u.cells(), 3);
    }

    #[test]
    fn simulate_refuses_small_gamma() {
        let err = simulate(&example(), Globals::default(), 20.0, "const:1", false).err().unwrap();
        assert!(matches!(err, CliError::Usage(ref m) if m.contains("2*Mbar/eta")));
    }

    #[test]
    fn simulate_tracks_the_oracle() {
        let s = simulate(&example(), Globals::default(), 200.0, "const:1", true).unwrap();
        assert!(s.summary.sup_dist.unwrap() <= 0.05, "{:?}", s.summary);
        assert!(s.summary.invariance_margin <= 1e-6);
        assert!(s.summary.max_xi <= s.summary.xi_bound);
        assert_eq!(s.oracle.unwrap().len(), s.trajectory.len());
    }

    #[test]
    fn check_reports_example_constants() {
        let r = check(&example(), Globals::default(), None, Some("const:1")).unwrap();
        assert!((r.b_hat - 0.6).abs() < 1e-6, "{r:?}");
        assert!(r.a22 && r.a23 && r.first_failure.is_none());
        assert!(r.eta_hat >= 0.5 - 1e-9);
        assert!(r.ball_suggestion.is_some());
    }

    #[test]
    fn unknown_problem_is_a_usage_error() {
        assert!(matches!(load_problem("no-such-thing"), Err(CliError::Usage(_))));
        assert!(load_problem("stationary").is_ok());
    }
}
