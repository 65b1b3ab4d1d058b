//! A worked instance with a known optimal solution.
//!
//! Three states, one control and two paraboloid constraints
//! `psi_1 = x1^2 + x2^2 + x3`, `psi_2 = x1^2 + (x2 - 2)^2 + x3` whose
//! boundaries meet along the curve `x2 = 1, x3 = -1 - x1^2`. With
//! `f = (4 x1 + u, x2 - 1, -2 x1 - x2 + u + 2)`, `U = [-1, 1]`, `T = 1/2`,
//! start `(0, 1, -1)`, terminal line `8 x1 - 4 x3 = 9` and cost
//! `g = -xT1^2 - xT3 - 1`, the optimum is `u = 1` with the state sliding
//! along the curve. Its multipliers are known in closed form and serve as
//! ground truth for the verifier and the measure recovery.

use crate::dynamics::{AdjointMeasure, Atom, ControlBox, DynamicsSpec};
use crate::expr::{FieldKind, ScalarField};
use crate::ocp::{InitialSet, SolveConfig, SweepingProblem, TerminalSet};
use crate::pmp::{Jump, PmpCertificate};
use crate::sweepset::{PenaltySchedule, SweepingSet};
use nalgebra::DVector;

pub const HORIZON: f64 = 0.5;
pub const LAMBDA: f64 = 0.25;
pub const ATOM_WEIGHT: f64 = 3.0 / 16.0;
pub const ETA: f64 = 0.5;
pub const MBAR_PSI: f64 = 5.0;
pub const MBAR: f64 = 7.0;

pub const PSI: [&str; 2] = ["x1^2 + x2^2 + x3", "x1^2 + (x2 - 2)^2 + x3"];
pub const F: [&str; 3] = ["4*x1 + u1", "x2 - 1", "-2*x1 - x2 + u1 + 2"];
pub const G: &str = "-x4^2 - x6 - 1";

pub fn example_set() -> SweepingSet {
    let f = |s: &str| ScalarField::parse(s, 3, 0, FieldKind::Constraint).unwrap();
    SweepingSet::new(PSI.iter().map(|s| f(s)).collect(), ETA, MBAR_PSI).unwrap()
}

pub fn example_spec() -> DynamicsSpec {
    let f = |s: &str| ScalarField::parse(s, 3, 1, FieldKind::Dynamics).unwrap();
    DynamicsSpec::new(
        F.iter().map(|s| f(s)).collect(),
        ScalarField::constant(0.0, 3, 0, FieldKind::Potential),
        example_set(),
        HORIZON,
        MBAR,
    )
    .unwrap()
}

fn build(ct: TerminalSet) -> SweepingProblem {
    SweepingProblem::new(
        example_spec(),
        ScalarField::parse(G, 6, 0, FieldKind::Cost).unwrap(),
        InitialSet::Point(DVector::from_vec(vec![0.0, 1.0, -1.0])),
        ct,
        ControlBox::new(vec![-1.0], vec![1.0]).unwrap(),
        1.0,
    )
    .unwrap()
}

pub fn example_problem() -> SweepingProblem {
    build(TerminalSet::Affine {
        a: DVector::from_vec(vec![8.0, 0.0, -4.0]),
        b: 9.0,
    })
}

/// Same data with the terminal constraint dropped.
pub fn example_free_problem() -> SweepingProblem {
    build(TerminalSet::All)
}

pub fn example_config(gammas: Vec<f64>, cells: usize, substeps: usize) -> SolveConfig {
    let sched = PenaltySchedule::new(gammas, MBAR, &example_set()).unwrap();
    let mut cfg = SolveConfig::new(sched, cells);
    cfg.substeps = substeps;
    cfg
}

pub fn state(t: f64) -> DVector<f64> {
    DVector::from_vec(vec![t, 1.0, -1.0 - t * t])
}

/// Adjoint on `[0, T)`; it jumps to `(3/4, 0, 0)` at `T`.
pub fn adjoint(t: f64) -> DVector<f64> {
    let d = 4.0 * t * t + 1.0;
    DVector::from_vec(vec![3.0 / (4.0 * d), 0.0, -3.0 * t / (2.0 * d)])
}

pub fn adjoint_terminal() -> DVector<f64> {
    DVector::from_vec(vec![0.75, 0.0, 0.0])
}

/// Density of the absolutely continuous part of `nu_i`, `i` in `{0, 1}`.
pub fn nu_density(i: usize, t: f64) -> f64 {
    let s = if i == 0 { 1.0 } else { -1.0 };
    let num = s * 12.0 * t.powi(3) + 24.0 * t * t + s * 3.0 * t - 6.0;
    num / (8.0 * (4.0 * t * t + 1.0).powi(2))
}

/// The closed-form multipliers sampled on a uniform grid of `cells`.
pub fn certificate(cells: usize) -> PmpCertificate {
    let times: Vec<f64> = (0..=cells).map(|k| HORIZON * k as f64 / cells as f64).collect();
    let mut p: Vec<DVector<f64>> = times.iter().map(|&t| adjoint(t)).collect();
    p[cells] = adjoint_terminal();
    let nu = (0..2)
        .map(|i| AdjointMeasure {
            times: times.clone(),
            density: (0..cells).map(|k| nu_density(i, 0.5 * (times[k] + times[k + 1]))).collect(),
            atoms: vec![Atom {
                t: HORIZON,
                weight: ATOM_WEIGHT,
            }],
        })
        .collect();
    PmpCertificate {
        x: times.iter().map(|&t| state(t)).collect(),
        u: vec![DVector::from_element(1, 1.0); cells + 1],
        p,
        p_jumps: vec![Jump {
            t: HORIZON,
            dp: adjoint_terminal() - adjoint(HORIZON),
        }],
        nu,
        xi: vec![vec![1.0; cells + 1]; 2],
        lambda: LAMBDA,
        times,
    }
}

pub struct Corruption {
    pub name: &'static str,
    /// Residual expected to flag it.
    pub condition: &'static str,
    pub cert: PmpCertificate,
}

/// Single-field corruptions of the closed-form certificate.
pub fn corruptions(cert: &PmpCertificate) -> Vec<Corruption> {
    let mut out = vec![];
    let mut c = cert.clone();
    c.xi[0].iter_mut().for_each(|v| *v += 0.1);
    out.push(Corruption {
        name: "xi1 raised by 0.1",
        condition: "primal_dynamics",
        cert: c,
    });
    let mut c = cert.clone();
    c.nu.iter_mut().for_each(|nu| nu.atoms.clear());
    out.push(Corruption {
        name: "atoms dropped",
        condition: "adjoint",
        cert: c,
    });
    let mut c = cert.clone();
    c.p.iter_mut().for_each(|p| p[2] = -p[2]);
    c.p_jumps.iter_mut().for_each(|j| j.dp[2] = -j.dp[2]);
    out.push(Corruption {
        name: "p3 sign flipped",
        condition: "slack_b",
        cert: c,
    });
    let mut c = cert.clone();
    c.lambda = 0.5;
    out.push(Corruption {
        name: "lambda set to 0.5",
        condition: "nontriviality",
        cert: c,
    });
    let mut c = cert.clone();
    c.u.iter_mut().for_each(|u| u[0] = -1.0);
    out.push(Corruption {
        name: "control set to -1",
        condition: "maximization",
        cert: c,
    });
    let mut c = cert.clone();
    c.x.iter_mut().for_each(|x| x[2] -= 0.1);
    out.push(Corruption {
        name: "x3 shifted by -0.1",
        condition: "slack_a",
        cert: c,
    });
    out
}
