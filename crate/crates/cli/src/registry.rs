//! Builtin problems shipped with the tool.

use crate::problem::{BoxSpec, Constants, InitialSpec, ProblemFile, TerminalSpec, SCHEMA_VERSION};
use sweep_core::pmp::PmpCertificate;
use sweep_core::reference;

pub struct Builtin {
    pub name: &'static str,
    pub summary: &'static str,
    build: fn() -> ProblemFile,
}

impl Builtin {
    pub fn problem(&self) -> ProblemFile {
        (self.build)()
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn example() -> ProblemFile {
    ProblemFile {
        schema_version: SCHEMA_VERSION,
        n: 3,
        m: 1,
        horizon: reference::HORIZON,
        psi: strings(&reference::PSI),
        f: strings(&reference::F),
        phi: "0".into(),
        g: reference::G.into(),
        c0: InitialSpec::Point(vec![0.0, 1.0, -1.0]),
        ct: TerminalSpec::Affine {
            a: vec![8.0, 0.0, -4.0],
            b: 9.0,
        },
        u: BoxSpec {
            lo: vec![-1.0],
            hi: vec![1.0],
        },
        delta: 1.0,
        ball: None,
        schedule: None,
        cells: 64,
        substeps: Some(10),
        k_tilde: None,
        constants: Some(Constants {
            eta: Some(reference::ETA),
            mbar_psi: Some(reference::MBAR_PSI),
            mbar: Some(reference::MBAR),
        }),
        sample_box: Some(BoxSpec {
            lo: vec![-1.0, 0.0, -3.0],
            hi: vec![1.0, 2.0, 0.0],
        }),
    }
}

fn example_free() -> ProblemFile {
    ProblemFile {
        ct: TerminalSpec::All,
        ..example()
    }
}

/// Reach toward the corner `(1, 0)` of the triangle `x >= 0, x1 + x2 <= 1`.
fn triangle() -> ProblemFile {
    ProblemFile {
        schema_version: SCHEMA_VERSION,
        n: 2,
        m: 2,
        horizon: 1.0,
        psi: strings(&["-x1", "-x2", "x1 + x2 - 1"]),
        f: strings(&["u1", "u2"]),
        phi: "0".into(),
        g: "-x3 - 0.5*x4".into(),
        c0: InitialSpec::Point(vec![0.2, 0.2]),
        ct: TerminalSpec::All,
        u: BoxSpec {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
        },
        delta: 1.0,
        ball: None,
        schedule: None,
        cells: 32,
        substeps: Some(4),
        k_tilde: None,
        constants: Some(Constants {
            // corner (1, 0): min-norm point of the hull of (0,-1) and (1,1)
            eta: Some(0.5 * 0.2_f64.sqrt()),
            mbar_psi: Some(2.0_f64.sqrt()),
            mbar: Some(1.6),
        }),
        sample_box: Some(BoxSpec {
            lo: vec![-0.5, -0.5],
            hi: vec![1.5, 1.5],
        }),
    }
}

fn bang_bang() -> ProblemFile {
    ProblemFile {
        schema_version: SCHEMA_VERSION,
        n: 1,
        m: 1,
        horizon: 1.0,
        psi: strings(&["x1^2 - 4"]),
        f: strings(&["u1"]),
        phi: "0".into(),
        g: "-x2".into(),
        c0: InitialSpec::Point(vec![0.0]),
        ct: TerminalSpec::All,
        u: BoxSpec {
            lo: vec![-1.0],
            hi: vec![1.0],
        },
        delta: 1.0,
        ball: None,
        schedule: Some(crate::problem::ScheduleSpec::Gammas(vec![20.0, 50.0, 100.0])),
        cells: 16,
        substeps: Some(2),
        k_tilde: None,
        constants: Some(Constants {
            eta: Some(2.0),
            mbar_psi: Some(4.4),
            mbar: Some(1.1),
        }),
        sample_box: Some(BoxSpec {
            lo: vec![-3.0],
            hi: vec![3.0],
        }),
    }
}

fn stationary() -> ProblemFile {
    ProblemFile {
        schema_version: SCHEMA_VERSION,
        n: 2,
        m: 1,
        horizon: 1.0,
        psi: strings(&["x1^2 + x2^2 - 4"]),
        f: strings(&["0*u1", "0"]),
        phi: "0".into(),
        g: "(x3 - x1)^2 + (x4 - x2)^2".into(),
        c0: InitialSpec::Point(vec![0.5, 0.2]),
        ct: TerminalSpec::All,
        u: BoxSpec {
            lo: vec![-1.0],
            hi: vec![1.0],
        },
        delta: 1.0,
        ball: None,
        schedule: Some(crate::problem::ScheduleSpec::Gammas(vec![20.0, 40.0])),
        cells: 16,
        substeps: Some(2),
        k_tilde: None,
        constants: Some(Constants {
            eta: Some(2.0),
            mbar_psi: Some(4.4),
            mbar: Some(1.0),
        }),
        sample_box: Some(BoxSpec {
            lo: vec![-3.0, -3.0],
            hi: vec![3.0, 3.0],
        }),
    }
}

pub const BUILTINS: [Builtin; 5] = [
    Builtin {
        name: "paper-6-1",
        summary: "three states, two paraboloids, optimum u = 1 sliding along their intersection",
        build: example,
    },
    Builtin {
        name: "paper-6-1-free",
        summary: "paper-6-1 without the terminal constraint",
        build: example_free,
    },
    Builtin {
        name: "triangle-2d",
        summary: "planar reach into a corner of a triangle",
        build: triangle,
    },
    Builtin {
        name: "bang-bang-1d",
        summary: "x' = u, maximize x(1); no constraint becomes active",
        build: bang_bang,
    },
    Builtin {
        name: "stationary",
        summary: "f = 0 with an interior start; every control is optimal",
        build: stationary,
    },
];

pub fn find(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

/// Closed-form multipliers, where known.
pub fn closed_form_certificate(name: &str, cells: usize) -> Option<PmpCertificate> {
    (name == "paper-6-1").then(|| reference::certificate(cells))
}
