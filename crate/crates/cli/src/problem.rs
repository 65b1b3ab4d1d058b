//! The problem file and its translation into solver objects.

use crate::CliError;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sweep_core::dynamics::{ControlBox, DynamicsSpec};
use sweep_core::expr::{FieldKind, ScalarField};
use sweep_core::ocp::{InitialSet, SolveConfig, SweepingProblem, TerminalSet};
use sweep_core::sweepset::{PenaltySchedule, SweepingSet};

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_SUBSTEPS: usize = 10;
const ESTIMATE_SAMPLES: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSpec {
    Point(Vec<f64>),
    Sublevel { fields: Vec<String>, guess: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalSpec {
    All,
    Affine { a: Vec<f64>, b: f64 },
    Sublevel(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub y0: Vec<f64>,
    #[serde(rename = "R0")]
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleSpec {
    Gammas(Vec<f64>),
    Auto {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma_min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma_max: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
    },
}

/// Known constants; any that are missing are estimated by sampling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Constants {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mbar_psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mbar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub psi: Vec<String>,
    pub f: Vec<String>,
    pub phi: String,
    pub g: String,
    #[serde(rename = "C0")]
    pub c0: InitialSpec,
    #[serde(rename = "CT")]
    pub ct: TerminalSpec,
    #[serde(rename = "U")]
    pub u: BoxSpec,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball: Option<Ball>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(rename = "N")]
    pub cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<Constants>,
    /// Box in which constants are estimated and boundary points sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_box: Option<BoxSpec>,
}

/// A validated problem with everything the solver needs.
#[derive(Debug, Clone)]
pub struct Built {
    pub problem: SweepingProblem,
    pub config: SolveConfig,
    pub sample_box: BoxSpec,
    /// Whether each constant was given (true) or estimated.
    pub given: [bool; 3],
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

fn parse_all(src: &[String], n: usize, m: usize, kind: FieldKind, what: &str) -> Result<Vec<ScalarField>, CliError> {
    src.iter()
        .enumerate()
        .map(|(i, s)| ScalarField::parse(s, n, m, kind).map_err(|e| schema(format!("{what}[{i}]: {e}"))))
        .collect()
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let pf: ProblemFile = serde_json::from_str(text).map_err(|e| schema(format!("problem file: {e}")))?;
        if pf.schema_version != SCHEMA_VERSION {
            return Err(schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                pf.schema_version
            )));
        }
        Ok(pf)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }

    fn check_shapes(&self) -> Result<(), CliError> {
        let n = self.n;
        if n == 0 {
            return Err(schema("n must be positive"));
        }
        if self.f.len() != n {
            return Err(schema(format!("f has {} entries, n = {n}", self.f.len())));
        }
        if self.psi.is_empty() {
            return Err(schema("psi must list at least one constraint"));
        }
        if self.u.lo.len() != self.m || self.u.hi.len() != self.m {
            return Err(schema(format!("U bounds must have m = {} entries", self.m)));
        }
        if !(self.horizon >= 0.0) {
            return Err(schema("T must be nonnegative"));
        }
        match &self.c0 {
            InitialSpec::Point(p) if p.len() != n => return Err(schema("C0 point must have n entries")),
            InitialSpec::Sublevel { guess, .. } if guess.len() != n => {
                return Err(schema("C0 guess must have n entries"))
            }
            _ => {}
        }
        if let TerminalSpec::Affine { a, .. } = &self.ct {
            if a.len() != n {
                return Err(schema("CT normal must have n entries"));
            }
        }
        if let Some(b) = &self.ball {
            if b.y0.len() != n {
                return Err(schema("ball center must have n entries"));
            }
        }
        if let Some(b) = &self.sample_box {
            if b.lo.len() != n || b.hi.len() != n || b.lo.iter().zip(&b.hi).any(|(l, h)| !(l < h)) {
                return Err(schema("sample_box must be a nonempty n-dimensional box"));
            }
        }
        Ok(())
    }

    fn default_box(&self) -> BoxSpec {
        let c = match &self.c0 {
            InitialSpec::Point(p) => p.clone(),
            InitialSpec::Sublevel { guess, .. } => guess.clone(),
        };
        BoxSpec {
            lo: c.iter().map(|v| v - 2.0).collect(),
            hi: c.iter().map(|v| v + 2.0).collect(),
        }
    }

    /// Parse every expression, fill in missing constants and the schedule.
    pub fn build(&self, seed: u64) -> Result<Built, CliError> {
        self.check_shapes()?;
        let (n, m) = (self.n, self.m);
        let psi = parse_all(&self.psi, n, 0, FieldKind::Constraint, "psi")?;
        let f = parse_all(&self.f, n, m, FieldKind::Dynamics, "f")?;
        let phi = ScalarField::parse(&self.phi, n, 0, FieldKind::Potential).map_err(|e| schema(format!("phi: {e}")))?;
        let g = ScalarField::parse(&self.g, 2 * n, 0, FieldKind::Cost).map_err(|e| schema(format!("g: {e}")))?;
        let consts = self.constants.unwrap_or_default();
        let sample_box = self.sample_box.clone().unwrap_or_else(|| self.default_box());

        let mut set = SweepingSet::new(psi, consts.eta.unwrap_or(1.0), consts.mbar_psi.unwrap_or(1.0))?;
        if let Some(b) = &self.ball {
            set = set.augment_with_ball(&b.y0, b.r0)?;
        }
        if consts.eta.is_none() || consts.mbar_psi.is_none() {
            let est = set.estimate_constants(&sample_box.lo, &sample_box.hi, ESTIMATE_SAMPLES, seed)?;
            set = set.with_constants(
                consts.eta.unwrap_or(est.eta_hat),
                consts.mbar_psi.unwrap_or(est.mbar_psi),
            )?;
        }
        let ubox = ControlBox::new(self.u.lo.clone(), self.u.hi.clone())?;
        let mut spec = DynamicsSpec::new(f, phi, set, self.horizon, consts.mbar.unwrap_or(1.0))?;
        if consts.mbar.is_none() {
            let est = spec.estimate_mbar(&sample_box.lo, &sample_box.hi, &ubox, ESTIMATE_SAMPLES, seed)?;
            spec = spec.with_mbar(est.max(1e-3));
        }
        let field_list = |src: &[String], what: &str| parse_all(src, n, 0, FieldKind::Constraint, what);
        let c0 = match &self.c0 {
            InitialSpec::Point(p) => InitialSet::Point(DVector::from_column_slice(p)),
            InitialSpec::Sublevel { fields, guess } => InitialSet::Sublevel {
                fields: field_list(fields, "C0")?,
                guess: DVector::from_column_slice(guess),
            },
        };
        let ct = match &self.ct {
            TerminalSpec::All => TerminalSet::All,
            TerminalSpec::Affine { a, b } => TerminalSet::Affine {
                a: DVector::from_column_slice(a),
                b: *b,
            },
            TerminalSpec::Sublevel(fs) => TerminalSet::Sublevel(field_list(fs, "CT")?),
        };
        let problem = SweepingProblem::new(spec, g, c0, ct, ubox, self.delta)?;
        let gammas = self.gammas(&problem);
        let schedule = PenaltySchedule::new(gammas, problem.spec.mbar, &problem.spec.set)?;
        let mut config = SolveConfig::new(schedule, self.cells);
        config.substeps = self.substeps.unwrap_or(DEFAULT_SUBSTEPS);
        if let Some(k) = self.k_tilde {
            config.k_tilde = k;
        }
        Ok(Built {
            problem,
            config,
            sample_box,
            given: [consts.eta.is_some(), consts.mbar_psi.is_some(), consts.mbar.is_some()],
        })
    }

    /// Explicit list, or 8 log-uniform values from `max(10, 4 Mbar / eta)`
    /// to `1e3` unless overridden.
    fn gammas(&self, prob: &SweepingProblem) -> Vec<f64> {
        let floor = (4.0 * prob.spec.mbar / prob.spec.set.eta()).max(10.0);
        match &self.schedule {
            Some(ScheduleSpec::Gammas(g)) => g.clone(),
            Some(ScheduleSpec::Auto {
                gamma_min,
                gamma_max,
                steps,
            }) => PenaltySchedule::log_uniform(
                gamma_min.unwrap_or(floor),
                gamma_max.unwrap_or(1e3).max(gamma_min.unwrap_or(floor)),
                steps.unwrap_or(8),
            ),
            None => PenaltySchedule::log_uniform(floor, 1e3_f64.max(floor), 8),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ProblemFile {
        ProblemFile {
            schema_version: 1,
            n: 1,
            m: 1,
            horizon: 1.0,
            psi: vec!["x1^2 - 4".into()],
            f: vec!["u1".into()],
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
            schedule: None,
            cells: 16,
            substeps: None,
            k_tilde: None,
            constants: None,
            sample_box: None,
        }
    }

    #[test]
    fn json_layout() {
        let text = minimal().to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["CT"], "all");
        assert_eq!(v["C0"]["point"][0], 0.0);
        assert_eq!(v["T"], 1.0);
        assert!(v.get("ball").is_none());
        let back = ProblemFile::from_json(&text).unwrap();
        assert_eq!(back, minimal());
    }

    #[test]
    fn estimates_missing_constants() {
        let b = minimal().build(0).unwrap();
        assert_eq!(b.given, [false, false, false]);
        // |psi'| = 4 at the boundary points +-2, halved
        assert!((b.problem.spec.set.eta() - 2.0).abs() < 1e-6);
        assert!(b.problem.spec.mbar >= 1.0);
        let gs = b.config.schedule.gammas();
        assert_eq!(gs.len(), 8);
        assert!((gs[7] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_shapes_and_versions() {
        let mut p = minimal();
        p.f.push("0".into());
        assert!(matches!(p.build(0), Err(CliError::Schema(_))));
        let mut p = minimal();
        p.g = "x3".into();
        assert!(matches!(p.build(0), Err(CliError::Schema(_))));
        let text = minimal().to_json().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(ProblemFile::from_json(&text), Err(CliError::Schema(_))));
        assert!(ProblemFile::from_json("{}").is_err());
    }
}
