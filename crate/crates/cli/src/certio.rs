//! Certificate and report JSON, adjoint CSV, atomic file output.

use crate::CliError;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use sweep_core::dynamics::{fmt17, AdjointMeasure, Atom};
use sweep_core::pmp::{Jump, PmpCertificate, ResidualReport};

pub const CERT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpFile {
    pub t: f64,
    pub dp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    /// One value per grid cell.
    pub density: Vec<f64>,
    pub atoms: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub schema_version: u32,
    pub grid: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub p_jumps: Vec<JumpFile>,
    pub nu: Vec<MeasureFile>,
    pub xi: Vec<Vec<f64>>,
    pub lambda: f64,
}

fn rows(v: &[DVector<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| r.as_slice().to_vec()).collect()
}

fn vectors(v: &[Vec<f64>]) -> Vec<DVector<f64>> {
    v.iter().map(|r| DVector::from_column_slice(r)).collect()
}

impl CertificateFile {
    pub fn from_certificate(c: &PmpCertificate) -> Self {
        CertificateFile {
            schema_version: CERT_SCHEMA_VERSION,
            grid: c.times.clone(),
            x: rows(&c.x),
            u: rows(&c.u),
            p: rows(&c.p),
            p_jumps: c
                .p_jumps
                .iter()
                .map(|j| JumpFile {
                    t: j.t,
                    dp: j.dp.as_slice().to_vec(),
                })
                .collect(),
            nu: c
                .nu
                .iter()
                .map(|m| MeasureFile {
                    density: m.density.clone(),
                    atoms: m.atoms.clone(),
                })
                .collect(),
            xi: c.xi.clone(),
            lambda: c.lambda,
        }
    }

    /// Shape checks that do not need the problem; the verifier checks the rest.
    pub fn into_certificate(self) -> Result<PmpCertificate, CliError> {
        let bad = |m: &str| Err(CliError::Schema(format!("certificate: {m}")));
        if self.schema_version != CERT_SCHEMA_VERSION {
            return bad(&format!("unsupported schema_version {}", self.schema_version));
        }
        let nodes = self.grid.len();
        if nodes < 2 {
            return bad("grid needs at least two nodes");
        }
        if self.x.len() != nodes || self.u.len() != nodes || self.p.len() != nodes {
            return bad("x, u and p need one row per grid node");
        }
        if self.xi.iter().any(|r| r.len() != nodes) {
            return bad("each xi row needs one value per grid node");
        }
        if self.nu.iter().any(|m| m.density.len() != nodes - 1) {
            return bad("each nu density needs one value per grid cell");
        }
        let times = self.grid;
        Ok(PmpCertificate {
            x: vectors(&self.x),
            u: vectors(&self.u),
            p: vectors(&self.p),
            p_jumps: self
                .p_jumps
                .into_iter()
                .map(|j| Jump {
                    t: j.t,
                    dp: DVector::from_vec(j.dp),
                })
                .collect(),
            nu: self
                .nu
                .into_iter()
                .map(|m| AdjointMeasure {
                    times: times.clone(),
                    density: m.density,
                    atoms: m.atoms,
                })
                .collect(),
            xi: self.xi,
            lambda: self.lambda,
            times,
        })
    }
}

pub fn certificate_to_json(c: &PmpCertificate) -> String {
    serde_json::to_string_pretty(&CertificateFile::from_certificate(c)).expect("certificates always serialize")
}

pub fn certificate_from_json(text: &str) -> Result<PmpCertificate, CliError> {
    let file: CertificateFile =
        serde_json::from_str(text).map_err(|e| CliError::Schema(format!("certificate: {e}")))?;
    file.into_certificate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub pass: bool,
    pub residuals: Vec<ResidualEntry>,
}

impl ReportFile {
    pub fn from_report(r: &ResidualReport) -> Self {
        ReportFile {
            schema_version: CERT_SCHEMA_VERSION,
            pass: r.pass(),
            residuals: r
                .residuals
                .iter()
                .map(|x| ResidualEntry {
                    name: x.name.to_string(),
                    value: x.value,
                    tol: x.tol,
                    pass: x.pass(),
                })
                .collect(),
        }
    }
}

/// `t,p1..pn,nu1_density..nur_density`; the density column holds the value
/// of the cell that starts at `t`, and the last row repeats the last cell.
pub fn adjoint_csv(c: &PmpCertificate) -> String {
    let n = c.p.first().map_or(0, |p| p.len());
    let mut out = String::from("t");
    (1..=n).for_each(|i| out.push_str(&format!(",p{i}")));
    (1..=c.nu.len()).for_each(|i| out.push_str(&format!(",nu{i}_density")));
    out.push('\n');
    let cells = c.times.len().saturating_sub(1);
    for (k, t) in c.times.iter().enumerate() {
        out.push_str(&fmt17(*t));
        for v in c.p[k].iter() {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        for m in &c.nu {
            let d = m.density.get(k.min(cells.saturating_sub(1))).copied().unwrap_or(0.0);
            out.push(',');
            out.push_str(&fmt17(d));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct AtomEntry {
    i: usize,
    t: f64,
    weight: f64,
}

/// Sidecar of the adjoint CSV: `[{i, t, weight}]` with 1-based `i`.
pub fn atoms_json(c: &PmpCertificate) -> String {
    let atoms: Vec<AtomEntry> = c
        .nu
        .iter()
        .enumerate()
        .flat_map(|(i, m)| {
            m.atoms.iter().map(move |a| AtomEntry {
                i: i + 1,
                t: a.t,
                weight: a.weight,
            })
        })
        .collect();
    serde_json::to_string_pretty(&atoms).expect("atoms always serialize")
}

/// Write through a temporary file in the same directory and rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

/// Write every file or none: all are staged before the first rename.
pub fn write_all_atomic(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.flush()?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| CliError::Io(e.error))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sweep_core::reference;

    #[test]
    fn certificate_round_trips_bit_for_bit() {
        let c = reference::certificate(40);
        let back = certificate_from_json(&certificate_to_json(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_empty_and_ragged_certificates() {
        assert!(matches!(certificate_from_json("{}"), Err(CliError::Schema(_))));
        let mut f = CertificateFile::from_certificate(&reference::certificate(10));
        f.xi[0].pop();
        assert!(matches!(f.into_certificate(), Err(CliError::Schema(_))));
    }

    #[test]
    fn adjoint_csv_shape() {
        let c = reference::certificate(10);
        let csv = adjoint_csv(&c);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,p1,p2,p3,nu1_density,nu2_density");
        assert_eq!(lines.len(), 12);
        let atoms: serde_json::Value = serde_json::from_str(&atoms_json(&c)).unwrap();
        assert_eq!(atoms.as_array().unwrap().len(), 2);
        assert_eq!(atoms[1]["i"], 2);
    }

    #[test]
    fn atomic_writes_leave_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        write_all_atomic(dir.path(), &[("a.txt", "1".into()), ("b.txt", "2".into())]).unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 2);
        write_atomic(&dir.path().join("a.txt"), "3").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("a.txt")).unwrap(), "3");
    }
}
