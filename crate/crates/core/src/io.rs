//! File formats: trajectory CSV and versioned JSON documents.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};
use crate::system::{ForceTerm, MechSystem, Trajectory};

/// Writes `t,<labels…>` followed by one row per sample at full precision.
pub fn write_trajectory_csv<T: Real>(path: impl AsRef<Path>, traj: &Trajectory<T>) -> Result<()> {
    let file = File::create(path)?;
    write_trajectory(BufWriter::new(file), traj)
}

pub fn write_trajectory<T: Real, W: Write>(out: W, traj: &Trajectory<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(traj.labels().iter().cloned());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(traj.dim() + 1);
    for i in 0..traj.len() {
        row.clear();
        row.push(format!("{:.16e}", to_f64(traj.times()[i])));
        for j in 0..traj.dim() {
            row.push(format!("{:.16e}", to_f64(traj.states()[(i, j)])));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<T: Real>(path: impl AsRef<Path>) -> Result<Trajectory<T>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_trajectory(BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_trajectory<T: Real, R: std::io::Read>(input: R) -> Result<Trajectory<T>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0).map(str::trim) != Some("t") {
        return Err(Error::Format(
            "trajectory CSV must start with a `t` column".into(),
        ));
    }
    let labels: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != labels.len() + 1 {
            return Err(Error::Format(format!(
                "row {} has {} fields",
                times.len() + 1,
                rec.len()
            )));
        }
        let mut it = rec.iter().map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number `{s}`: {e}")))
        });
        times.push(lit::<T>(it.next().unwrap()?));
        for v in it {
            values.push(lit::<T>(v?));
        }
    }
    let n = times.len();
    let states = DMatrix::from_row_slice(n, labels.len(), &values);
    Trajectory::new(times, states, labels)
}

pub fn write_json<D: Serialize>(path: impl AsRef<Path>, doc: &D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Peeks at the `format`/`version` fields of a JSON document.
pub fn document_kind(value: &serde_json::Value) -> Option<(String, u32)> {
    let f = value.get("format")?.as_str()?.to_string();
    let v = value.get("version")?.as_u64()? as u32;
    Some((f, v))
}

pub(crate) fn check_format(
    found: &str,
    version: u32,
    expected: &str,
    supported: u32,
) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "expected a `{expected}` document, found `{found}`"
        )));
    }
    if version != supported {
        return Err(Error::Format(format!(
            "`{expected}` version {version} is not supported (this build reads version {supported})"
        )));
    }
    Ok(())
}

pub(crate) fn matrix_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| to_f64(m[(i, j)])).collect())
        .collect()
}

pub(crate) fn matrix_from_rows<T: Real>(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<T>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Format(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| lit(rows[i][j])))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceTermDoc {
    pub dof: usize,
    pub q_exponents: Vec<u32>,
    pub qdot_exponents: Vec<u32>,
    pub coefficient: f64,
}

/// JSON form of a [`MechSystem`]; matrices are stored as arrays of rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechSystemDoc {
    pub format: String,
    pub version: u32,
    pub dof_count: usize,
    pub mass: Vec<Vec<f64>>,
    pub stiffness: Vec<Vec<f64>>,
    pub damping: Vec<Vec<f64>>,
    pub nonlinear_terms: Vec<ForceTermDoc>,
}

pub const MECH_SYSTEM_FORMAT: &str = "mech-system";

impl MechSystemDoc {
    pub fn from_system<T: Real>(sys: &MechSystem<T>) -> Self {
        Self {
            format: MECH_SYSTEM_FORMAT.into(),
            version: 1,
            dof_count: sys.dof_count(),
            mass: matrix_rows(sys.mass()),
            stiffness: matrix_rows(sys.stiffness()),
            damping: matrix_rows(sys.damping()),
            nonlinear_terms: sys
                .nonlinear_terms()
                .iter()
                .map(|t| ForceTermDoc {
                    dof: t.dof,
                    q_exponents: t.q_exponents.clone(),
                    qdot_exponents: t.qdot_exponents.clone(),
                    coefficient: to_f64(t.coefficient),
                })
                .collect(),
        }
    }

    pub fn to_system<T: Real>(&self) -> Result<MechSystem<T>> {
        check_format(&self.format, self.version, MECH_SYSTEM_FORMAT, 1)?;
        let m: DMatrix<T> = matrix_from_rows(&self.mass, "mass")?;
        if m.nrows() != self.dof_count {
            return Err(Error::Format(
                "dof_count does not match the mass matrix".into(),
            ));
        }
        MechSystem::new(
            m,
            matrix_from_rows(&self.stiffness, "stiffness")?,
            matrix_from_rows(&self.damping, "damping")?,
            self.nonlinear_terms
                .iter()
                .map(|t| ForceTerm {
                    dof: t.dof,
                    q_exponents: t.q_exponents.clone(),
                    qdot_exponents: t.qdot_exponents.clone(),
                    coefficient: lit(t.coefficient),
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::benchmark_chain;

    #[test]
    fn trajectory_csv_round_trip_is_exact() {
        let states = DMatrix::from_fn(4, 2, |i, j| {
            (i as f64 + 0.1).sin() * 10f64.powi(j as i32 * 7 - 3)
        });
        let traj = Trajectory::uniform(0.5, 0.445, states, vec!["a".into(), "b".into()]).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        let back: Trajectory<f64> = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn mech_system_json_round_trip() {
        let sys = benchmark_chain::<f64>();
        let doc = MechSystemDoc::from_system(&sys);
        let text = serde_json::to_string(&doc).unwrap();
        let back: MechSystemDoc = serde_json::from_str(&text).unwrap();
        let sys2: MechSystem<f64> = back.to_system().unwrap();
        assert_eq!(sys2.mass(), sys.mass());
        assert_eq!(sys2.nonlinear_terms(), sys.nonlinear_terms());
    }

    #[test]
    fn wrong_document_kind_is_rejected() {
        let mut doc = MechSystemDoc::from_system(&benchmark_chain::<f64>());
        doc.version = 7;
        assert!(matches!(doc.to_system::<f64>(), Err(Error::Format(_))));
    }
}
