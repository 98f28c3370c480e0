//! On-disk datasets and prediction files.
//!
//! A bundle is one CSV (`g`, optional `y`, then `x.*`, `z.*`, `xi.*` columns)
//! plus a JSON sidecar with names, flags and provenance. Floats are written
//! in shortest round-trip form, so a write/read cycle is lossless.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use underreport_core::datamodel::Dataset;
use underreport_core::matrix::{Mask, Matrix};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    feature_names: Vec<String>,
    continuous_flags: Vec<bool>,
    has_y: bool,
    has_z: bool,
    has_mask: bool,
    provenance: BTreeMap<String, String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn header_for(s: &Sidecar) -> Vec<String> {
    let mut h = vec!["g".to_string()];
    if s.has_y {
        h.push("y".into());
    }
    let mut block = |prefix: &str| h.extend(s.feature_names.iter().map(|f| format!("{prefix}.{f}")));
    block("x");
    if s.has_z {
        block("z");
    }
    if s.has_mask {
        block("xi");
    }
    h
}

pub fn write_bundle(path: &Path, d: &Dataset) -> Result<()> {
    let side = Sidecar {
        feature_names: d.feature_names.clone(),
        continuous_flags: d.continuous_flags.clone(),
        has_y: d.y.is_some(),
        has_z: d.z.is_some(),
        has_mask: d.xi_mask.is_some(),
        provenance: d.provenance.clone(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header_for(&side))?;
    let mut rec = Vec::new();
    for i in 0..d.n() {
        rec.clear();
        rec.push(d.g[i].to_string());
        if let Some(y) = &d.y {
            rec.push(y[i].to_string());
        }
        rec.extend(d.x.row(i).iter().map(f64::to_string));
        if let Some(z) = &d.z {
            rec.extend(z.row(i).iter().map(f64::to_string));
        }
        if let Some(m) = &d.xi_mask {
            rec.extend((0..d.d()).map(|j| m.get(i, j).to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let side_path = sidecar_path(path);
    fs::write(&side_path, serde_json::to_string_pretty(&side)? + "\n").map_err(|e| Error::io(&side_path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Bundle(format!("{}: {kind:?}", path.display())),
    }
}

fn parse<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<T> {
    s.parse().map_err(|_| Error::NonNumeric {
        row,
        column: col.to_string(),
        value: s.to_string(),
    })
}

pub fn read_bundle(path: &Path) -> Result<Dataset> {
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&text)?;
    let d = side.feature_names.len();
    if side.continuous_flags.len() != d {
        return Err(Error::Bundle("continuous flags do not match feature names".into()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let expected = header_for(&side);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Bundle(format!("header {header:?} does not match sidecar")));
    }
    let (mut g, mut y, mut x, mut z, mut mask) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let mut cells = rec.iter().zip(&expected);
        let mut next = || cells.next().ok_or_else(|| Error::Bundle(format!("short row {row}")));
        let (v, c) = next()?;
        g.push(parse::<u8>(v, row, c)?);
        if side.has_y {
            let (v, c) = next()?;
            y.push(parse::<f64>(v, row, c)?);
        }
        for _ in 0..d {
            let (v, c) = next()?;
            x.push(parse::<f64>(v, row, c)?);
        }
        if side.has_z {
            for _ in 0..d {
                let (v, c) = next()?;
                z.push(parse::<f64>(v, row, c)?);
            }
        }
        if side.has_mask {
            for _ in 0..d {
                let (v, c) = next()?;
                mask.push(parse::<u8>(v, row, c)?);
            }
        }
    }
    let n = g.len();
    Ok(Dataset {
        feature_names: side.feature_names,
        continuous_flags: side.continuous_flags,
        z: side.has_z.then(|| Matrix::new(n, d, z)).transpose()?,
        x: Matrix::new(n, d, x)?,
        g,
        y: side.has_y.then_some(y),
        xi_mask: side.has_mask.then(|| Mask::new(n, d, mask)).transpose()?,
        provenance: side.provenance,
    })
}

/// Model scores with row index and group, one line per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub groups: Vec<u8>,
    pub values: Vec<f64>,
}

pub fn write_predictions(path: &Path, p: &Predictions) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["row", "group", "prediction"])?;
    for (i, (g, v)) in p.groups.iter().zip(&p.values).enumerate() {
        w.write_record([i.to_string(), g.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["row", "group", "prediction"] {
        return Err(Error::Bundle(format!("prediction header {header:?}")));
    }
    let mut out = Predictions {
        groups: Vec::new(),
        values: Vec::new(),
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row: usize = parse(&rec[0], i + 1, "row")?;
        if row != i {
            return Err(Error::Bundle(format!("row index {row} at position {i}")));
        }
        out.groups.push(parse(&rec[1], i + 1, "group")?);
        out.values.push(parse(&rec[2], i + 1, "prediction")?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let z = Matrix::from_rows(&[[0.1, 1.0 / 3.0], [2.5e-300, -7.0], [f64::MAX, 0.0]]).unwrap();
        let mut x = z.clone();
        x.set(1, 0, 0.0);
        let mut d = Dataset::observed(
            vec!["a".into(), "b c".into()],
            vec![true, false],
            x,
            vec![0, 1, 1],
            Some(vec![0.2, -1e-17, 3.0]),
        );
        d.z = Some(z);
        d.xi_mask = Some(Mask::new(3, 2, vec![1, 1, 0, 1, 1, 1]).unwrap());
        d.provenance.insert("k".into(), "v".into());
        d
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        let d = sample();
        write_bundle(&p, &d).unwrap();
        assert_eq!(read_bundle(&p).unwrap(), d);

        let mut plain = d.clone();
        plain.z = None;
        plain.xi_mask = None;
        plain.y = None;
        write_bundle(&p, &plain).unwrap();
        assert_eq!(read_bundle(&p).unwrap(), plain);
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let preds = Predictions {
            groups: vec![0, 1, 0],
            values: vec![0.1 + 0.2, -3.0, 1e-300],
        };
        write_predictions(&p, &preds).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), preds);
    }

    #[test]
    fn tampered_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        write_bundle(&p, &sample()).unwrap();
        let text = fs::read_to_string(&p).unwrap().replacen("x.a", "x.q", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(read_bundle(&p), Err(Error::Bundle(_))));
    }
}
