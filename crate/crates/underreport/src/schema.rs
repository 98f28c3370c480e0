//! Column roles for tabular CSV input.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use underreport_core::datamodel::Dataset;
use underreport_core::matrix::Matrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub column: String,
    /// Raw value to group code. Unlisted values fall back to `default`, then
    /// to a literal 0/1.
    #[serde(default)]
    pub map: BTreeMap<String, u8>,
    #[serde(default)]
    pub default: Option<u8>,
    /// Display names of groups 0 and 1.
    #[serde(default)]
    pub names: Option<[String; 2]>,
}

impl GroupSpec {
    pub fn name(&self, g: u8) -> String {
        match &self.names {
            Some(n) => n[usize::from(g.min(1))].clone(),
            None => g.to_string(),
        }
    }

    /// Group code from a display name or a literal code.
    pub fn resolve(&self, s: &str) -> Option<u8> {
        if let Some(n) = &self.names {
            if let Some(i) = n.iter().position(|v| v == s) {
                return Some(i as u8);
            }
        }
        match s {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        }
    }

    fn encode(&self, raw: &str) -> Option<u8> {
        if let Some(&g) = self.map.get(raw) {
            return Some(g);
        }
        if let Some(g) = self.default {
            return Some(g);
        }
        match raw.trim().parse::<f64>() {
            Ok(0.0) => Some(0),
            Ok(1.0) => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub features: Vec<String>,
    /// Features eligible for under-reporting. Defaults to every feature
    /// without a categorical encoding.
    #[serde(default)]
    pub continuous: Option<Vec<String>>,
    /// Per-column maps from raw strings to numbers.
    #[serde(default)]
    pub encodings: BTreeMap<String, BTreeMap<String, f64>>,
    pub group: GroupSpec,
    #[serde(default)]
    pub binary_label: Option<String>,
}

impl Schema {
    pub fn from_file(path: &Path) -> Result<Schema> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("no features declared".into()));
        }
        for (i, f) in self.features.iter().enumerate() {
            if self.features[..i].contains(f) {
                return Err(Error::Schema(format!("feature {f:?} declared twice")));
            }
        }
        if let Some(c) = &self.continuous {
            if let Some(f) = c.iter().find(|f| !self.features.contains(f)) {
                return Err(Error::Schema(format!("continuous column {f:?} is not a feature")));
            }
        }
        if let Some((k, v)) = self.group.map.iter().find(|(_, v)| **v > 1) {
            return Err(Error::Schema(format!("group value {k:?} mapped to {v}")));
        }
        if self.group.default.is_some_and(|v| v > 1) {
            return Err(Error::Schema("group default must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn continuous_flags(&self) -> Vec<bool> {
        self.features
            .iter()
            .map(|f| match &self.continuous {
                Some(c) => c.contains(f),
                None => !self.encodings.contains_key(f),
            })
            .collect()
    }

    fn number(&self, column: &str, raw: &str, row: usize) -> Result<f64> {
        if let Some(v) = self.encodings.get(column).and_then(|enc| enc.get(raw)) {
            return Ok(*v);
        }
        raw.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::NonNumeric {
                row,
                column: column.to_string(),
                value: raw.to_string(),
            })
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Position of `name` in the header. Repeated headers are accepted only when
/// every repetition holds the same values.
fn locate(header: &csv::StringRecord, records: &[csv::StringRecord], name: &str) -> Result<usize> {
    let pos: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim() == name)
        .map(|(i, _)| i)
        .collect();
    let first = *pos.first().ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    for &other in &pos[1..] {
        if records.iter().any(|r| r.get(first) != r.get(other)) {
            return Err(Error::DuplicateHeader(name.to_string()));
        }
    }
    Ok(first)
}

/// Reads a CSV file into a dataset of observed features. Row numbers in
/// errors count data rows from 1.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = reader.headers()?.clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::MissingHeader(path.to_path_buf()));
    }
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;

    let feature_cols = schema
        .features
        .iter()
        .map(|f| locate(&header, &records, f))
        .collect::<Result<Vec<_>>>()?;
    let group_col = locate(&header, &records, &schema.group.column)?;
    let label_col = schema
        .binary_label
        .as_ref()
        .map(|l| locate(&header, &records, l))
        .transpose()?;

    let n = records.len();
    let d = feature_cols.len();
    let mut data = Vec::with_capacity(n * d);
    let mut g = Vec::with_capacity(n);
    let mut y = label_col.map(|_| Vec::with_capacity(n));
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        for (f, &c) in schema.features.iter().zip(&feature_cols) {
            data.push(schema.number(f, rec.get(c).unwrap_or(""), row)?);
        }
        let raw = rec.get(group_col).unwrap_or("");
        let code = schema.group.encode(raw).ok_or_else(|| Error::NonBinaryGroup {
            column: schema.group.column.clone(),
            detail: format!("value {raw:?} at row {row} has no code"),
        })?;
        g.push(code);
        if let (Some(c), Some(y)) = (label_col, y.as_mut()) {
            let label = schema.binary_label.as_deref().unwrap_or_default();
            y.push(schema.number(label, rec.get(c).unwrap_or(""), row)?);
        }
    }
    let x = Matrix::new(n, d, data)?;
    let mut out = Dataset::observed(schema.features.clone(), schema.continuous_flags(), x, g, y);
    out.provenance.insert(
        "source".into(),
        path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
    );
    out.provenance.insert("source_sha256".into(), sha256_bytes(&bytes));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> Schema {
        serde_json::from_str(
            r#"{
                "features": ["a", "kind"],
                "encodings": {"kind": {"F": 1, "M": 0}},
                "group": {"column": "grp", "map": {"x": 0, "y": 1}},
                "binary_label": "lab"
            }"#,
        )
        .unwrap()
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_roles() {
        let f = file("a,kind,grp,lab,extra\n1.5,F,x,1,q\n2,M,y,0,r\n");
        let d = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.x.row(0), &[1.5, 1.0]);
        assert_eq!(d.g, vec![0, 1]);
        assert_eq!(d.y, Some(vec![1.0, 0.0]));
        assert_eq!(d.continuous_flags, vec![true, false]);
        assert!(d.z.is_none());
    }

    #[test]
    fn empty_file_has_no_header() {
        let f = file("");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::MissingHeader(_))));
    }

    #[test]
    fn missing_file() {
        let e = load_csv(Path::new("/definitely/not/here.csv"), &schema()).unwrap_err();
        assert!(matches!(e, Error::MissingFile(_)));
    }

    #[test]
    fn third_group_value_rejected() {
        let f = file("a,kind,grp,lab\n1,F,x,1\n2,M,y,0\n3,M,z,0\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::NonBinaryGroup { .. })));
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let f = file("a,kind,grp,lab\n1,F,x,1\nabc,M,y,0\n");
        match load_csv(f.path(), &schema()) {
            Err(Error::NonNumeric { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "a")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_headers() {
        let same = file("a,kind,a,grp,lab\n1,F,1,x,1\n");
        assert!(load_csv(same.path(), &schema()).is_ok());
        let differ = file("a,kind,a,grp,lab\n1,F,2,x,1\n");
        assert!(matches!(load_csv(differ.path(), &schema()), Err(Error::DuplicateHeader(_))));
    }

    #[test]
    fn missing_column() {
        let f = file("a,grp,lab\n1,x,1\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::MissingColumn(c)) if c == "kind"));
    }

    #[test]
    fn default_group_and_names() {
        let mut s = schema();
        s.group.default = Some(1);
        s.group.names = Some(["X".into(), "rest".into()]);
        let f = file("a,kind,grp,lab\n1,F,x,1\n3,M,z,0\n");
        assert_eq!(load_csv(f.path(), &s).unwrap().g, vec![0, 1]);
        assert_eq!(s.group.resolve("rest"), Some(1));
        assert_eq!(s.group.name(0), "X");
    }
}
