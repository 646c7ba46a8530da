//! Dataset CSV files and checkpoint directories.
//!
//! # Dataset CSV
//!
//! UTF-8, comma separated, `.` decimal point, one header row:
//!
//! ```text
//! id,f0,f1,...,f{d-1},label[,property]
//! ```
//!
//! `property` is `0`/`1`. Floats are written in shortest round-trip form so
//! a save/load cycle is bit-exact.
//!
//! # Checkpoint directory
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/tensors/<name>.f64      raw little-endian f64, row-major
//! ```
//!
//! The manifest holds `format_version` (currently 1), a `kind` string, the
//! tensor table (`name`, `rows`, `cols`, `file`) and a free-form `meta`
//! object used for seeds, mappings and the config echo.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("id");
    for j in 0..dataset.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push_str(",label");
    if dataset.property.is_some() {
        out.push_str(",property");
    }
    out.push('\n');
    for r in 0..dataset.len() {
        out.push_str(&dataset.ids[r].to_string());
        for v in dataset.features.row(r) {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push_str(&format!(",{}", dataset.labels[r]));
        if let Some(p) = &dataset.property {
            out.push_str(if p[r] { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Loads a dataset CSV. `classes` overrides the class count; by default it is
/// one more than the largest label.
pub fn load_dataset_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| parse_err(1, "header", "empty file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.first() != Some(&"id") {
        return Err(parse_err(1, "id", "first column must be `id`".into()));
    }
    let has_property = header.last() == Some(&"property");
    let label_col = if has_property { header.len() - 2 } else { header.len() - 1 };
    if header.get(label_col) != Some(&"label") {
        return Err(parse_err(1, "label", "missing `label` column".into()));
    }
    let dim = label_col - 1;
    for (j, name) in header[1..label_col].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(parse_err(1, name, format!("expected column f{j}")));
        }
    }

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut property = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(parse_err(
                lineno,
                header.get(fields.len()).unwrap_or(&"row"),
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        ids.push(
            fields[0]
                .parse::<u64>()
                .map_err(|e| parse_err(lineno, "id", e.to_string()))?,
        );
        for j in 0..dim {
            let v = fields[1 + j]
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, header[1 + j], e.to_string()))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, header[1 + j], "non-finite value".into()));
            }
            values.push(v);
        }
        labels.push(
            fields[label_col]
                .parse::<usize>()
                .map_err(|e| parse_err(lineno, "label", e.to_string()))?,
        );
        if has_property {
            property.push(match fields[label_col + 1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(lineno, "property", format!("expected 0 or 1, got `{other}`")))
                }
            });
        }
    }
    let n = labels.len();
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(
        Matrix::from_vec(n, dim, values)?,
        labels,
        has_property.then_some(property),
        ids,
        classes,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    pub meta: serde_json::Value,
}

/// In-memory checkpoint: named tensors plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub tensors: Vec<(String, Matrix)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Matrix) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::State(format!("checkpoint has no tensor `{name}`")))
    }
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for (name, m) in &ckpt.tensors {
        let file = format!("{name}.f64");
        let mut bytes = Vec::with_capacity(m.values().len() * 8);
        for v in m.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(&tensor_dir.join(&file), &bytes)?;
        entries.push(TensorEntry {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
            file,
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        kind: ckpt.kind.clone(),
        tensors: entries,
        meta: ckpt.meta.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        field: format!("column {}", e.column()),
        message: e.to_string(),
    })?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path,
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let tpath = dir.join("tensors").join(&entry.file);
        let bytes = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let expected = entry.rows * entry.cols * 8;
        if bytes.len() != expected {
            return Err(Error::Parse {
                path: tpath,
                line: 0,
                field: entry.name.clone(),
                message: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((entry.name.clone(), Matrix::from_vec(entry.rows, entry.cols, values)?));
    }
    Ok(Checkpoint {
        kind: manifest.kind,
        tensors,
        meta: manifest.meta,
    })
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp: PathBuf = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{gen_blobs, gen_property_tabular, PropertyFixture};

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_blobs(3, 25, 3, 4, 0.7).unwrap();
        let p = dir.path().join("d.csv");
        save_dataset_csv(&d, &p).unwrap();
        assert_eq!(load_dataset_csv(&p, Some(3)).unwrap(), d);

        let d = gen_property_tabular(3, 40, 3, 0.3, PropertyFixture::default()).unwrap();
        save_dataset_csv(&d, &p).unwrap();
        assert_eq!(load_dataset_csv(&p, Some(2)).unwrap(), d);
    }

    #[test]
    fn malformed_csv_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "id,f0,f1,label\n0,1.0,2.0,1\n1,1.0,oops,0\n").unwrap();
        match load_dataset_csv(&p, None).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "f1");
            }
            e => panic!("unexpected {e}"),
        }
        fs::write(&p, "id,f0,f1,label\n0,1.0,2.0,1\n1,1.0").unwrap();
        assert!(matches!(load_dataset_csv(&p, None), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Checkpoint::new("test", serde_json::json!({"seed": 4}));
        c.push("w", Matrix::from_rows(&[vec![0.1, -2.5e-300], vec![f64::MIN_POSITIVE, 3.0]]).unwrap());
        c.push("b", Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        save_checkpoint(dir.path(), &c).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), c);

        // truncated tensor file
        let t = dir.path().join("tensors").join("w.f64");
        let bytes = fs::read(&t).unwrap();
        fs::write(&t, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Parse { .. })));

        // truncated manifest
        let m = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&m).unwrap();
        fs::write(&m, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Parse { .. })));

        // version mismatch
        fs::write(&m, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Version { found: 9, .. })));
    }
}
