//! Checksum stamps that make stages resumable. A stage's digest covers its
//! name, the config sections it reads and the digests of the stages it
//! consumes, so any upstream change invalidates everything downstream.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const STAMP_FILE: &str = "stamp.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub digest: String,
}

pub fn digest(stage: &str, inputs: &serde_json::Value, upstream: &[&Stamp]) -> Stamp {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(inputs).expect("config values serialize"));
    for s in upstream {
        h.update([0]);
        h.update(s.digest.as_bytes());
    }
    let digest = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Stamp {
        stage: stage.to_string(),
        digest,
    }
}

pub fn read(dir: &Path) -> Option<Stamp> {
    let text = std::fs::read_to_string(dir.join(STAMP_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// The stamp of a finished upstream stage, or a dependency error.
pub fn require(dir: &Path, stage: &'static str, needed: &'static str) -> CliResult<Stamp> {
    read(dir).ok_or(CliError::Dependency { stage, needed })
}

pub fn write(dir: &Path, stamp: &Stamp) -> CliResult<()> {
    let bytes = serde_json::to_vec_pretty(stamp).expect("stamp serializes");
    shapool::data::persist::write_atomic(&dir.join(STAMP_FILE), &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn digest_depends_on_every_input() {
        let up = digest("a", &json!({}), &[]);
        let base = digest("b", &json!({"x": 1}), &[&up]);
        assert_eq!(base, digest("b", &json!({"x": 1}), &[&up]));
        assert_ne!(base.digest, digest("c", &json!({"x": 1}), &[&up]).digest);
        assert_ne!(base.digest, digest("b", &json!({"x": 2}), &[&up]).digest);
        assert_ne!(base.digest, digest("b", &json!({"x": 1}), &[]).digest);
        assert_eq!(base.digest.len(), 64);
    }

    #[test]
    fn round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            require(dir.path(), "align", "train-pool"),
            Err(CliError::Dependency { needed: "train-pool", .. })
        ));
        let s = digest("x", &json!([1, 2]), &[]);
        write(dir.path(), &s).unwrap();
        assert_eq!(read(dir.path()), Some(s));
    }
}
