use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::input(format!("cannot write {}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp).map_err(fail)?;
        f.write_all(bytes).map_err(fail)?;
        f.sync_all().map_err(fail)?;
    }
    std::fs::rename(&tmp, path).map_err(fail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_s: BTreeMap<String, f64>,
    pub finished_unix_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub digest_algorithm: String,
    /// Latest run of each command in this directory.
    pub runs: BTreeMap<String, RunRecord>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            tool: "spotkal".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            digest_algorithm: "sha256".into(),
            runs: BTreeMap::new(),
        }
    }
}

impl RunManifest {
    /// Reads `dir/manifest.json`, or starts a fresh one if absent or
    /// unreadable.
    pub fn load(dir: &Path) -> Self {
        std::fs::read(dir.join(MANIFEST_NAME))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn record(
        &mut self,
        command: &str,
        config_sha256: String,
        seed: u64,
        inputs: &[PathBuf],
        outputs: BTreeMap<String, String>,
        timings_s: BTreeMap<String, f64>,
    ) -> Result<(), CliError> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            let bytes = std::fs::read(p)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", p.display())))?;
            digests.insert(p.display().to_string(), sha256_hex(&bytes));
        }
        let finished = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        self.runs.insert(
            command.to_string(),
            RunRecord { config_sha256, seed, inputs: digests, outputs, timings_s, finished_unix_s: finished },
        );
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_vec_pretty(self).map_err(|e| CliError::input(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST_NAME), &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = std::fs::read_dir(dir.path().join("sub")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn manifest_accumulates_runs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, "t,x\n").unwrap();
        let mut m = RunManifest::load(dir.path());
        m.record("bench", "c".into(), 1, &[input.clone()], BTreeMap::new(), BTreeMap::new()).unwrap();
        m.save(dir.path()).unwrap();
        let mut m = RunManifest::load(dir.path());
        m.record("tune", "d".into(), 1, &[], BTreeMap::new(), BTreeMap::new()).unwrap();
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path());
        assert_eq!(back.digest_algorithm, "sha256");
        assert_eq!(back.runs.len(), 2);
        assert_eq!(back.runs["bench"].inputs.values().next().unwrap(), &sha256_hex(b"t,x\n"));
    }
}
