//! Run manifest: config snapshot, seed, version and SHA-256 of each output.

use std::collections::BTreeMap;
use std::path::Path;

use ncl_core::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub seed: u64,
    /// "ok" or the error the run stopped on.
    pub status: String,
    pub config: SimConfig,
    /// File name to lowercase hex SHA-256.
    pub digests: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(config: &SimConfig, status: String) -> Self {
        RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            status,
            config: config.clone(),
            digests: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.digests.insert(name.to_string(), sha256_hex(bytes));
    }

    /// Files in `dir` whose digest differs from the manifest, or that are missing.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.digests
            .iter()
            .filter(|(name, want)| match std::fs::read(dir.join(name)) {
                Ok(bytes) => sha256_hex(&bytes) != **want,
                Err(_) => true,
            })
            .map(|(name, _)| name.clone())
            .collect()
    }
}

pub fn read_manifest(dir: &Path) -> std::io::Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn json_round_trip_keeps_floats_exact() {
        let mut cfg = SimConfig::default();
        cfg.rop = 0.1 + 0.2;
        cfg.hv.lane_bound = 1.0 / 3.0;
        let m = RunManifest::new(&cfg, "ok".into());
        let back: RunManifest = serde_json::from_str(&serde_json::to_string_pretty(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn every_single_byte_mutation_is_caught() {
        let dir = tempfile::tempdir().unwrap();
        let body = b"frame,x\n0,1.000000\n".to_vec();
        std::fs::write(dir.path().join("t.csv"), &body).unwrap();
        let mut m = RunManifest::new(&SimConfig::default(), "ok".into());
        m.record("t.csv", &body);
        assert!(m.mismatches(dir.path()).is_empty());
        for i in 0..body.len() {
            let mut bad = body.clone();
            bad[i] ^= 0x01;
            std::fs::write(dir.path().join("t.csv"), &bad).unwrap();
            assert_eq!(m.mismatches(dir.path()), vec!["t.csv".to_string()], "byte {i}");
        }
        std::fs::remove_file(dir.path().join("t.csv")).unwrap();
        assert_eq!(m.mismatches(dir.path()).len(), 1);
    }
}
