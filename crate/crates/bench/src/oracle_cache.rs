//! On-disk cache of finite-difference oracle gradients.
//!
//! An oracle costs `2·n_θ` fine rollouts, so it is computed once per
//! (environment, policy, parameters, start state, oracle settings) and
//! stored under the SHA-256 of that fingerprint. Values are stored as raw
//! bit patterns, so a cache hit is bitwise identical to a fresh computation.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub struct OracleCache {
    dir: Option<PathBuf>,
}

impl OracleCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    fn path(dir: &Path, fingerprint: &str) -> PathBuf {
        let digest = Sha256::digest(fingerprint.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        dir.join(format!("{hex}.oracle"))
    }

    /// Returns the cached gradient for `fingerprint`, computing and storing
    /// it on a miss. A corrupt or mismatched entry is recomputed.
    pub fn get_or_compute<E>(
        &self,
        fingerprint: &str,
        compute: impl FnOnce() -> Result<Vec<f64>, E>,
    ) -> Result<Vec<f64>, E> {
        let Some(dir) = &self.dir else {
            return compute();
        };
        let path = Self::path(dir, fingerprint);
        if let Some(v) = fs::read_to_string(&path).ok().and_then(|t| parse(&t, fingerprint)) {
            return Ok(v);
        }
        let v = compute()?;
        let body: Vec<String> = v.iter().map(|x| format!("{:016x}", x.to_bits())).collect();
        // A cache that cannot be written only costs time.
        let _ = fs::create_dir_all(dir).and_then(|_| fs::write(&path, format!("{fingerprint}\n{}\n", body.join(","))));
        Ok(v)
    }
}

/// Short SHA-256 of the bit patterns of `values`, for embedding large
/// vectors in a fingerprint.
pub fn digest_f64(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn parse(text: &str, fingerprint: &str) -> Option<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next()? != fingerprint {
        return None;
    }
    let body = lines.next()?;
    if body.is_empty() {
        return Some(Vec::new());
    }
    body.split(',').map(|h| u64::from_str_radix(h, 16).ok().map(f64::from_bits)).collect()
}
