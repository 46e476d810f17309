use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Result, Step};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "log.jsonl";

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
    Ok((hex::encode(h.finalize()), n))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the run directory, or absolute when `external`.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Content legitimately differs between identical runs (timings).
    #[serde(default)]
    pub volatile: bool,
    #[serde(default)]
    pub external: bool,
}

impl FileRecord {
    pub fn hash(run_dir: &Path, path: &Path, volatile: bool) -> Result<Self> {
        let (rel, external) = match path.strip_prefix(run_dir) {
            Ok(r) => (r.to_string_lossy().replace('\\', "/"), false),
            Err(_) => (path.to_string_lossy().into_owned(), true),
        };
        let (sha256, bytes) = sha256_file(path).map_err(|e| PipelineError::io(path, e))?;
        Ok(Self {
            path: rel,
            sha256,
            bytes,
            volatile,
            external,
        })
    }

    pub fn resolve(&self, run_dir: &Path) -> PathBuf {
        if self.external {
            PathBuf::from(&self.path)
        } else {
            run_dir.join(&self.path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub step: Step,
    pub run_id: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub code_version: String,
    pub seeds: Vec<(String, u64)>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub duration_s: f64,
    /// Set on the returned value when the step was skipped; never stored.
    #[serde(default, skip_serializing)]
    pub cached: bool,
    /// Hash of everything above that is expected to be reproducible.
    pub manifest_hash: String,
}

impl RunManifest {
    pub fn compute_hash(&self) -> String {
        let files = |v: &[FileRecord]| -> Vec<(String, String)> {
            v.iter()
                .filter(|f| !f.volatile)
                .map(|f| (f.path.clone(), f.sha256.clone()))
                .collect()
        };
        let canon = serde_json::json!({
            "step": self.step.name(),
            "config_hash": self.config_hash,
            "inputs": files(&self.inputs),
            "outputs": files(&self.outputs),
            "code_version": self.code_version,
            "seeds": self.seeds,
        });
        hex::encode(Sha256::digest(canon.to_string().as_bytes()))
    }

    pub fn path(run_dir: &Path, step: Step) -> PathBuf {
        run_dir.join(step.name()).join(MANIFEST_FILE)
    }

    pub fn load(run_dir: &Path, step: Step) -> Result<Option<Self>> {
        let p = Self::path(run_dir, step);
        match std::fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| PipelineError::Manifest(format!("{}: {e}", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::io(&p, e)),
        }
    }

    /// Write to a temporary sibling, then rename over the target.
    pub fn store(&self, run_dir: &Path) -> Result<PathBuf> {
        let p = Self::path(run_dir, self.step);
        let tmp = p.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        std::fs::write(&tmp, text + "\n").map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, &p).map_err(|e| PipelineError::io(&p, e))?;
        Ok(p)
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn mismatched_outputs(&self, run_dir: &Path) -> Vec<Mismatch> {
        self.outputs
            .iter()
            .filter_map(|f| {
                let p = f.resolve(run_dir);
                let found = sha256_file(&p).ok().map(|(h, _)| h);
                (found.as_deref() != Some(f.sha256.as_str())).then(|| Mismatch {
                    step: self.step,
                    path: f.path.clone(),
                    expected: f.sha256.clone(),
                    found,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub step: Step,
    pub path: String,
    pub expected: String,
    /// `None` when the file is missing or unreadable.
    pub found: Option<String>,
}

pub fn now_s() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Appends one JSON line per step execution to the run log.
pub fn append_log(run_dir: &Path, m: &RunManifest) -> Result<()> {
    let p = run_dir.join(LOG_FILE);
    let line = serde_json::json!({
        "step": m.step.name(),
        "cached": m.cached,
        "manifest_hash": m.manifest_hash,
        "started_at": m.started_at,
        "duration_s": m.duration_s,
    });
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&p)
        .map_err(|e| PipelineError::io(&p, e))?;
    writeln!(f, "{line}").map_err(|e| PipelineError::io(&p, e))
}
