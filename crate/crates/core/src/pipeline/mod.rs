//! Declarative, content-hashed orchestration of the processing chain. Each
//! step writes into `runs/<run_id>/<step>/` and records a manifest of its
//! configuration hash, input and output file hashes, seeds and timings.

mod config;
mod manifest;
mod steps;

pub use config::{
    EvalSplit, EvaluateConfig, GroupIcaConfig, PipelineConfig, PredictConfig, PreprocessConfig, RepresentConfig,
};
pub use manifest::{code_version, sha256_file, FileRecord, Mismatch, RunManifest, LOG_FILE, MANIFEST_FILE};
pub use steps::{truth_report, NetworkMatch, Prediction, TruthReport};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Synth,
    Preprocess,
    Groupica,
    Dualreg,
    Represent,
    Train,
    Evaluate,
    Predict,
}

impl Step {
    pub const ALL: [Step; 8] = [
        Step::Synth,
        Step::Preprocess,
        Step::Groupica,
        Step::Dualreg,
        Step::Represent,
        Step::Train,
        Step::Evaluate,
        Step::Predict,
    ];

    pub const DEFAULT_CHAIN: [Step; 7] = [
        Step::Synth,
        Step::Preprocess,
        Step::Groupica,
        Step::Dualreg,
        Step::Represent,
        Step::Train,
        Step::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::Synth => "synth",
            Step::Preprocess => "preprocess",
            Step::Groupica => "groupica",
            Step::Dualreg => "dualreg",
            Step::Represent => "represent",
            Step::Train => "train",
            Step::Evaluate => "evaluate",
            Step::Predict => "predict",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Step {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        Step::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown step {s:?}")))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("step {step}: missing input {what}")]
    MissingInput { step: Step, what: String },
    #[error("step {step} failed: {source}")]
    StepFailed {
        step: Step,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("step {step}: content of {path} does not match its manifest")]
    HashMismatch { step: Step, path: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn failed<E: std::error::Error + Send + Sync + 'static>(step: Step) -> impl Fn(E) -> Self {
        move |e| PipelineError::StepFailed {
            step,
            source: Box::new(e),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::MissingInput { .. } => "missing_input",
            PipelineError::StepFailed { .. } => "step_failed",
            PipelineError::HashMismatch { .. } => "hash_mismatch",
            PipelineError::Manifest(_) => "manifest",
            PipelineError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingInput { .. } => 3,
            PipelineError::StepFailed { .. } => 4,
            PipelineError::HashMismatch { .. } => 5,
            PipelineError::Manifest(_) | PipelineError::Io { .. } => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Re-execute even when a matching manifest exists.
    pub force: bool,
}

fn same_files(a: &[FileRecord], b: &[FileRecord]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.path == y.path && x.sha256 == y.sha256)
}

/// Executes one step, or returns its stored manifest flagged `cached` when
/// configuration and inputs are unchanged and the stored outputs verify.
pub fn run_step(cfg: &PipelineConfig, step: Step, opts: RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(|e| PipelineError::io(&run_dir, e))?;
    let inputs = steps::resolve_inputs(cfg, &run_dir, step)?;
    let config_hash = cfg.config_hash(step);

    if !opts.force {
        if let Some(mut prev) = RunManifest::load(&run_dir, step)? {
            if prev.config_hash == config_hash && same_files(&prev.inputs, &inputs) {
                if let Some(bad) = prev.mismatched_outputs(&run_dir).into_iter().next() {
                    return Err(PipelineError::HashMismatch { step, path: bad.path });
                }
                prev.cached = true;
                manifest::append_log(&run_dir, &prev)?;
                return Ok(prev);
            }
        }
    }

    let step_dir = run_dir.join(step.name());
    if step_dir.exists() {
        std::fs::remove_dir_all(&step_dir).map_err(|e| PipelineError::io(&step_dir, e))?;
    }
    std::fs::create_dir_all(&step_dir).map_err(|e| PipelineError::io(&step_dir, e))?;

    let started_at = manifest::now_s();
    let clock = std::time::Instant::now();
    steps::execute(cfg, &run_dir, &step_dir, step, &inputs)?;
    let duration_s = clock.elapsed().as_secs_f64();

    let outputs = steps::collect_outputs(&run_dir, &step_dir)?;
    let mut m = RunManifest {
        step,
        run_id: cfg.run_id.clone(),
        config_hash,
        config: cfg.step_params(step),
        inputs,
        outputs,
        code_version: code_version(),
        seeds: cfg.seeds(step),
        started_at,
        finished_at: started_at + duration_s,
        duration_s,
        cached: false,
        manifest_hash: String::new(),
    };
    m.manifest_hash = m.compute_hash();
    m.store(&run_dir)?;
    manifest::append_log(&run_dir, &m)?;
    Ok(m)
}

/// Runs `cfg.steps` in order, stopping after `until` when given.
pub fn run_all(cfg: &PipelineConfig, until: Option<Step>, opts: RunOptions) -> Result<Vec<RunManifest>> {
    if let Some(u) = until {
        if !cfg.steps.contains(&u) {
            return Err(PipelineError::Config(format!("step {u} is not in the configured step list")));
        }
    }
    let mut out = Vec::new();
    for &step in &cfg.steps {
        out.push(run_step(cfg, step, opts)?);
        if Some(step) == until {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub steps_checked: Vec<Step>,
    /// Outputs whose bytes no longer match their manifest.
    pub mismatches: Vec<Mismatch>,
    /// Inputs that are not outputs of the step that produced them.
    pub chain_errors: Vec<String>,
    /// Manifests that could not be read.
    pub unreadable: Vec<String>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty() && self.chain_errors.is_empty() && self.unreadable.is_empty()
    }
}

/// Recomputes the hash of every recorded output and checks that each step's
/// run-local inputs were outputs of an earlier step with the same content.
pub fn verify_run(run_dir: &Path) -> VerifyReport {
    verify_steps(run_dir, &Step::ALL)
}

pub fn verify_steps(run_dir: &Path, steps: &[Step]) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut manifests = Vec::new();
    for &step in &Step::ALL {
        match RunManifest::load(run_dir, step) {
            Ok(Some(m)) => manifests.push(m),
            Ok(None) => {}
            Err(e) => {
                if steps.contains(&step) {
                    report.unreadable.push(e.to_string());
                }
            }
        }
    }
    for m in manifests.iter().filter(|m| steps.contains(&m.step)) {
        report.steps_checked.push(m.step);
        report.mismatches.extend(m.mismatched_outputs(run_dir));
        if m.compute_hash() != m.manifest_hash {
            report.chain_errors.push(format!("{}: manifest hash does not match its content", m.step));
        }
        for input in m.inputs.iter().filter(|f| !f.external) {
            let producer = input.path.split('/').next().and_then(|s| s.parse::<Step>().ok());
            let found = producer.and_then(|p| manifests.iter().find(|x| x.step == p));
            let ok = match found {
                Some(p) => p.step < m.step && p.outputs.iter().any(|o| o.path == input.path && o.sha256 == input.sha256),
                None => false,
            };
            if !ok {
                report
                    .chain_errors
                    .push(format!("{}: input {} is not a recorded upstream output", m.step, input.path));
            }
        }
    }
    report
}
