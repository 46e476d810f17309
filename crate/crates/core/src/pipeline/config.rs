use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Result, Step};
use crate::dualreg::DualRegSettings;
use crate::ica::Contrast;
use crate::nn::TrainConfig;
use crate::represent::FeatureMode;
use crate::synth::SynthSpec;

/// Sections whose `seed` falls back to the global seed when not given.
const SEEDED_SECTIONS: [&str; 4] = ["synth", "groupica", "represent", "train"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Directory of `*.nii`/`*.nii.gz` subjects; the synth outputs when unset.
    pub input_dir: Option<PathBuf>,
    pub motion_correction: bool,
    pub reference_frame: usize,
    pub fwhm_mm: f64,
    pub highpass_cutoff_s: f64,
    /// Registration target; data stay on their own grid when unset.
    pub template: Option<PathBuf>,
    pub registration_dof: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            input_dir: None,
            motion_correction: true,
            reference_frame: 0,
            fwhm_mm: 7.0,
            highpass_cutoff_s: 100.0,
            template: None,
            registration_dof: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupIcaConfig {
    pub model_order: usize,
    pub mask_threshold: f64,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub contrast: Contrast,
}

impl Default for GroupIcaConfig {
    fn default() -> Self {
        Self {
            model_order: 100,
            mask_threshold: 0.5,
            seed: 0,
            tol: 1e-4,
            max_iter: 200,
            contrast: Contrast::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentConfig {
    pub mode: FeatureMode,
    /// `"auto"` labels group components by matching them against the
    /// synthetic ground truth; anything else is a labels file path.
    pub labels: String,
    /// Matches weaker than this stay NOISE in auto mode.
    pub min_match_corr: f64,
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub export_png: bool,
}

impl Default for RepresentConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Flat,
            labels: "auto".into(),
            min_match_corr: 0.3,
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
            export_png: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub split: EvalSplit,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { split: EvalSplit::Test }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// K-frame map volume on the mask grid; the represent dataset when unset.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub run_id: String,
    /// Steps executed by `run-all`, in order.
    pub steps: Vec<Step>,
    pub synth: SynthSpec,
    pub preprocess: PreprocessConfig,
    pub groupica: GroupIcaConfig,
    pub dualreg: DualRegSettings,
    pub represent: RepresentConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
    pub predict: PredictConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            run_id: "default".into(),
            steps: Step::DEFAULT_CHAIN.to_vec(),
            synth: SynthSpec::default(),
            preprocess: PreprocessConfig::default(),
            groupica: GroupIcaConfig::default(),
            dualreg: DualRegSettings::default(),
            represent: RepresentConfig::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateConfig::default(),
            predict: PredictConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

impl PipelineConfig {
    /// Parses TOML, applying `seed_override` to the global seed before
    /// section seeds are materialized from it.
    pub fn from_toml_str(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        if let Some(seed) = seed_override {
            let seed = i64::try_from(seed).map_err(config_err)?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        let seed = match table.get("seed") {
            None => toml::Value::Integer(0),
            Some(v @ toml::Value::Integer(_)) => v.clone(),
            Some(_) => return Err(config_err("seed must be an integer")),
        };
        for name in SEEDED_SECTIONS {
            let section = table
                .entry(name)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(section) = section else {
                return Err(config_err(format!("[{name}] must be a table")));
            };
            section.entry("seed").or_insert_with(|| seed.clone());
        }
        let cfg: PipelineConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, seed_override)
    }

    /// All defaults with every seed set to `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self::from_toml_str("", Some(seed)).expect("default config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if self.steps[..i].contains(s) {
                return Err(config_err(format!("step {s} listed twice")));
            }
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return Err(config_err(format!("invalid run_id {:?}", self.run_id)));
        }
        self.synth.validate().map_err(config_err)?;
        self.train.validate().map_err(config_err)?;
        if self.groupica.model_order == 0 {
            return Err(config_err("groupica.model_order must be >= 1"));
        }
        if !(self.preprocess.fwhm_mm >= 0.0) {
            return Err(config_err("preprocess.fwhm_mm must be >= 0"));
        }
        crate::preprocess::Dof::try_from(self.preprocess.registration_dof).map_err(config_err)?;
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join("runs").join(&self.run_id)
    }

    /// Materialized parameters of one step, as hashed into its manifest.
    pub fn step_params(&self, step: Step) -> serde_json::Value {
        let v = match step {
            Step::Synth => serde_json::to_value(&self.synth),
            Step::Preprocess => serde_json::to_value(&self.preprocess),
            Step::Groupica => serde_json::to_value(&self.groupica),
            Step::Dualreg => serde_json::to_value(self.dualreg),
            Step::Represent => serde_json::to_value(&self.represent),
            Step::Train => serde_json::to_value(&self.train),
            Step::Evaluate => serde_json::to_value(&self.evaluate),
            Step::Predict => serde_json::to_value(&self.predict),
        };
        v.expect("config sections serialize")
    }

    /// SHA-256 of the canonical JSON of the step name and its parameters.
    pub fn config_hash(&self, step: Step) -> String {
        let canon = serde_json::json!({ "step": step.name(), "params": self.step_params(step) });
        hex::encode(Sha256::digest(canon.to_string().as_bytes()))
    }

    pub fn seeds(&self, step: Step) -> Vec<(String, u64)> {
        let s = |k: &str, v: u64| (k.to_string(), v);
        match step {
            Step::Synth => vec![s("synth", self.synth.seed)],
            Step::Groupica => vec![s("fastica", self.groupica.seed)],
            Step::Represent => vec![s("split", self.represent.seed)],
            Step::Train => vec![s("train", self.train.seed)],
            _ => Vec::new(),
        }
    }
}
