//! Declarative experiment configuration: strict JSON schema with defaults,
//! validated before any stage runs.

use crate::attacks::AttackSpec;
use crate::data::IngestManifest;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::generative::GanTrainConfig;
use crate::metrics::{GroupScoring, LabelLossMode};
use crate::modelzoo::{ArchDescriptor, TrainConfig};
use crate::riskcore::RiskWeights;
use crate::vlm::SynonymMap;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Generic object vocabulary used when the config does not supply one;
/// known class names are injected on top at run time.
pub const BUILTIN_VOCABULARY: [&str; 30] = [
    "airplane", "bird", "car", "cat", "deer", "dog", "horse", "monkey", "ship", "truck",
    "tank", "air defense", "artillery", "armored vehicle", "helicopter", "boat", "building",
    "tree", "person", "road", "bridge", "train", "bicycle", "motorcycle", "bus", "flower",
    "mountain", "field", "house", "machine",
];

fn default_template() -> String {
    "a photo of a {}".to_string()
}

fn default_n_trials() -> usize {
    30
}

fn default_n_per_class() -> usize {
    10
}

fn default_top_k() -> usize {
    3
}

fn default_support_threshold() -> f64 {
    0.2
}

fn default_output_root() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub target_train: PathBuf,
    pub target_test: PathBuf,
    pub public: PathBuf,
    /// Defaults to the target's test split when absent.
    #[serde(default)]
    pub evaluation_train: Option<PathBuf>,
    #[serde(default)]
    pub resize_to: Option<(usize, usize)>,
    /// NearMiss undersampling applied to the target training split.
    #[serde(default)]
    pub nearmiss: Option<NearMissConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NearMissConfig {
    pub version: u32,
    pub neighbors: usize,
    pub feature_size: (usize, usize),
}

impl Default for NearMissConfig {
    fn default() -> Self {
        Self {
            version: 1,
            neighbors: 3,
            feature_size: (32, 32),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: ArchDescriptor,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySection {
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSection {
    #[serde(default)]
    pub train: Option<GanTrainConfig>,
    /// Load a previously trained prior instead of training one.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSection {
    /// Deterministic palette/keyword stubs derived from the target training
    /// data; hermetic and fully concurrent.
    Stub,
    /// HTTP model-serving endpoints.
    Http {
        caption_url: String,
        text_url: String,
        similarity_url: String,
    },
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection::Stub
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub datasets: DatasetPaths,
    pub target: ModelSection,
    pub evaluation: ModelSection,
    #[serde(default)]
    pub proxy: ProxySection,
    pub gan: GanSection,
    pub attack: AttackSpec,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default)]
    pub backends: BackendSection,
    #[serde(default)]
    pub caption_prompt: Option<String>,
    #[serde(default)]
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub label_loss: LabelLossMode,
    #[serde(default)]
    pub group_scoring: GroupScoring,
    #[serde(default = "default_top_k")]
    pub per_caption_top_k: usize,
    #[serde(default = "default_support_threshold")]
    pub support_threshold: f64,
    #[serde(default)]
    pub synonyms: Option<SynonymMap>,
    #[serde(default = "RiskWeights::equal")]
    pub weights: RiskWeights,
    #[serde(default = "default_n_trials")]
    pub n_trials: usize,
    pub master_seed: u64,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Retrain target/GAN/evaluation models per trial instead of sharing
    /// them across trials.
    #[serde(default)]
    pub retrain_models_per_trial: bool,
    #[serde(default = "default_template")]
    pub caption_template: String,
}

impl ExperimentConfig {
    /// Digest of the canonical serialized config; names run directories and
    /// makes resumption tamper-evident.
    pub fn config_digest(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Deterministic run id from name and master seed.
    pub fn run_id(&self) -> String {
        format!("{}-seed{}", self.name, self.master_seed)
    }

    pub fn ingest_manifest(&self) -> IngestManifest {
        IngestManifest {
            resize_to: self.datasets.resize_to,
            manifest_out: None,
        }
    }

    /// Effective candidate-label vocabulary: user-provided (or the built-in
    /// common-objects list) with the known class names injected.
    pub fn effective_vocabulary(&self, class_names: &[String]) -> Vec<String> {
        let mut vocab: Vec<String> = if self.vocabulary.is_empty() {
            BUILTIN_VOCABULARY.iter().map(|s| s.to_string()).collect()
        } else {
            self.vocabulary.clone()
        };
        for name in class_names {
            if !vocab.iter().any(|v| v == name) {
                vocab.push(name.clone());
            }
        }
        vocab
    }

    /// Semantic checks beyond the schema.
    pub fn validate_semantics(&self, config_dir: &Path) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("name: must be non-empty"));
        }
        if self.n_trials == 0 {
            return Err(Error::config("n_trials: must be >= 1"));
        }
        if self.n_per_class == 0 {
            return Err(Error::config("n_per_class: must be >= 1"));
        }
        if self.per_caption_top_k == 0 {
            return Err(Error::config("per_caption_top_k: must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.support_threshold) {
            return Err(Error::config("support_threshold: must be in [0,1]"));
        }
        self.attack.validate()?;
        self.target.train.validate()?;
        self.evaluation.train.validate()?;
        self.proxy.train.validate()?;
        if self.target.arch.family == self.evaluation.arch.family {
            return Err(Error::config(
                "evaluation.arch: must use a different family than target.arch",
            ));
        }
        match (&self.gan.train, &self.gan.checkpoint) {
            (None, None) => {
                return Err(Error::config(
                    "gan: provide either gan.train or gan.checkpoint",
                ))
            }
            (Some(t), None) => t.validate()?,
            (None, Some(path)) => {
                let resolved = resolve_path(config_dir, path);
                if !resolved.join("meta.json").is_file() {
                    return Err(Error::config(format!(
                        "gan.checkpoint: {} has no meta.json",
                        resolved.display()
                    )));
                }
            }
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "gan: gan.train and gan.checkpoint are mutually exclusive",
                ))
            }
        }
        if let LabelLossMode::Decoy(labels) = &self.label_loss {
            if labels.is_empty() {
                return Err(Error::config("label_loss.labels: decoy list is empty"));
            }
        }
        for (field, path) in [
            ("datasets.target_train", &self.datasets.target_train),
            ("datasets.target_test", &self.datasets.target_test),
            ("datasets.public", &self.datasets.public),
        ] {
            if !resolve_path(config_dir, path).is_dir() {
                return Err(Error::config(format!(
                    "{field}: {} is not a readable directory",
                    path.display()
                )));
            }
        }
        if let Some(path) = &self.datasets.evaluation_train {
            if !resolve_path(config_dir, path).is_dir() {
                return Err(Error::config(format!(
                    "datasets.evaluation_train: {} is not a readable directory",
                    path.display()
                )));
            }
        }
        if let Some(nm) = &self.datasets.nearmiss {
            if nm.version != 1 {
                return Err(Error::Unsupported(
                    "datasets.nearmiss.version: only version 1 is implemented".into(),
                ));
            }
            if nm.neighbors == 0 {
                return Err(Error::config("datasets.nearmiss.neighbors: must be >= 1"));
            }
        }
        // output root must be creatable and writable before any stage runs
        let out = resolve_path(config_dir, &self.output_root);
        std::fs::create_dir_all(&out).map_err(|e| {
            Error::config(format!("output_root: cannot create {}: {e}", out.display()))
        })?;
        let probe = out.join(".write-probe");
        std::fs::write(&probe, b"probe")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| {
                Error::config(format!("output_root: {} not writable: {e}", out.display()))
            })?;
        Ok(())
    }
}

/// Paths in a config file resolve relative to the file's directory.
pub fn resolve_path(config_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        config_dir.join(path)
    }
}

/// A config file holds either one experiment or a sweep (JSON array).
#[derive(Debug, Clone)]
pub enum ConfigFile {
    Single(Box<ExperimentConfig>),
    Sweep(Vec<ExperimentConfig>),
}

impl ConfigFile {
    pub fn cells(self) -> Vec<ExperimentConfig> {
        match self {
            ConfigFile::Single(c) => vec![*c],
            ConfigFile::Sweep(cs) => cs,
        }
    }
}

/// Parse and validate a config file. Schema violations are reported with
/// their JSON field path; unknown keys are errors.
pub fn validate_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    let config_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;

    let parsed = if value.is_array() {
        let mut track = serde_json::Deserializer::from_str(&text);
        let cells: Vec<ExperimentConfig> = serde_path_to_error::deserialize(&mut track)
            .map_err(|e| Error::config(format!("config field `{}`: {}", e.path(), e.inner())))?;
        if cells.is_empty() {
            return Err(Error::config("sweep config array is empty"));
        }
        ConfigFile::Sweep(cells)
    } else {
        let mut track = serde_json::Deserializer::from_str(&text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(&mut track)
            .map_err(|e| Error::config(format!("config field `{}`: {}", e.path(), e.inner())))?;
        ConfigFile::Single(Box::new(config))
    };

    for config in match &parsed {
        ConfigFile::Single(c) => std::slice::from_ref(c.as_ref()),
        ConfigFile::Sweep(cs) => cs.as_slice(),
    } {
        config.validate_semantics(&config_dir)?;
    }
    Ok(parsed)
}
