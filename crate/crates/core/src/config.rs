//! Run configuration: a JSON file whose relative paths are resolved against
//! the file's own directory, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregator::ScoreMode;
use crate::eval::EvalMetric;
use crate::prompting::parse_template;
use crate::verbalizer::{KeywordResolution, LabelSpec, SimilarityMetric, WeightScheme};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("{what} not found: {path}")]
    FileNotFound { what: &'static str, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

/// Post-hoc whitening of a contextual embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhiteningConfig {
    /// `|V| x d` tensor of contextual token embeddings.
    pub contextual: PathBuf,
    /// Pre-fitted transform from `whiten-fit`; fitted on the fly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<PathBuf>,
}

/// An alternative prompt run, evaluated alongside the main one so results can
/// be reported as a mean with standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateVariant {
    pub name: String,
    pub template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default)]
    pub classes: Vec<LabelSpec>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub metric: SimilarityMetric,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub mode: ScoreMode,
    #[serde(default)]
    pub keyword_resolution: KeywordResolution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subword_splits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitening: Option<WhiteningConfig>,
    #[serde(default)]
    pub eval_metric: EvalMetric,
    #[serde(default = "default_positive_class")]
    pub positive_class: usize,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retries: usize,
    /// Export manifests whose checksums must match before anything runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub export_manifests: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<TemplateVariant>,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_positive_class() -> usize {
    1
}

fn default_parallel() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub k: Option<usize>,
    pub metric: Option<SimilarityMetric>,
    pub weights: Option<WeightScheme>,
    pub mode: Option<ScoreMode>,
    pub parallel: Option<usize>,
    pub backend_url: Option<String>,
}

/// What a command needs from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    /// Vocabulary and static embeddings.
    Neighbors,
    /// Everything above plus dataset, template, and one backend.
    Scoring,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path`; relative paths inside stay as written (see [`RunConfig::resolved`]).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(k) = overrides.k {
            self.k = k;
        }
        if let Some(m) = overrides.metric {
            self.metric = m;
        }
        if let Some(w) = overrides.weights {
            self.weights = w;
        }
        if let Some(m) = overrides.mode {
            self.mode = m;
        }
        if let Some(p) = overrides.parallel {
            self.parallel = p;
        }
        if let Some(url) = &overrides.backend_url {
            self.backend_url = Some(url.clone());
            self.logits = None;
            self.manifest = None;
        }
    }

    /// Copy with every relative path joined onto `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let join = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
        let mut out = self.clone();
        out.vocab = join(&self.vocab);
        out.embeddings = join(&self.embeddings);
        out.logits = join(&self.logits);
        out.manifest = join(&self.manifest);
        out.dataset = join(&self.dataset);
        out.subword_splits = join(&self.subword_splits);
        out.whitening = self.whitening.as_ref().map(|w| WhiteningConfig {
            contextual: base.join(&w.contextual),
            transform: join(&w.transform),
        });
        out.export_manifests = self.export_manifests.iter().map(|p| base.join(p)).collect();
        out.variants = self
            .variants
            .iter()
            .map(|v| TemplateVariant {
                logits: join(&v.logits),
                manifest: join(&v.manifest),
                ..v.clone()
            })
            .collect();
        out
    }

    /// Checks every setting `requirement` depends on without reading file
    /// contents beyond existence.
    pub fn validate(&self, requirement: Requirement) -> Result<()> {
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.parallel == 0 {
            return Err(ConfigError::Invalid("parallel must be at least 1".into()));
        }
        existing("vocab", required(&self.vocab, "vocab")?)?;
        existing("embeddings", required(&self.embeddings, "embeddings")?)?;
        if let Some(s) = &self.subword_splits {
            existing("subword_splits", s)?;
        }
        if let Some(w) = &self.whitening {
            existing("whitening.contextual", &w.contextual)?;
            if let Some(t) = &w.transform {
                existing("whitening.transform", t)?;
            }
        }
        for m in &self.export_manifests {
            existing("export manifest", m)?;
        }
        for class in &self.classes {
            class
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("class {:?}: {e}", class.class_name)))?;
        }
        if requirement == Requirement::Neighbors {
            return Ok(());
        }

        existing("dataset", required(&self.dataset, "dataset")?)?;
        let template = required(&self.template, "template")?;
        parse_template(template)
            .map_err(|e| ConfigError::Invalid(format!("template {template:?}: {e}")))?;
        self.validate_backend(self.logits.as_ref(), self.manifest.as_ref())?;
        let mut names = std::collections::HashSet::new();
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate variant name {:?}", v.name)));
            }
            parse_template(&v.template)
                .map_err(|e| ConfigError::Invalid(format!("variant {:?}: {e}", v.name)))?;
            if self.backend_url.is_none() || v.logits.is_some() || v.manifest.is_some() {
                self.validate_backend(v.logits.as_ref(), v.manifest.as_ref())?;
            }
        }
        Ok(())
    }

    fn validate_backend(&self, logits: Option<&PathBuf>, manifest: Option<&PathBuf>) -> Result<()> {
        match (logits, manifest, &self.backend_url) {
            (Some(l), Some(m), None) => {
                existing("logits", l)?;
                existing("manifest", m)?;
                Ok(())
            }
            (None, None, Some(url)) => {
                if url.starts_with("http://") || url.starts_with("https://") {
                    Ok(())
                } else {
                    Err(ConfigError::Invalid(format!(
                        "backend_url must be http(s), got {url:?}"
                    )))
                }
            }
            (Some(_), None, None) => Err(ConfigError::Missing("manifest")),
            (None, Some(_), None) => Err(ConfigError::Missing("logits")),
            (None, None, None) => Err(ConfigError::Invalid(
                "no backend configured: set logits + manifest or backend_url".into(),
            )),
            _ => Err(ConfigError::Invalid(
                "configure exactly one backend: logits + manifest or backend_url".into(),
            )),
        }
    }
}

fn required<'a, T>(value: &'a Option<T>, name: &'static str) -> Result<&'a T> {
    value.as_ref().ok_or(ConfigError::Missing(name))
}

fn existing(what: &'static str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::FileNotFound {
            what,
            path: path.to_path_buf(),
        })
    }
}
