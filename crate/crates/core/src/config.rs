//! Run configuration files (TOML or JSON) and the harness they describe.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::backend::mock::MockSpec;
use crate::backend::{
    BackendDescriptor, BackendError, BackendKind, ChatBackend, DecodingParams, HttpBackend,
    MockBackend, RecordStore, ReplayBackend, RetryPolicy,
};
use crate::corpus::{self, CorpusError, Dataset, DatasetFormat, FieldMap, Language, LoadOptions};
use crate::evaluator::UnparseablePolicy;
use crate::orchestrator::Harness;
use crate::prompt::{self, PromptError, RoleMode, Strategy, TemplateSet, TemplateWarning};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("dataset {name}: {source}")]
    Dataset {
        name: String,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn default_seed() -> u64 {
    42
}

fn default_languages() -> Vec<Language> {
    Language::ALL.to_vec()
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub policy: UnparseablePolicy,
    /// Template directory; the bundled templates are used when absent.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default = "default_languages")]
    pub prompt_languages: Vec<Language>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub role_mode: RoleMode,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    /// Restricts the plan to these backend names.
    #[serde(default)]
    pub only_backends: Option<Vec<String>>,
    /// Restricts the plan to these dataset names.
    #[serde(default)]
    pub only_datasets: Option<Vec<String>>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            sample_size: None,
            policy: UnparseablePolicy::default(),
            prompts_dir: None,
            prompt_languages: default_languages(),
            strategies: default_strategies(),
            role_mode: RoleMode::default(),
            backends: Vec::new(),
            datasets: Vec::new(),
            only_backends: None,
            only_datasets: None,
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    /// Model identifier sent to the endpoint; defaults to `name`.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub endpoint: Option<Url>,
    #[serde(default)]
    pub max_inflight: Option<usize>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_new_tokens: Option<u32>,
    #[serde(default)]
    pub analysis_max_new_tokens: Option<u32>,
    #[serde(default)]
    pub context_budget_tokens: Option<u32>,
    /// Response cache file. Required for `replay`; for `http` and `mock`
    /// new responses are recorded into it and cached ones replayed.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub mock: Option<MockSpec>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub max_attempts: Option<u32>,
}

impl BackendConfig {
    pub fn mock(name: &str, spec: MockSpec) -> BackendConfig {
        BackendConfig {
            name: name.to_string(),
            kind: BackendKind::Mock,
            model: None,
            endpoint: None,
            max_inflight: None,
            temperature: None,
            max_new_tokens: None,
            analysis_max_new_tokens: None,
            context_budget_tokens: None,
            cache: None,
            mock: Some(spec),
            timeout_secs: None,
            max_attempts: None,
        }
    }

    pub fn model_name(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.name)
    }

    pub fn descriptor(&self) -> Result<BackendDescriptor, BackendError> {
        let mut d = BackendDescriptor::new(&self.name, self.kind, self.model_name());
        d.endpoint_url = self.endpoint.clone();
        let defaults = DecodingParams::default();
        d.decoding = DecodingParams {
            temperature: self.temperature.unwrap_or(defaults.temperature),
            max_new_tokens: self.max_new_tokens.unwrap_or(defaults.max_new_tokens),
            context_budget_tokens: self
                .context_budget_tokens
                .unwrap_or(defaults.context_budget_tokens),
        };
        if let Some(n) = self.analysis_max_new_tokens {
            d.analysis_max_new_tokens = n;
        }
        if let Some(k) = self.max_inflight {
            d.max_inflight = k;
        }
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeSources {
    pub satire: PathBuf,
    pub nonsatire: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// A single labelled file; mutually exclusive with `merge`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Two single-class files combined into one dataset.
    #[serde(default)]
    pub merge: Option<MergeSources>,
    #[serde(default)]
    pub language: Option<Language>,
    /// `jsonl` or `csv`; inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<String>,
    /// Column mapping, e.g. `text=body,label=is_satire`.
    #[serde(default)]
    pub map: Option<String>,
}

impl DatasetConfig {
    pub fn jsonl(name: &str, path: impl Into<PathBuf>, language: Language) -> DatasetConfig {
        DatasetConfig {
            name: name.to_string(),
            path: Some(path.into()),
            merge: None,
            language: Some(language),
            format: None,
            map: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub prompts_dir: Option<PathBuf>,
    pub endpoint: Option<Url>,
    pub model: Option<String>,
    pub max_inflight: Option<usize>,
    pub seed: Option<u64>,
    pub sample_size: Option<usize>,
    pub policy: Option<UnparseablePolicy>,
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file; other extensions are tried as TOML.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        if !path.is_file() {
            return Err(ConfigError::NotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut config: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        }
        .map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        config.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(config)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(dir) = &o.prompts_dir {
            // Command-line paths are relative to the working directory.
            self.prompts_dir = Some(std::path::absolute(dir).unwrap_or_else(|_| dir.clone()));
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.sample_size {
            self.sample_size = Some(n);
        }
        if let Some(p) = o.policy {
            self.policy = p;
        }
        if let Some(url) = &o.endpoint {
            let mut applied = false;
            for b in self
                .backends
                .iter_mut()
                .filter(|b| b.kind == BackendKind::Http)
            {
                b.endpoint = Some(url.clone());
                applied = true;
            }
            if !applied {
                return Err(ConfigError::Invalid(
                    "--endpoint given but no http backend is configured".into(),
                ));
            }
        }
        if let Some(model) = &o.model {
            if self.backends.len() != 1 {
                return Err(ConfigError::Invalid(
                    "--model needs exactly one configured backend".into(),
                ));
            }
            self.backends[0].model = Some(model.clone());
        }
        if let Some(k) = o.max_inflight {
            for b in &mut self.backends {
                b.max_inflight = Some(k);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.backends.is_empty() {
            return Err(ConfigError::Invalid("no backends configured".into()));
        }
        if self.datasets.is_empty() {
            return Err(ConfigError::Invalid("no datasets configured".into()));
        }
        for b in &self.backends {
            b.descriptor()?;
            match b.kind {
                BackendKind::Replay if b.cache.is_none() => {
                    return Err(ConfigError::Invalid(format!(
                        "{}: replay backend needs a cache file",
                        b.name
                    )))
                }
                BackendKind::Mock if b.mock.is_none() => {
                    return Err(ConfigError::Invalid(format!(
                        "{}: mock backend needs a [mock] rule",
                        b.name
                    )))
                }
                _ => {}
            }
        }
        for d in &self.datasets {
            if d.path.is_some() == d.merge.is_some() {
                return Err(ConfigError::Invalid(format!(
                    "dataset {}: give exactly one of `path` or `merge`",
                    d.name
                )));
            }
        }
        Ok(())
    }

    /// Loads templates, datasets and backends into an executable harness.
    pub fn build(&self) -> Result<(Harness, Vec<TemplateWarning>), ConfigError> {
        self.validate()?;
        let (templates, warnings) = match &self.prompts_dir {
            Some(dir) => prompt::load_templates(&self.resolve(dir))?,
            None => {
                let t = TemplateSet::bundled();
                let w = t.verbatim_warnings();
                (t, w)
            }
        };
        let mut harness = Harness::new(templates, self.role_mode);
        for b in &self.backends {
            let descriptor = b.descriptor()?;
            let client = self.client(b, &descriptor)?;
            harness.add_backend(descriptor, client);
        }
        for d in &self.datasets {
            harness.add_dataset(self.load_dataset(d)?);
        }
        Ok((harness, warnings))
    }

    fn client(
        &self,
        b: &BackendConfig,
        d: &BackendDescriptor,
    ) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        let live: Option<Arc<dyn ChatBackend>> = match b.kind {
            BackendKind::Http => {
                let url = d.endpoint_url.as_ref().expect("validated");
                let mut http = HttpBackend::new(url, d.max_inflight);
                if let Some(s) = b.timeout_secs {
                    http = http.with_timeout(Duration::from_secs(s));
                }
                if let Some(n) = b.max_attempts {
                    http = http.with_retry(RetryPolicy {
                        max_attempts: n.max(1),
                        ..RetryPolicy::default()
                    });
                }
                Some(Arc::new(http))
            }
            BackendKind::Mock => Some(Arc::new(MockBackend::from_spec(
                b.mock.as_ref().expect("validated"),
            ))),
            BackendKind::Replay => None,
        };
        let Some(cache) = &b.cache else {
            return Ok(live.expect("replay requires a cache"));
        };
        let store = Arc::new(RecordStore::open(&self.resolve(cache))?);
        Ok(match live {
            Some(inner) => Arc::new(ReplayBackend::recording(store, inner)),
            None => Arc::new(ReplayBackend::strict(store)),
        })
    }

    fn load_dataset(&self, d: &DatasetConfig) -> Result<Dataset, ConfigError> {
        let wrap = |source| ConfigError::Dataset {
            name: d.name.clone(),
            source,
        };
        let fields = match &d.map {
            Some(m) => m.parse::<FieldMap>().map_err(wrap)?,
            None => FieldMap::default(),
        };
        let load = |path: &Path, name: String| -> Result<Dataset, ConfigError> {
            let path = self.resolve(path);
            let format = match &d.format {
                Some(f) => f.parse::<DatasetFormat>().map_err(wrap)?,
                None => DatasetFormat::from_path(&path),
            };
            let options = LoadOptions {
                name: Some(name),
                language: d.language,
                fields: fields.clone(),
            };
            let outcome = corpus::load_dataset(&path, format, &options).map_err(wrap)?;
            for e in &outcome.rejected {
                log::warn!("{}: {}: {e}", d.name, path.display());
            }
            Ok(outcome.dataset)
        };
        match (&d.path, &d.merge) {
            (Some(p), None) => load(p, d.name.clone()),
            (None, Some(m)) => {
                let sat = load(&m.satire, format!("{}-satire", d.name))?;
                let non = load(&m.nonsatire, format!("{}-nonsatire", d.name))?;
                corpus::merge_balanced(&sat, &non, &d.name).map_err(wrap)
            }
            _ => Err(ConfigError::Invalid(format!(
                "dataset {}: give exactly one of `path` or `merge`",
                d.name
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
seed = 7
sample_size = 4
policy = "exclude"
prompt_languages = ["en"]
strategies = ["zero-shot", "cot"]

[[backends]]
name = "jais"
kind = "mock"
max_inflight = 2
mock = { rule = "marker", marker = "MARK" }

[[datasets]]
name = "tiny"
path = "tiny.jsonl"
language = "en"
"#;

    fn write_fixture(dir: &Path) {
        let lines: String = (0..6)
            .map(|i| {
                format!(
                    "{{\"id\":\"t{i}\",\"text\":\"story {i}{}\",\"label\":{}}}\n",
                    if i % 2 == 0 { " MARK" } else { "" },
                    i % 2
                )
            })
            .collect();
        std::fs::write(dir.join("tiny.jsonl"), lines).unwrap();
    }

    #[test]
    fn toml_config_builds_and_plans() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let path = dir.path().join("run.toml");
        std::fs::write(&path, TOML).unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.policy, UnparseablePolicy::Exclude);
        let (harness, _) = config.build().unwrap();
        assert_eq!(harness.dataset("tiny").unwrap().len(), 6);
        let plan = crate::orchestrator::plan(&config).unwrap();
        assert_eq!(plan.cells.len(), 2);
    }

    #[test]
    fn json_config_is_equivalent() {
        let dir = tempfile::tempdir().unwrap();
        let from_toml: RunConfig = toml::from_str(TOML).unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, serde_json::to_string(&from_toml).unwrap()).unwrap();
        let mut from_json = RunConfig::load(&path).unwrap();
        from_json.base_dir = from_toml.base_dir.clone();
        assert_eq!(from_json, from_toml);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut config: RunConfig = toml::from_str(TOML).unwrap();
        config
            .apply(&Overrides {
                seed: Some(9),
                max_inflight: Some(8),
                model: Some("other".into()),
                policy: Some(UnparseablePolicy::CountAsNegative),
                ..Overrides::default()
            })
            .unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.backends[0].max_inflight, Some(8));
        assert_eq!(config.backends[0].model_name(), "other");
        assert_eq!(config.policy, UnparseablePolicy::CountAsNegative);
        let err = config
            .apply(&Overrides {
                endpoint: Some("http://localhost:1".parse().unwrap()),
                ..Overrides::default()
            })
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn structural_errors() {
        let mut config: RunConfig = toml::from_str(TOML).unwrap();
        config.backends[0].mock = None;
        assert!(config.validate().is_err());
        let mut config: RunConfig = toml::from_str(TOML).unwrap();
        config.datasets[0].path = None;
        assert!(config.validate().is_err());
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
