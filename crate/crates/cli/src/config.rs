//! Run configuration: TOML file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use graphif::backend::{ChatBackend, HttpBackend, HttpConfig, RetryPolicy, SamplingConfig, ScriptedBackend};
use graphif::pipeline::{PipelineConfig, PipelineMode};
use graphif::prompt::TemplateSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub fixtures: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub send_top_k: bool,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
}

impl EndpointConfig {
    pub fn is_configured(&self) -> bool {
        self.fixtures.is_some() || self.base_url.is_some()
    }

    pub fn build(&self) -> Result<Arc<dyn ChatBackend>> {
        if let Some(dir) = &self.fixtures {
            let b = ScriptedBackend::from_dir(dir)
                .with_context(|| format!("loading scripted fixtures from {}", dir.display()))?;
            if b.is_empty() {
                bail!("fixture directory {} holds no script entries", dir.display());
            }
            return Ok(Arc::new(b));
        }
        let (Some(base_url), Some(model)) = (&self.base_url, &self.model) else {
            bail!("no backend configured: pass --fixtures DIR, or --base-url URL together with --model NAME");
        };
        let mut http = HttpConfig { base_url: base_url.clone(), model: model.clone(), send_top_k: self.send_top_k, ..HttpConfig::default() };
        if let Some(t) = self.timeout_secs {
            http.timeout_secs = t;
        }
        if let Some(r) = self.max_retries {
            http.retry = RetryPolicy { max_retries: r, ..RetryPolicy::default() };
        }
        Ok(Arc::new(HttpBackend::new(http)))
    }
}

/// Contents of `--config FILE`. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<PipelineMode>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub passes: Option<u32>,
    pub parallel: Option<usize>,
    pub seed: Option<u64>,
    pub templates_dir: Option<PathBuf>,
    pub backend: EndpointConfig,
    pub judge: EndpointConfig,
    pub sampling: Option<SamplingConfig>,
    pub pipeline: Option<PipelineConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings for `run` and `chat`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: PipelineMode,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub passes: u32,
    pub parallel: usize,
    pub seed: Option<u64>,
    pub templates_dir: Option<PathBuf>,
    pub backend: EndpointConfig,
    pub sampling: SamplingConfig,
    pub pipeline: PipelineConfig,
}

/// Flag values; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<PipelineMode>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub passes: Option<u32>,
    pub parallel: Option<usize>,
    pub seed: Option<u64>,
    pub fixtures: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub max_iterations: Option<u32>,
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self> {
        let mut backend = file.backend;
        if flags.fixtures.is_some() || flags.base_url.is_some() {
            backend.fixtures = flags.fixtures;
            backend.base_url = flags.base_url.or(backend.base_url);
        }
        if flags.model.is_some() {
            backend.model = flags.model;
        }
        let mut pipeline = file.pipeline.unwrap_or_default();
        if let Some(n) = flags.max_iterations {
            pipeline.agent.max_iterations = n;
        }
        let seed = flags.seed.or(file.seed);
        let mut sampling = file.sampling.unwrap_or_default();
        if seed.is_some() {
            sampling.seed = seed;
        }
        let cfg = Self {
            mode: flags.mode.or(file.mode).unwrap_or_default(),
            dataset: flags.dataset.or(file.dataset),
            out: flags.out.or(file.out),
            passes: flags.passes.or(file.passes).unwrap_or(1),
            parallel: flags.parallel.or(file.parallel).unwrap_or(1),
            seed,
            templates_dir: file.templates_dir,
            backend,
            sampling,
            pipeline,
        };
        if cfg.passes == 0 {
            bail!("passes must be >= 1");
        }
        if cfg.parallel == 0 {
            bail!("parallel must be >= 1");
        }
        cfg.pipeline.agent.validate().map_err(anyhow::Error::msg)?;
        cfg.sampling.validate()?;
        Ok(cfg)
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::with_overrides(dir)
                .with_context(|| format!("loading template overrides from {}", dir.display())),
            None => Ok(TemplateSet::builtin()),
        }
    }
}
