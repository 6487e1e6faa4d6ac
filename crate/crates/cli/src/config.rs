//! TOML run configuration and its merge with command-line flags.
//!
//! Precedence is flags, then the config file, then built-in defaults.
//! Relative paths in the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use causal_cog::backend::{BackendDescriptor, BackendKind};
use causal_cog::prompt::{ImageRef, PromptLibrary, PromptTemplate};
use causal_cog::{Error, PipelineConfig, Result, Strategy};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    pub template: Option<PromptTemplate>,
    pub one_shot_image: Option<String>,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub auth_token_env: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub mock_tables: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub n_candidates: Option<usize>,
    pub k: Option<usize>,
    pub strategy: Option<String>,
    pub temperature: Option<f64>,
    pub top_k_sampling: Option<u32>,
    pub max_new_tokens: Option<u32>,
    pub system_prompt_index: Option<usize>,
    pub seed: Option<u64>,
    pub max_parallel: Option<usize>,
    pub cache: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| {
            Error::validation(format!("config {}: {}", path.display(), e.message()))
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn dataset(&self) -> Option<PathBuf> {
        self.dataset.as_deref().map(|p| self.resolve(p))
    }
}

/// Flag values that override the file; `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub backend_kind: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub mock_tables: Option<PathBuf>,
    pub n_candidates: Option<usize>,
    pub k: Option<usize>,
    pub strategy: Option<String>,
    pub temperature: Option<f64>,
    pub top_k_sampling: Option<u32>,
    pub system_prompt_index: Option<usize>,
    pub seed: Option<u64>,
    pub max_parallel: Option<usize>,
    pub no_cache: bool,
    pub timing: bool,
}

pub fn parse_strategy(s: &str) -> Result<Strategy> {
    match s.parse()? {
        Strategy::ExternalWeights => Err(Error::validation(
            "strategy `external` needs an embedding weigher and is library-only",
        )),
        other => Ok(other),
    }
}

pub fn backend_descriptor(file: &FileConfig, o: &Overrides) -> Result<BackendDescriptor> {
    let b = &file.backend;
    let kind: BackendKind = o
        .backend_kind
        .as_deref()
        .or(b.kind.as_deref())
        .ok_or_else(|| Error::validation("no backend configured; pass --backend-kind"))?
        .parse()?;
    let model = o.model.clone().or_else(|| b.model.clone());
    let mut desc = match kind {
        BackendKind::Mock => {
            let fixture = o
                .mock_tables
                .clone()
                .or_else(|| b.mock_tables.as_deref().map(|p| file.resolve(p)))
                .ok_or_else(|| Error::validation("mock backend needs --mock-tables"))?;
            let mut d = BackendDescriptor::mock(fixture);
            if let Some(m) = model {
                d.model_name = m;
            }
            d
        }
        _ => {
            let endpoint = o
                .endpoint
                .clone()
                .or_else(|| b.endpoint.clone())
                .ok_or_else(|| Error::validation("network backends need --endpoint"))?;
            let model = model.ok_or_else(|| Error::validation("network backends need --model"))?;
            BackendDescriptor::network(kind, endpoint, model)
        }
    };
    if let Some(env) = &b.auth_token_env {
        desc.auth_token_env = Some(env.clone());
    }
    if let Some(t) = b.timeout_secs {
        desc.timeout_secs = t;
    }
    if let Some(r) = b.max_retries {
        desc.max_retries = r;
    }
    desc.validate()?;
    Ok(desc)
}

pub fn pipeline_config(file: &FileConfig, o: &Overrides) -> Result<PipelineConfig> {
    let p = &file.pipeline;
    let mut c = PipelineConfig::default();
    if let Some(n) = o.n_candidates.or(p.n_candidates) {
        c.n_candidates = n;
    }
    if let Some(k) = o.k.or(p.k) {
        c.aggregation.k = k;
    }
    if let Some(s) = o.strategy.as_deref().or(p.strategy.as_deref()) {
        c.aggregation.strategy = parse_strategy(s)?;
    }
    if let Some(t) = o.temperature.or(p.temperature) {
        c.sampling.temperature = t;
    }
    if let Some(k) = o.top_k_sampling.or(p.top_k_sampling) {
        c.sampling.top_k = k;
    }
    if let Some(m) = p.max_new_tokens {
        c.sampling.max_new_tokens = m;
    }
    if let Some(i) = o.system_prompt_index.or(p.system_prompt_index) {
        c.system_prompt_index = i;
    }
    if let Some(s) = o.seed.or(p.seed) {
        c.base_seed = s;
    }
    if let Some(m) = o.max_parallel.or(p.max_parallel) {
        c.max_parallel = m;
    }
    if let Some(cache) = p.cache {
        c.cache_enabled = cache;
    }
    if o.no_cache {
        c.cache_enabled = false;
    }
    if let Some(t) = &file.template {
        c.template = t.clone();
    }
    c.record_timing = o.timing;
    c.validate()?;
    Ok(c)
}

pub fn prompt_library(file: &FileConfig) -> Result<PromptLibrary> {
    let lib = PromptLibrary::default();
    Ok(match &file.one_shot_image {
        Some(raw) => lib.with_one_shot_image(ImageRef::parse(raw, Some(&file.base_dir))?),
        None => lib,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> FileConfig {
        let mut f: FileConfig = toml::from_str(text).unwrap();
        f.base_dir = PathBuf::from("/cfg");
        f
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let f = file("[pipeline]\nn_candidates = 5\nk = 3\nstrategy = \"unweighted\"\n");
        let o = Overrides {
            k: Some(2),
            ..Default::default()
        };
        let c = pipeline_config(&f, &o).unwrap();
        assert_eq!(c.n_candidates, 5);
        assert_eq!(c.aggregation.k, 2);
        assert_eq!(c.aggregation.strategy, Strategy::UnweightedVote);
        assert_eq!(c.sampling.temperature, 0.9);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let f =
            file("dataset = \"d.jsonl\"\n[backend]\nkind = \"mock\"\nmock_tables = \"t.json\"\n");
        assert_eq!(f.dataset(), Some(PathBuf::from("/cfg/d.jsonl")));
        let d = backend_descriptor(&f, &Overrides::default()).unwrap();
        assert_eq!(d.fixture, Some(PathBuf::from("/cfg/t.json")));
    }

    #[test]
    fn backend_requirements() {
        let none = file("");
        assert!(backend_descriptor(&none, &Overrides::default()).is_err());
        let o = Overrides {
            backend_kind: Some("http_shim".into()),
            endpoint: Some("http://localhost:8000".into()),
            ..Default::default()
        };
        assert!(backend_descriptor(&none, &o).is_err());
        let o = Overrides {
            model: Some("m".into()),
            ..o
        };
        assert_eq!(
            backend_descriptor(&none, &o).unwrap().kind,
            BackendKind::HttpShim
        );
    }

    #[test]
    fn unknown_keys_and_external_strategy_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[pipeline]\nn = 3\n").is_err());
        assert!(parse_strategy("external").is_err());
        assert!(parse_strategy("tie-c").is_ok());
    }
}
