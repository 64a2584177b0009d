//! Turns backend spec strings into configured clients.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use gramprompt::corpus::MinimalPair;
use gramprompt::llm::{
    HttpBackend, HttpConfig, LlmClient, MockBackend, MockPolicy, Provider, ReplayBackend, RetryPolicy,
};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    MockOracle { p: f64, seed: u64 },
    /// A [`MockPolicy`] JSON file.
    Scripted(PathBuf),
    /// A transcript file or a runs directory.
    Replay(PathBuf),
    Live(Provider),
}

impl std::str::FromStr for BackendSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("mock-oracle") {
            let mut p = None;
            let mut seed = 0u64;
            for part in rest.trim_start_matches(':').split(',').filter(|x| !x.is_empty()) {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| anyhow!("expected key=value in `{part}`"))?;
                match k.trim() {
                    "p" => p = Some(v.trim().parse::<f64>().context("oracle accuracy")?),
                    "seed" => seed = v.trim().parse().context("oracle seed")?,
                    other => return Err(anyhow!("unknown mock-oracle option `{other}`")),
                }
            }
            let p = p.ok_or_else(|| anyhow!("mock-oracle needs p=<accuracy>"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(anyhow!("oracle accuracy {p} is outside [0, 1]"));
            }
            return Ok(BackendSpec::MockOracle { p, seed });
        }
        if let Some(path) = s.strip_prefix("scripted:") {
            return Ok(BackendSpec::Scripted(path.into()));
        }
        if let Some(path) = s.strip_prefix("replay:") {
            return Ok(BackendSpec::Replay(path.into()));
        }
        match s {
            "openai" => Ok(BackendSpec::Live(Provider::Openai)),
            "anthropic" => Ok(BackendSpec::Live(Provider::Anthropic)),
            other => Err(anyhow!(
                "unknown backend `{other}` (expected mock-oracle:p=<x>, scripted:<file>, replay:<path>, openai or anthropic)"
            )),
        }
    }
}

/// Resolves the backend for `label`: the `--backend` override, then the
/// model's route, then `default_backend`.
pub fn spec_for(cfg: &RunConfig, label: &str, cli_override: Option<&str>) -> Result<BackendSpec, CliError> {
    let raw = cli_override
        .map(str::to_string)
        .or_else(|| cfg.models.get(label).and_then(|r| r.backend.clone()))
        .or_else(|| cfg.default_backend.clone())
        .ok_or_else(|| CliError::usage(anyhow!("no backend configured for model `{label}`")))?;
    raw.parse().map_err(CliError::usage)
}

/// Builds a client. `pairs` feed the mock oracle's answer key.
pub fn client_for(
    cfg: &RunConfig,
    label: &str,
    spec: &BackendSpec,
    pairs: &[MinimalPair],
) -> Result<LlmClient, CliError> {
    match spec {
        BackendSpec::MockOracle { p, seed } => {
            let backend = MockBackend::new(MockPolicy::oracle(*p, *seed), pairs).map_err(|e| CliError::usage(anyhow!(e)))?;
            Ok(LlmClient::new(Arc::new(backend)))
        }
        BackendSpec::Scripted(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read scripted policy {}", path.display()))
                .map_err(CliError::usage)?;
            let policy: MockPolicy = serde_json::from_str(&text)
                .with_context(|| format!("invalid scripted policy {}", path.display()))
                .map_err(CliError::usage)?;
            let backend = MockBackend::new(policy, pairs).map_err(|e| CliError::usage(anyhow!(e)))?;
            Ok(LlmClient::new(Arc::new(backend)))
        }
        BackendSpec::Replay(path) => {
            let backend = ReplayBackend::load(path)
                .with_context(|| format!("cannot load transcripts from {}", path.display()))
                .map_err(CliError::data)?;
            Ok(LlmClient::new(Arc::new(backend)))
        }
        BackendSpec::Live(provider) => {
            let settings = cfg.providers.get(provider).cloned().unwrap_or_default();
            let http = HttpConfig {
                provider: *provider,
                base_url: settings.base_url.clone(),
                api_key_env: settings.api_key_env.clone(),
                model: cfg.models.get(label).and_then(|r| r.model.clone()),
                timeout_secs: settings.timeout_secs,
            };
            let backend = HttpBackend::new(http)?;
            Ok(LlmClient::new(Arc::new(backend))
                .with_retry(RetryPolicy {
                    max_retries: settings.max_retries,
                    ..RetryPolicy::default()
                })
                .with_rate_limit(settings.rate_limit_per_minute))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        assert_eq!(
            "mock-oracle:p=0.8".parse::<BackendSpec>().unwrap(),
            BackendSpec::MockOracle { p: 0.8, seed: 0 }
        );
        assert_eq!(
            "mock-oracle:p=1,seed=7".parse::<BackendSpec>().unwrap(),
            BackendSpec::MockOracle { p: 1.0, seed: 7 }
        );
        assert_eq!(
            "replay:runs".parse::<BackendSpec>().unwrap(),
            BackendSpec::Replay("runs".into())
        );
        assert!("mock-oracle:p=1.5".parse::<BackendSpec>().is_err());
        assert!("mock-oracle".parse::<BackendSpec>().is_err());
        assert!("gemini".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn missing_key_is_usage_error() {
        let mut cfg = RunConfig::default();
        cfg.providers.insert(
            Provider::Openai,
            crate::config::ProviderSettings {
                api_key_env: Some("GRAMPROMPT_TEST_KEY_THAT_IS_NOT_SET".into()),
                ..Default::default()
            },
        );
        let err = client_for(&cfg, "gpt-4o", &BackendSpec::Live(Provider::Openai), &[]).unwrap_err();
        assert_eq!(err.code, 1);
    }
}
