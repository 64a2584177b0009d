//! The JSON run configuration and its resolution against command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gramprompt::analysis::Group;
use gramprompt::corpus::{SourceFormat, ThresholdMode};
use gramprompt::llm::Provider;
use gramprompt::templates::{Audience, ConditionSpec, DEFAULT_TARGET_WORDS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    pub format: String,
}

impl CorpusSource {
    pub fn source_format(&self) -> Result<SourceFormat, CliError> {
        self.format.parse().map_err(|e: String| CliError::usage(anyhow::anyhow!(e)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    AtMost,
    Below,
}

impl From<ThresholdRule> for ThresholdMode {
    fn from(r: ThresholdRule) -> Self {
        match r {
            ThresholdRule::AtMost => ThresholdMode::AtMost,
            ThresholdRule::Below => ThresholdMode::Below,
        }
    }
}

/// Which paradigms to evaluate. Absent means every paradigm in the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ParadigmSelection {
    List(Vec<String>),
    Challenging {
        /// JSON object mapping paradigm name to baseline accuracy (percent).
        baseline_scores: PathBuf,
        threshold: f64,
        #[serde(default = "default_rule")]
        mode: ThresholdRule,
    },
}

fn default_rule() -> ThresholdRule {
    ThresholdRule::AtMost
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetModel {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
}

/// How to reach one model label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRoute {
    /// Backend spec, e.g. `openai`, `anthropic`, `mock-oracle:p=0.8`,
    /// `scripted:<file>`, `replay:<path>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    /// Provider model id sent over the wire; defaults to the label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_minute: Option<u32>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            base_url: None,
            api_key_env: None,
            rate_limit_per_minute: None,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
        }
    }
}

fn default_retries() -> u32 {
    5
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum HygieneMode {
    Off,
    Warn,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpora: Vec<CorpusSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paradigms: Option<ParadigmSelection>,
    #[serde(default = "default_n")]
    pub per_paradigm_n: usize,
    #[serde(default)]
    pub conditions: Vec<String>,
    /// Generator labels used for explanations.
    #[serde(default)]
    pub generators: Vec<String>,
    #[serde(default = "default_audiences")]
    pub audiences: Vec<Audience>,
    #[serde(default)]
    pub targets: Vec<TargetModel>,
    /// Per-label routing; labels without an entry use `default_backend`.
    #[serde(default)]
    pub models: BTreeMap<String, ModelRoute>,
    #[serde(default)]
    pub providers: BTreeMap<Provider, ProviderSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_seed: Option<u64>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_hygiene")]
    pub hygiene: HygieneMode,
    #[serde(default = "default_target_words")]
    pub target_words: u32,
    /// Directory of template overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
}

fn default_n() -> usize {
    50
}

fn default_audiences() -> Vec<Audience> {
    vec![Audience::Beginner]
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    8
}

fn default_hygiene() -> HygieneMode {
    HygieneMode::Warn
}

fn default_target_words() -> u32 {
    DEFAULT_TARGET_WORDS
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(CliError::usage)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(CliError::usage)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for c in &mut self.corpora {
            fix(&mut c.path);
        }
        if let Some(ParadigmSelection::Challenging { baseline_scores, .. }) = &mut self.paradigms {
            fix(baseline_scores);
        }
        fix(&mut self.cache_dir);
        fix(&mut self.out_dir);
        if let Some(t) = &mut self.templates_dir {
            fix(t);
        }
        for route in self.models.values_mut() {
            if let Some(spec) = &mut route.backend {
                for prefix in ["scripted:", "replay:"] {
                    if let Some(rest) = spec.strip_prefix(prefix) {
                        if Path::new(rest).is_relative() {
                            *spec = format!("{prefix}{}", base.join(rest).display());
                        }
                    }
                }
            }
        }
    }

    pub fn parsed_conditions(&self) -> Result<Vec<ConditionSpec>, CliError> {
        let mut out: Vec<ConditionSpec> = Vec::new();
        for raw in &self.conditions {
            let c: ConditionSpec = raw
                .parse()
                .map_err(|e| CliError::usage(anyhow::anyhow!("condition `{raw}`: {e}")))?;
            if !out.iter().any(|x| x.label() == c.label()) {
                out.push(c);
            }
        }
        Ok(out)
    }

    /// Checks cross-field invariants once flags have been applied.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.per_paradigm_n == 0 {
            return Err(CliError::usage(anyhow::anyhow!("per_paradigm_n must be at least 1")));
        }
        if self.workers == 0 {
            return Err(CliError::usage(anyhow::anyhow!("workers must be at least 1")));
        }
        for c in self.parsed_conditions()? {
            if let Some(g) = &c.explanation_source {
                if !self.generators.contains(g) {
                    return Err(CliError::usage(anyhow::anyhow!(
                        "condition `{}` names generator `{g}`, which is not listed under generators",
                        c.label()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn groups(&self) -> BTreeMap<String, Group> {
        self.targets
            .iter()
            .filter_map(|t| t.group.map(|g| (t.model.clone(), g)))
            .collect()
    }

    /// The generator used for control and textbook explanations.
    pub fn primary_generator(&self) -> anyhow::Result<&str> {
        match self.generators.first() {
            Some(g) => Ok(g),
            None => bail!("control and textbook conditions need at least one generator"),
        }
    }
}

/// Persisted under the output directory so an omitted seed stays stable
/// across invocations.
#[derive(Debug, Serialize, Deserialize)]
struct SeedFile {
    run_seed: u64,
}

/// Fills in `run_seed`: explicit value, else the one persisted in `out_dir`,
/// else a fresh random seed that is then persisted.
pub fn resolve_seed(cfg: &mut RunConfig) -> Result<u64, CliError> {
    let path = cfg.out_dir.join("seed.json");
    if let Some(seed) = cfg.run_seed {
        return Ok(seed);
    }
    if let Ok(text) = fs::read_to_string(&path) {
        let stored: SeedFile = serde_json::from_str(&text)
            .with_context(|| format!("corrupt {}", path.display()))
            .map_err(CliError::data)?;
        cfg.run_seed = Some(stored.run_seed);
        return Ok(stored.run_seed);
    }
    let seed: u64 = rand::random();
    fs::create_dir_all(&cfg.out_dir)
        .and_then(|_| fs::write(&path, serde_json::to_string_pretty(&SeedFile { run_seed: seed })? + "\n"))
        .with_context(|| format!("cannot persist run seed to {}", path.display()))
        .map_err(CliError::data)?;
    log::info!("generated run seed {seed} (saved to {})", path.display());
    cfg.run_seed = Some(seed);
    Ok(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.per_paradigm_n, 50);
        assert_eq!(cfg.audiences, vec![Audience::Beginner]);
        assert_eq!(cfg.hygiene, HygieneMode::Warn);
    }

    #[test]
    fn unknown_generator_is_rejected() {
        let cfg = RunConfig {
            conditions: vec!["gp:son".into()],
            ..Default::default()
        };
        assert_eq!(cfg.validate().unwrap_err().code, 1);
    }

    #[test]
    fn seed_is_persisted_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let first = resolve_seed(&mut a).unwrap();
        let mut b = RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        assert_eq!(resolve_seed(&mut b).unwrap(), first);
    }

    #[test]
    fn shipped_configs_parse_and_validate() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let cfg = RunConfig::load(&root.join("example.json")).unwrap();
        cfg.validate().unwrap();
        let groups = cfg.groups();
        let slm: Vec<&str> = groups.iter().filter(|(_, g)| **g == Group::Slm).map(|(m, _)| m.as_str()).collect();
        let llm: Vec<&str> = groups.iter().filter(|(_, g)| **g == Group::Llm).map(|(m, _)| m.as_str()).collect();
        assert_eq!(slm, ["gpt-3.5", "haiku", "llama"]);
        assert_eq!(llm, ["gpt-4o", "sonnet"]);
        assert_eq!(cfg.parsed_conditions().unwrap().len(), 8);

        let mock = RunConfig::load(&root.join("mock.json")).unwrap();
        mock.validate().unwrap();
    }
}
