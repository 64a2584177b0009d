//! Grammar explanations: generation through a generator model, a
//! content-addressed on-disk cache, leak checks and archive export/import.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::corpus::{Dataset, MinimalPair};
use crate::digest::digest_json;
use crate::llm::{ChatRequest, LlmClient, LlmError};
use crate::templates::{
    language_display_name, paradigm_display_name, Audience, InstructionSpec, TemplateError,
    TemplateSet, DEFAULT_TARGET_WORDS,
};

/// Paradigm label of the irrelevant explanation used by the control condition.
pub const CONTROL_PARADIGM: &str = "null_quotative";

static CONTROL_EXAMPLES: &str = include_str!("../data/null_quotative_examples.tsv");

const ARCHIVE_FORMAT: &str = "gramprompt-explanations";

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("generator backend failed: {0}")]
    BackendFailure(#[from] LlmError),
    #[error("generator returned an empty explanation for `{0}`")]
    EmptyResponse(String),
    #[error("cannot read cache {path}")]
    CacheUnreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write cache entry {path}")]
    CacheWrite {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    MalformedArchive {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cache key {0} already present")]
    ImportConflict(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarExplanation {
    pub paradigm: String,
    pub dataset: Dataset,
    pub audience: Audience,
    pub generator_model: String,
    pub template_version: String,
    pub text: String,
    pub token_estimate: u64,
    pub created_at: DateTime<Utc>,
    pub cache_key: String,
}

#[derive(Serialize)]
struct KeyView<'a> {
    dataset: Dataset,
    paradigm: &'a str,
    audience: Audience,
    generator_model: &'a str,
    template_version: &'a str,
}

/// digest(dataset, paradigm, audience, generator_model, template_version)
pub fn cache_key(
    dataset: Dataset,
    paradigm: &str,
    audience: Audience,
    generator_model: &str,
    template_version: &str,
) -> String {
    digest_json(&KeyView {
        dataset,
        paradigm,
        audience,
        generator_model,
        template_version,
    })
}

/// Rough token count (about four characters per token).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

impl GrammarExplanation {
    pub fn new(
        dataset: Dataset,
        paradigm: impl Into<String>,
        audience: Audience,
        generator_model: impl Into<String>,
        template_version: impl Into<String>,
        text: impl Into<String>,
        created_at: DateTime<Utc>,
    ) -> Self {
        let paradigm = paradigm.into();
        let generator_model = generator_model.into();
        let template_version = template_version.into();
        let text = text.into();
        Self {
            cache_key: cache_key(dataset, &paradigm, audience, &generator_model, &template_version),
            token_estimate: estimate_tokens(&text),
            paradigm,
            dataset,
            audience,
            generator_model,
            template_version,
            text,
            created_at,
        }
    }

    /// A beginner explanation with fixed metadata, for tests and examples.
    pub fn for_test(paradigm: &str, text: &str) -> Self {
        Self::new(
            Dataset::Custom,
            paradigm,
            Audience::Beginner,
            "test",
            "v0",
            text,
            DateTime::<Utc>::UNIX_EPOCH,
        )
    }

    fn check(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("empty text".into());
        }
        let expected = cache_key(
            self.dataset,
            &self.paradigm,
            self.audience,
            &self.generator_model,
            &self.template_version,
        );
        if expected != self.cache_key {
            return Err(format!("cache_key {} does not match its fields", self.cache_key));
        }
        Ok(())
    }
}

/// One `<cache_key>.json` file per explanation under a root directory.
///
/// Writes go to a temporary file that is then linked into place without
/// clobbering, so concurrent writers of one key keep whichever landed first.
#[derive(Debug)]
pub struct ExplanationCache {
    root: PathBuf,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ExplanationCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ExplainError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| ExplainError::CacheWrite {
            path: root.clone(),
            source,
        })?;
        Ok(Self {
            root,
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<GrammarExplanation>, ExplainError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| {
                ExplainError::CacheUnreadable {
                    path,
                    source: io::Error::new(io::ErrorKind::InvalidData, e),
                }
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(ExplainError::CacheUnreadable { path, source }),
        }
    }

    /// Stores `explanation` unless its key already exists. Returns the entry
    /// that ends up in the cache, which is the earlier one on a race.
    pub fn put(&self, explanation: &GrammarExplanation) -> Result<GrammarExplanation, ExplainError> {
        let path = self.path_for(&explanation.cache_key);
        let write_err = |source: io::Error| ExplainError::CacheWrite {
            path: path.clone(),
            source,
        };
        let mut tmp = NamedTempFile::new_in(&self.root).map_err(write_err)?;
        let mut bytes = serde_json::to_vec_pretty(explanation).map_err(|e| write_err(e.into()))?;
        bytes.push(b'\n');
        tmp.write_all(&bytes).map_err(write_err)?;
        tmp.as_file().sync_all().map_err(write_err)?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(explanation.clone()),
            Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => {
                log::debug!("cache entry {} written concurrently; keeping the first", explanation.cache_key);
                Ok(self.get(&explanation.cache_key)?.unwrap_or_else(|| explanation.clone()))
            }
            Err(e) => Err(write_err(e.error)),
        }
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(key.to_string()).or_default().clone()
    }

    /// Every cached explanation, sorted by cache key.
    pub fn entries(&self) -> Result<Vec<GrammarExplanation>, ExplainError> {
        let unreadable = |source| ExplainError::CacheUnreadable {
            path: self.root.clone(),
            source,
        };
        let mut keys = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(unreadable)? {
            let path = entry.map_err(unreadable)?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    keys.push(stem.to_string());
                }
            }
        }
        keys.sort();
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            if let Some(e) = self.get(&key)? {
                out.push(e);
            }
        }
        Ok(out)
    }
}

/// Sampling settings for explanation requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub explanation: GrammarExplanation,
    /// False when served from the cache.
    pub fetched: bool,
}

/// Returns the cached explanation for the key, or asks `client` once and
/// stores the reply.
///
/// The generator label doubles as the request's model label. Within one
/// process at most one backend call is made per cache key.
pub fn generate_explanation(
    client: &LlmClient,
    cache: &ExplanationCache,
    templates: &TemplateSet,
    spec: &InstructionSpec,
    paradigm_key: (Dataset, &str),
    generator_model: &str,
    settings: GenerationSettings,
) -> Result<Generated, ExplainError> {
    spec.validate()?;
    let (dataset, paradigm) = paradigm_key;
    let version = templates.version();
    let key = cache_key(dataset, paradigm, spec.audience, generator_model, version);
    let lock = cache.key_lock(&key);
    let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(explanation) = cache.get(&key)? {
        return Ok(Generated {
            explanation,
            fetched: false,
        });
    }
    let prompt = templates.render_instruction(spec);
    let request = ChatRequest::new(
        generator_model,
        None,
        prompt,
        settings.temperature,
        settings.max_output_tokens,
    );
    let response = client.complete(&request)?;
    let text = response.text.trim_end();
    if text.trim().is_empty() {
        return Err(ExplainError::EmptyResponse(paradigm.to_string()));
    }
    let explanation = GrammarExplanation::new(
        dataset,
        paradigm,
        spec.audience,
        generator_model,
        version,
        text,
        Utc::now(),
    );
    let stored = cache.put(&explanation)?;
    Ok(Generated {
        explanation: stored,
        fetched: true,
    })
}

/// Instruction inputs for a corpus paradigm, using `reference` pairs as the
/// examples.
pub fn instruction_for(
    templates: &TemplateSet,
    paradigm: &str,
    language: &str,
    audience: Audience,
    reference: &[MinimalPair],
    target_words: u32,
) -> InstructionSpec {
    InstructionSpec {
        paradigm_display_name: paradigm_display_name(paradigm),
        language_display_name: language_display_name(language),
        audience,
        reference_examples: reference
            .iter()
            .map(|p| (p.good.clone(), p.bad.clone()))
            .collect(),
        target_words,
        template_version: templates.version().to_string(),
    }
}

/// Instruction for the control condition's irrelevant explanation.
pub fn control_instruction(templates: &TemplateSet, audience: Audience) -> InstructionSpec {
    let reference = CONTROL_EXAMPLES
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .filter_map(|l| l.split_once('\t'))
        .map(|(g, b)| (g.to_string(), b.to_string()))
        .collect();
    InstructionSpec {
        paradigm_display_name: paradigm_display_name(CONTROL_PARADIGM),
        language_display_name: language_display_name("en"),
        audience,
        reference_examples: reference,
        target_words: DEFAULT_TARGET_WORDS,
        template_version: templates.version().to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HygieneReport {
    pub leaked_sentences: Vec<String>,
    pub word_count: usize,
    pub passed: bool,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lists every pair sentence that appears verbatim (after whitespace
/// normalization, case-sensitive) in the explanation.
pub fn check_hygiene(explanation: &GrammarExplanation, pairs: &[MinimalPair]) -> HygieneReport {
    let text = normalize_ws(&explanation.text);
    let mut seen = HashSet::new();
    let mut leaked = Vec::new();
    for p in pairs {
        for s in [&p.good, &p.bad] {
            let needle = normalize_ws(s);
            if !needle.is_empty() && text.contains(&needle) && seen.insert(needle.clone()) {
                leaked.push(s.clone());
            }
        }
    }
    HygieneReport {
        passed: leaked.is_empty(),
        word_count: explanation.text.split_whitespace().count(),
        leaked_sentences: leaked,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveHeader {
    format: String,
    version: u32,
    count: usize,
}

/// Writes the cache as JSON Lines: a header record, then one explanation per
/// line sorted by cache key.
pub fn export_explanations<W: Write>(cache: &ExplanationCache, mut out: W) -> Result<usize, ExplainError> {
    let entries = cache.entries()?;
    let write_err = |source: io::Error| ExplainError::CacheWrite {
        path: PathBuf::from("<archive>"),
        source,
    };
    let header = ArchiveHeader {
        format: ARCHIVE_FORMAT.into(),
        version: 1,
        count: entries.len(),
    };
    let mut line = serde_json::to_vec(&header).map_err(|e| write_err(e.into()))?;
    line.push(b'\n');
    out.write_all(&line).map_err(write_err)?;
    for e in &entries {
        let mut line = serde_json::to_vec(e).map_err(|e| write_err(e.into()))?;
        line.push(b'\n');
        out.write_all(&line).map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;
    Ok(entries.len())
}

/// Loads an archive into `cache`. Nothing is written if any record is
/// malformed or collides with an existing or earlier key.
pub fn import_explanations(cache: &ExplanationCache, archive: &Path) -> Result<usize, ExplainError> {
    let file = File::open(archive).map_err(|source| ExplainError::CacheUnreadable {
        path: archive.to_path_buf(),
        source,
    })?;
    let malformed = |line: usize, reason: String| ExplainError::MalformedArchive {
        path: archive.to_path_buf(),
        line,
        reason,
    };
    let mut records: BTreeMap<String, GrammarExplanation> = BTreeMap::new();
    let mut header_seen = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ExplainError::CacheUnreadable {
            path: archive.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            let header: ArchiveHeader =
                serde_json::from_str(&line).map_err(|e| malformed(i + 1, format!("bad header: {e}")))?;
            if header.format != ARCHIVE_FORMAT {
                return Err(malformed(i + 1, format!("unknown archive format `{}`", header.format)));
            }
            header_seen = true;
            continue;
        }
        let e: GrammarExplanation =
            serde_json::from_str(&line).map_err(|err| malformed(i + 1, err.to_string()))?;
        e.check().map_err(|reason| malformed(i + 1, reason))?;
        if records.contains_key(&e.cache_key) || cache.get(&e.cache_key)?.is_some() {
            return Err(ExplainError::ImportConflict(e.cache_key));
        }
        records.insert(e.cache_key.clone(), e);
    }
    if !header_seen {
        return Err(malformed(0, "missing header record".into()));
    }
    for e in records.values() {
        cache.put(e)?;
    }
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{BackendError, BackendKind, ChatBackend, MockBackend, MockPolicy};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
        reply: String,
    }

    impl ChatBackend for Counting {
        fn kind(&self) -> BackendKind {
            BackendKind::Mock
        }
        fn send(&self, _: &ChatRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
    }

    fn pairs() -> Vec<MinimalPair> {
        (0..3)
            .map(|i| MinimalPair {
                id: format!("p:{i}"),
                dataset: Dataset::Blimp,
                language: "en".into(),
                paradigm: "wh_island".into(),
                category: "island effect".into(),
                good: format!("Who did  you see {i}?"),
                bad: format!("Who you did see {i}?"),
            })
            .collect()
    }

    fn spec(t: &TemplateSet) -> InstructionSpec {
        instruction_for(t, "wh_island", "en", Audience::Beginner, &pairs(), 250)
    }

    fn counting(reply: &str) -> (LlmClient, Arc<Counting>) {
        let backend = Arc::new(Counting {
            calls: AtomicUsize::new(0),
            reply: reply.into(),
        });
        (LlmClient::new(backend.clone()), backend)
    }

    #[test]
    fn second_call_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExplanationCache::open(dir.path()).unwrap();
        let t = TemplateSet::bundled();
        let (client, backend) = counting("Rules.  \n\n");
        let key = (Dataset::Blimp, "wh_island");
        let first = generate_explanation(&client, &cache, &t, &spec(&t), key, "son", Default::default()).unwrap();
        assert!(first.fetched);
        assert_eq!(first.explanation.text, "Rules.");
        let second = generate_explanation(&client, &cache, &t, &spec(&t), key, "son", Default::default()).unwrap();
        assert!(!second.fetched);
        assert_eq!(second.explanation, first.explanation);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn generator_label_changes_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExplanationCache::open(dir.path()).unwrap();
        let t = TemplateSet::bundled();
        let (client, backend) = counting("Rules.");
        let key = (Dataset::Blimp, "wh_island");
        let a = generate_explanation(&client, &cache, &t, &spec(&t), key, "sonnet", Default::default()).unwrap();
        let b = generate_explanation(&client, &cache, &t, &spec(&t), key, "o1", Default::default()).unwrap();
        assert_ne!(a.explanation.cache_key, b.explanation.cache_key);
        assert_eq!(cache.entries().unwrap().len(), 2);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn empty_reply_is_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExplanationCache::open(dir.path()).unwrap();
        let t = TemplateSet::bundled();
        let (client, _) = counting(" \n ");
        let err = generate_explanation(&client, &cache, &t, &spec(&t), (Dataset::Blimp, "wh_island"), "son", Default::default())
            .unwrap_err();
        assert!(matches!(err, ExplainError::EmptyResponse(_)));
        assert!(cache.entries().unwrap().is_empty());
    }

    #[test]
    fn put_keeps_first_writer() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExplanationCache::open(dir.path()).unwrap();
        let a = GrammarExplanation::for_test("x", "first");
        let mut b = a.clone();
        b.text = "second".into();
        cache.put(&a).unwrap();
        assert_eq!(cache.put(&b).unwrap().text, "first");
        assert_eq!(cache.get(&a.cache_key).unwrap().unwrap().text, "first");
    }

    #[test]
    fn hygiene_whole_sentences_only() {
        let ps = pairs();
        let leaky = GrammarExplanation::for_test("wh_island", "Watch out: Who you did\nsee 1? is wrong.");
        let report = check_hygiene(&leaky, &ps);
        assert!(!report.passed);
        assert_eq!(report.leaked_sentences, vec![ps[1].bad.clone()]);
        let clean = GrammarExplanation::for_test("wh_island", "Who, did, you and see are words.");
        assert!(check_hygiene(&clean, &ps).passed);
    }

    #[test]
    fn export_import_round_trip() {
        let src_dir = tempfile::tempdir().unwrap();
        let src = ExplanationCache::open(src_dir.path()).unwrap();
        let t = TemplateSet::bundled();
        let mock = MockBackend::new(MockPolicy::oracle(1.0, 1), &[]).unwrap();
        let client = LlmClient::new(Arc::new(mock));
        for audience in [Audience::Beginner, Audience::Expert] {
            let spec = instruction_for(&t, "wh_island", "en", audience, &pairs(), 250);
            generate_explanation(&client, &src, &t, &spec, (Dataset::Blimp, "wh_island"), "son", Default::default())
                .unwrap();
        }
        let mut first = Vec::new();
        assert_eq!(export_explanations(&src, &mut first).unwrap(), 2);
        let archive = src_dir.path().join("archive.jsonl.out");
        fs::write(&archive, &first).unwrap();

        let dst_dir = tempfile::tempdir().unwrap();
        let dst = ExplanationCache::open(dst_dir.path()).unwrap();
        assert_eq!(import_explanations(&dst, &archive).unwrap(), 2);
        let mut second = Vec::new();
        export_explanations(&dst, &mut second).unwrap();
        assert_eq!(first, second);
        assert!(matches!(
            import_explanations(&dst, &archive),
            Err(ExplainError::ImportConflict(_))
        ));
    }

    #[test]
    fn empty_cache_exports_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExplanationCache::open(dir.path()).unwrap();
        let mut out = Vec::new();
        export_explanations(&cache, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains(ARCHIVE_FORMAT));
    }

    #[test]
    fn control_instruction_is_valid() {
        let t = TemplateSet::bundled();
        let spec = control_instruction(&t, Audience::Beginner);
        spec.validate().unwrap();
        assert!(t.render_instruction(&spec).contains("'null quotative'"));
    }
}
