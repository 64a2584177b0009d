//! Minimal-pair corpora: source adapters, the canonical interchange format
//! and the slice/selection rules applied before any model is queried.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use walkdir::WalkDir;

use crate::digest::{sha256_hex, ChunkHasher};

/// Category assigned to paradigms missing from both the source file and the
/// bundled mapping table.
pub const UNCATEGORIZED: &str = "uncategorized";

static BUNDLED_CATEGORIES: &str = include_str!("../data/paradigm_categories.tsv");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("no valid minimal pairs found in {0}")]
    EmptyCorpus(PathBuf),
    #[error("unknown paradigm: {0}")]
    UnknownParadigm(String),
    #[error("per-paradigm slice size must be at least 1")]
    InvalidSliceSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Dataset {
    Blimp,
    Sling,
    Rublimp,
    Custom,
}

impl Dataset {
    /// Language tag of the benchmark's sentences.
    pub fn default_language(self) -> &'static str {
        match self {
            Dataset::Blimp => "en",
            Dataset::Sling => "zh",
            Dataset::Rublimp => "ru",
            Dataset::Custom => "und",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Blimp => "BLIMP",
            Dataset::Sling => "SLING",
            Dataset::Rublimp => "RUBLIMP",
            Dataset::Custom => "CUSTOM",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BLIMP" => Ok(Dataset::Blimp),
            "SLING" => Ok(Dataset::Sling),
            "RUBLIMP" => Ok(Dataset::Rublimp),
            "CUSTOM" => Ok(Dataset::Custom),
            other => Err(format!("unknown dataset `{other}`")),
        }
    }
}

/// One grammatical/ungrammatical sentence pair.
///
/// Field order is the canonical JSON Lines layout:
/// `{id, dataset, language, paradigm, category, good, bad}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MinimalPair {
    pub id: String,
    pub dataset: Dataset,
    pub language: String,
    pub paradigm: String,
    pub category: String,
    /// The grammatical sentence.
    pub good: String,
    /// The ungrammatical sentence.
    pub bad: String,
}

impl MinimalPair {
    /// Checks the per-pair invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.paradigm.trim().is_empty() {
            return Err("empty paradigm".into());
        }
        if self.good.trim().is_empty() {
            return Err("grammatical sentence is empty".into());
        }
        if self.bad.trim().is_empty() {
            return Err("ungrammatical sentence is empty".into());
        }
        if self.good == self.bad {
            return Err("grammatical and ungrammatical sentences are identical".into());
        }
        // Prompts are line-structured; a line break would split a Sentence A/B line.
        if self.good.contains(['\n', '\r']) || self.bad.contains(['\n', '\r']) {
            return Err("sentence contains a line break".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParadigmSpec {
    pub name: String,
    pub category: String,
    pub dataset: Dataset,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub dataset: Dataset,
    /// Paradigms in order of first appearance in the source.
    pub paradigms: Vec<ParadigmSpec>,
    /// Digest of the raw input bytes (and their relative paths).
    pub source_digest: String,
    /// Digest of the canonical serialization of the accepted pairs. Unlike
    /// `source_digest` this survives a round trip through CANONICAL_JSONL.
    pub corpus_digest: String,
    /// Stamped by the caller when the manifest is persisted; ingestion itself
    /// is a pure function of the input bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingested_at: Option<DateTime<Utc>>,
}

impl CorpusManifest {
    pub fn paradigm(&self, name: &str) -> Option<&ParadigmSpec> {
        self.paradigms.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    BlimpJsonl,
    SlingTsvOrJsonl,
    RublimpJsonl,
    CanonicalJsonl,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "blimp-jsonl" | "blimp" => Ok(SourceFormat::BlimpJsonl),
            "sling-tsv" | "sling-jsonl" | "sling-tsv-or-jsonl" | "sling" => {
                Ok(SourceFormat::SlingTsvOrJsonl)
            }
            "rublimp-jsonl" | "rublimp" => Ok(SourceFormat::RublimpJsonl),
            "canonical-jsonl" | "canonical" => Ok(SourceFormat::CanonicalJsonl),
            other => Err(format!(
                "unknown corpus format `{other}` (expected blimp-jsonl, sling-tsv, rublimp-jsonl or canonical-jsonl)"
            )),
        }
    }
}

impl SourceFormat {
    fn dataset(self) -> Option<Dataset> {
        match self {
            SourceFormat::BlimpJsonl => Some(Dataset::Blimp),
            SourceFormat::SlingTsvOrJsonl => Some(Dataset::Sling),
            SourceFormat::RublimpJsonl => Some(Dataset::Rublimp),
            SourceFormat::CanonicalJsonl => None,
        }
    }

    fn accepts_extension(self, ext: &str) -> bool {
        match self {
            SourceFormat::SlingTsvOrJsonl => matches!(ext, "jsonl" | "tsv" | "txt"),
            _ => ext == "jsonl",
        }
    }
}

/// A record that parsed but violated a [`MinimalPair`] invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDiagnostic {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for RecordDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.reason)
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub manifest: CorpusManifest,
    pub pairs: Vec<MinimalPair>,
    pub rejected: Vec<RecordDiagnostic>,
}

/// Reads a benchmark file, or every matching file under a directory (sorted
/// by path), into canonical pairs.
///
/// Lines that are not valid records are a hard [`CorpusError::MalformedRecord`].
/// Records that parse but break a pair invariant (empty or identical
/// sentences, duplicate ids) are skipped and reported in `rejected`.
pub fn ingest(path: &Path, format: SourceFormat) -> Result<Ingested, CorpusError> {
    let files = source_files(path, format)?;
    let mut hasher = ChunkHasher::new();
    let mut pairs = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: HashSet<(Dataset, String, String)> = HashSet::new();
    let mut dataset = format.dataset();

    for file in &files {
        let bytes = fs::read(file).map_err(|source| CorpusError::FileUnreadable {
            path: file.clone(),
            source,
        })?;
        let rel = file.strip_prefix(path).unwrap_or(file);
        hasher.chunk(rel.to_string_lossy().as_bytes()).chunk(&bytes);
        let text = String::from_utf8(bytes).map_err(|e| CorpusError::MalformedRecord {
            path: file.clone(),
            line: 0,
            reason: format!("file is not valid UTF-8: {e}"),
        })?;
        let parent_category = category_from_parent(path, file);

        let mut header_checked = false;
        for (index, line) in text.lines().enumerate() {
            let line_no = index + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let malformed = |reason: String| CorpusError::MalformedRecord {
                path: file.clone(),
                line: line_no,
                reason,
            };
            let first_record = !header_checked;
            header_checked = true;
            let pair = match format {
                SourceFormat::BlimpJsonl => parse_blimp(line, index).map_err(malformed)?,
                SourceFormat::RublimpJsonl => parse_rublimp(line, index).map_err(malformed)?,
                SourceFormat::CanonicalJsonl => {
                    serde_json::from_str::<MinimalPair>(line).map_err(|e| malformed(e.to_string()))?
                }
                SourceFormat::SlingTsvOrJsonl => {
                    if line.trim_start().starts_with('{') {
                        parse_sling_json(line, index, file, parent_category.as_deref())
                            .map_err(malformed)?
                    } else {
                        if first_record && is_tsv_header(line) {
                            continue;
                        }
                        parse_sling_tsv(line, index, file, parent_category.as_deref())
                            .map_err(malformed)?
                    }
                }
            };
            match dataset {
                None => dataset = Some(pair.dataset),
                Some(d) if d != pair.dataset => {
                    return Err(malformed(format!(
                        "dataset {} differs from the corpus dataset {d}",
                        pair.dataset
                    )))
                }
                Some(_) => {}
            }
            if let Err(reason) = pair.validate() {
                rejected.push(RecordDiagnostic {
                    path: file.clone(),
                    line: line_no,
                    reason,
                });
                continue;
            }
            if !seen.insert((pair.dataset, pair.paradigm.clone(), pair.id.clone())) {
                rejected.push(RecordDiagnostic {
                    path: file.clone(),
                    line: line_no,
                    reason: format!("duplicate id `{}` in paradigm `{}`", pair.id, pair.paradigm),
                });
                continue;
            }
            pairs.push(pair);
        }
    }

    if pairs.is_empty() {
        return Err(CorpusError::EmptyCorpus(path.to_path_buf()));
    }
    for diag in &rejected {
        log::warn!("rejected record {diag}");
    }
    let dataset = dataset.expect("non-empty corpus has a dataset");
    let manifest = CorpusManifest {
        dataset,
        paradigms: paradigm_specs(&pairs),
        source_digest: hasher.finish(),
        corpus_digest: corpus_digest(&pairs),
        ingested_at: None,
    };
    Ok(Ingested {
        manifest,
        pairs,
        rejected,
    })
}

fn source_files(path: &Path, format: SourceFormat) -> Result<Vec<PathBuf>, CorpusError> {
    let meta = fs::metadata(path).map_err(|source| CorpusError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::FileUnreadable {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        if format.accepts_extension(&ext) {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// For directory inputs laid out as `<root>/<category>/<paradigm>.tsv`.
fn category_from_parent(root: &Path, file: &Path) -> Option<String> {
    let parent = file.parent()?;
    if parent == root {
        return None;
    }
    parent.file_name().map(|n| n.to_string_lossy().into_owned())
}

fn is_tsv_header(line: &str) -> bool {
    let cols: Vec<String> = line.split('\t').map(|c| c.trim().to_ascii_lowercase()).collect();
    matches!(
        cols.first().map(String::as_str),
        Some("good" | "sentence_good" | "good_sentence")
    )
}

fn synthesize_id(paradigm: &str, source_id: Option<String>, line_index: usize) -> String {
    match source_id {
        Some(id) => format!("{paradigm}:{id}"),
        None => format!("{paradigm}:{line_index:05}"),
    }
}

fn id_from_value(value: Option<&Value>) -> Option<String> {
    match value? {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .map(str::to_string)
}

fn parse_object(line: &str) -> Result<serde_json::Map<String, Value>, String> {
    match serde_json::from_str::<Value>(line).map_err(|e| e.to_string())? {
        Value::Object(map) => Ok(map),
        _ => Err("expected a JSON object".into()),
    }
}

fn require(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Result<String, String> {
    string_field(obj, keys).ok_or_else(|| format!("missing string field `{}`", keys[0]))
}

fn parse_blimp(line: &str, index: usize) -> Result<MinimalPair, String> {
    let obj = parse_object(line)?;
    let paradigm = require(&obj, &["UID", "uid", "paradigm"])?;
    let category = string_field(&obj, &["linguistics_term", "category"])
        .unwrap_or_else(|| bundled_category(Dataset::Blimp, &paradigm));
    Ok(MinimalPair {
        id: synthesize_id(&paradigm, id_from_value(obj.get("pairID").or(obj.get("pair_id"))), index),
        dataset: Dataset::Blimp,
        language: Dataset::Blimp.default_language().into(),
        category,
        good: require(&obj, &["sentence_good"])?,
        bad: require(&obj, &["sentence_bad"])?,
        paradigm,
    })
}

fn parse_rublimp(line: &str, index: usize) -> Result<MinimalPair, String> {
    let obj = parse_object(line)?;
    let paradigm = require(&obj, &["PID", "pid", "paradigm"])?;
    let category = string_field(&obj, &["phenomenon", "category"])
        .unwrap_or_else(|| bundled_category(Dataset::Rublimp, &paradigm));
    Ok(MinimalPair {
        id: synthesize_id(&paradigm, id_from_value(obj.get("id")), index),
        dataset: Dataset::Rublimp,
        language: Dataset::Rublimp.default_language().into(),
        category,
        good: require(&obj, &["source_sentence", "sentence_good"])?,
        bad: require(&obj, &["target_sentence", "sentence_bad"])?,
        paradigm,
    })
}

fn file_stem(file: &Path) -> String {
    file.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_sling_json(
    line: &str,
    index: usize,
    file: &Path,
    parent_category: Option<&str>,
) -> Result<MinimalPair, String> {
    let obj = parse_object(line)?;
    let paradigm = string_field(&obj, &["paradigm", "UID"]).unwrap_or_else(|| file_stem(file));
    let category = string_field(&obj, &["phenomenon", "category"])
        .or_else(|| parent_category.map(str::to_string))
        .unwrap_or_else(|| bundled_category(Dataset::Sling, &paradigm));
    Ok(MinimalPair {
        id: synthesize_id(&paradigm, id_from_value(obj.get("id")), index),
        dataset: Dataset::Sling,
        language: Dataset::Sling.default_language().into(),
        category,
        good: require(&obj, &["sentence_good", "good"])?,
        bad: require(&obj, &["sentence_bad", "bad"])?,
        paradigm,
    })
}

fn parse_sling_tsv(
    line: &str,
    index: usize,
    file: &Path,
    parent_category: Option<&str>,
) -> Result<MinimalPair, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 2 {
        return Err(format!("expected `good<TAB>bad`, found {} column(s)", cols.len()));
    }
    let paradigm = file_stem(file);
    let category = parent_category
        .map(str::to_string)
        .unwrap_or_else(|| bundled_category(Dataset::Sling, &paradigm));
    Ok(MinimalPair {
        id: synthesize_id(&paradigm, None, index),
        dataset: Dataset::Sling,
        language: Dataset::Sling.default_language().into(),
        category,
        good: cols[0].trim().to_string(),
        bad: cols[1].trim().to_string(),
        paradigm,
    })
}

fn category_table() -> &'static HashMap<(Dataset, String), String> {
    static TABLE: OnceLock<HashMap<(Dataset, String), String>> = OnceLock::new();
    TABLE.get_or_init(|| {
        BUNDLED_CATEGORIES
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .filter_map(|l| {
                let mut cols = l.split('\t');
                let dataset = cols.next()?.parse().ok()?;
                let paradigm = cols.next()?.to_string();
                let category = cols.next()?.to_string();
                Some(((dataset, paradigm), category))
            })
            .collect()
    })
}

/// Category from the bundled paradigm table, or [`UNCATEGORIZED`].
pub fn bundled_category(dataset: Dataset, paradigm: &str) -> String {
    category_table()
        .get(&(dataset, paradigm.to_string()))
        .cloned()
        .unwrap_or_else(|| UNCATEGORIZED.to_string())
}

/// Number of paradigms the bundled table knows for `dataset`.
pub fn bundled_paradigm_count(dataset: Dataset) -> usize {
    category_table().keys().filter(|(d, _)| *d == dataset).count()
}

fn paradigm_specs(pairs: &[MinimalPair]) -> Vec<ParadigmSpec> {
    let mut specs: Vec<ParadigmSpec> = Vec::new();
    let mut index: HashMap<(Dataset, &str), usize> = HashMap::new();
    for pair in pairs {
        match index.get(&(pair.dataset, pair.paradigm.as_str())) {
            Some(&i) => specs[i].pair_count += 1,
            None => {
                index.insert((pair.dataset, pair.paradigm.as_str()), specs.len());
                specs.push(ParadigmSpec {
                    name: pair.paradigm.clone(),
                    category: pair.category.clone(),
                    dataset: pair.dataset,
                    pair_count: 1,
                });
            }
        }
    }
    specs
}

/// Writes one canonical JSON object per line.
pub fn write_canonical<W: Write>(pairs: &[MinimalPair], mut out: W) -> io::Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_canonical_string(pairs: &[MinimalPair]) -> String {
    let mut buf = Vec::new();
    write_canonical(pairs, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Digest of the canonical serialization; format-independent.
pub fn corpus_digest(pairs: &[MinimalPair]) -> String {
    sha256_hex(to_canonical_string(pairs))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub pairs: Vec<MinimalPair>,
    pub warnings: Vec<String>,
}

/// First `per_paradigm_n` pairs of each requested paradigm, in source order,
/// grouped by paradigm in request order.
pub fn select_slice(
    pairs: &[MinimalPair],
    paradigms: &[String],
    per_paradigm_n: usize,
) -> Result<Slice, CorpusError> {
    if per_paradigm_n == 0 {
        return Err(CorpusError::InvalidSliceSize);
    }
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let mut done = HashSet::new();
    for name in paradigms {
        if !done.insert(name.as_str()) {
            continue;
        }
        let group: Vec<&MinimalPair> = pairs.iter().filter(|p| &p.paradigm == name).collect();
        if group.is_empty() {
            return Err(CorpusError::UnknownParadigm(name.clone()));
        }
        if group.len() < per_paradigm_n {
            let msg = format!(
                "paradigm `{name}` has only {} pairs (requested {per_paradigm_n})",
                group.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        out.extend(group.into_iter().take(per_paradigm_n).cloned());
    }
    Ok(Slice {
        pairs: out,
        warnings,
    })
}

/// The last `k` pairs of a paradigm in source order.
pub fn tail_pairs(pairs: &[MinimalPair], paradigm: &str, k: usize) -> Vec<MinimalPair> {
    let group: Vec<&MinimalPair> = pairs.iter().filter(|p| p.paradigm == paradigm).collect();
    let start = group.len().saturating_sub(k);
    group[start..].iter().map(|p| (*p).clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// accuracy <= threshold
    AtMost,
    /// accuracy < threshold
    Below,
}

/// Paradigms whose baseline accuracy falls under the threshold, sorted by
/// accuracy ascending and then by name.
pub fn filter_challenging(
    baseline_scores: &BTreeMap<String, f64>,
    threshold: f64,
    mode: ThresholdMode,
) -> Vec<String> {
    let mut hits: Vec<(&String, f64)> = baseline_scores
        .iter()
        .filter(|(_, &acc)| match mode {
            ThresholdMode::AtMost => acc <= threshold,
            ThresholdMode::Below => acc < threshold,
        })
        .map(|(name, &acc)| (name, acc))
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    hits.into_iter().map(|(name, _)| name.clone()).collect()
}
