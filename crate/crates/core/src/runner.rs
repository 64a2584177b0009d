//! Counterbalanced trial scheduling, execution, answer parsing and grading.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::corpus::{Dataset, MinimalPair};
use crate::digest::sha256_hex;
use crate::explain::GrammarExplanation;
use crate::llm::{BackendKind, ChatRequest, LlmClient, LlmError, TranscriptWriter};
use crate::templates::{
    ConditionKind, ConditionSpec, Order, PromptBundle, RenderContext, RenderFailure, TemplateSet,
};

pub const TRIALS_PER_PAIR: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderProvenance {
    FixedGoodFirst,
    FixedBadFirst,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub pair_id: String,
    pub trial_index: u8,
    pub order: Order,
    pub order_provenance: OrderProvenance,
    /// The random bit behind trial 3's order; `None` for the fixed trials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_draw: Option<u8>,
}

/// First bit of SHA-256(run_seed ‖ pair_id).
pub fn trial3_bit(run_seed: u64, pair_id: &str) -> u8 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(pair_id.as_bytes());
    h.finalize()[0] >> 7
}

/// Trial 1 shows the grammatical sentence as A, trial 2 as B, and trial 3
/// picks with a seeded coin flip (bit 0 → GOOD_FIRST).
pub fn plan_trials(pair: &MinimalPair, run_seed: u64) -> [TrialPlan; 3] {
    let bit = trial3_bit(run_seed, &pair.id);
    let plan = |trial_index, order, order_provenance, rng_draw| TrialPlan {
        pair_id: pair.id.clone(),
        trial_index,
        order,
        order_provenance,
        rng_draw,
    };
    [
        plan(1, Order::GoodFirst, OrderProvenance::FixedGoodFirst, None),
        plan(2, Order::BadFirst, OrderProvenance::FixedBadFirst, None),
        plan(
            3,
            if bit == 0 { Order::GoodFirst } else { Order::BadFirst },
            OrderProvenance::Randomized,
            Some(bit),
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Choice {
    A,
    B,
    Unparseable,
}

impl Choice {
    fn from_letter(c: char) -> Self {
        match c.to_ascii_uppercase() {
            'A' => Choice::A,
            'B' => Choice::B,
            _ => Choice::Unparseable,
        }
    }

    /// Whether this choice names the grammatical sentence under `order`.
    pub fn is_correct(self, order: Order) -> bool {
        matches!(
            (self, order),
            (Choice::A, Order::GoodFirst) | (Choice::B, Order::BadFirst)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParsePath {
    Strict,
    Fallback,
    Marker,
    MarkerFallback,
    None,
}

fn strip_edges(s: &str) -> &str {
    s.trim().trim_matches(|c: char| !c.is_alphanumeric())
}

/// Maximal alphanumeric runs that are exactly an uppercase `A` or `B`.
fn letter_tokens(s: &str) -> impl Iterator<Item = char> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter_map(|t| match t {
            "A" => Some('A'),
            "B" => Some('B'),
            _ => None,
        })
}

fn strict(raw: &str) -> Option<Choice> {
    match strip_edges(raw) {
        "A" | "a" => Some(Choice::A),
        "B" | "b" => Some(Choice::B),
        _ => None,
    }
}

/// One distinct uppercase standalone letter in the whole response.
fn fallback(raw: &str) -> Option<Choice> {
    let mut found: Option<char> = None;
    for letter in letter_tokens(raw) {
        match found {
            None => found = Some(letter),
            Some(l) if l == letter => {}
            Some(_) => return None,
        }
    }
    found.map(Choice::from_letter)
}

fn marker(raw: &str) -> Option<Option<Choice>> {
    // Trailing asterisks close a bold answer such as `***A***`.
    let body = raw.trim_end_matches(|c: char| c.is_whitespace() || c == '*');
    let pos = body.rfind("***")?;
    let rest = &body[pos + 3..];
    if let Some(choice) = strict(rest) {
        return Some(Some(choice));
    }
    Some(letter_tokens(rest).next().map(Choice::from_letter))
}

fn final_line_letter(raw: &str) -> Option<Choice> {
    let line = raw.lines().rev().find(|l| !l.trim().is_empty())?;
    letter_tokens(line).last().map(Choice::from_letter)
}

/// Extracts the model's choice. Never fails: unusable text yields
/// `(Unparseable, None)`.
pub fn parse_answer(kind: ConditionKind, raw: &str) -> (Choice, ParsePath) {
    if kind.is_reasoning() {
        return match marker(raw) {
            Some(Some(choice)) => (choice, ParsePath::Marker),
            Some(None) => (Choice::Unparseable, ParsePath::None),
            None => match final_line_letter(raw) {
                Some(choice) => (choice, ParsePath::MarkerFallback),
                None => (Choice::Unparseable, ParsePath::None),
            },
        };
    }
    if let Some(choice) = strict(raw) {
        return (choice, ParsePath::Strict);
    }
    match fallback(raw) {
        Some(choice) => (choice, ParsePath::Fallback),
        None => (Choice::Unparseable, ParsePath::None),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub run_id: String,
    pub pair_id: String,
    pub trial_index: u8,
    pub order: Order,
    pub condition: ConditionSpec,
    pub target_model: String,
    pub dataset: Dataset,
    pub language: String,
    pub paradigm: String,
    pub category: String,
    pub choice: Choice,
    pub correct: bool,
    pub raw_response_digest: String,
    pub parse_path: ParsePath,
    /// Backend failure that left this trial without a response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Sampling {
    /// Temperature 0; 16 output tokens for single-letter conditions and 2048
    /// for the reasoning ones.
    pub fn default_for(kind: ConditionKind) -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: if kind.is_reasoning() { 2048 } else { 16 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub corpus_digest: String,
    pub conditions: Vec<ConditionSpec>,
    pub target_models: Vec<String>,
    pub run_seed: u64,
    pub template_version: String,
    pub backend_kinds: Vec<BackendKind>,
    pub sampling: Sampling,
    pub config_fingerprint: String,
    pub pair_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgment_count: Option<usize>,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
}

impl RunManifest {
    pub fn is_finished(&self) -> bool {
        self.finished_at.is_some()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no explanation available for paradigm `{0}`")]
    MissingExplanation(String),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("run {0} is already finished; runs are immutable")]
    AlreadyFinished(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Everything a condition needs besides the pair itself.
#[derive(Debug, Clone, Default)]
pub struct ConditionInputs {
    /// paradigm → explanation (GP and GP+CoT)
    pub explanations: BTreeMap<String, GrammarExplanation>,
    pub control: Option<GrammarExplanation>,
    pub textbook: Vec<GrammarExplanation>,
    /// paradigm → (good, bad) shots
    pub shots: BTreeMap<String, Vec<(String, String)>>,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub run_id: String,
    pub condition: ConditionSpec,
    pub target_model: String,
    pub run_seed: u64,
    pub corpus_digest: String,
    pub config_fingerprint: String,
    /// Defaults to [`Sampling::default_for`] the condition.
    pub sampling: Option<Sampling>,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub judgments: Vec<Judgment>,
}

/// `<target>__<condition>` with filesystem-unfriendly characters replaced.
pub fn run_id(target_model: &str, condition: &ConditionSpec) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+') {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    format!("{}__{}", clean(target_model), clean(&condition.label()))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    let mut bytes = serde_json::to_vec_pretty(manifest).map_err(|e| io_err(dir)(e.into()))?;
    bytes.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &bytes)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, RunError> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| io_err(&path)(io::Error::new(io::ErrorKind::InvalidData, e)))
}

pub fn judgments_to_jsonl(judgments: &[Judgment]) -> Vec<u8> {
    let mut out = Vec::new();
    for j in judgments {
        serde_json::to_writer(&mut out, j).expect("in-memory serialization cannot fail");
        out.push(b'\n');
    }
    out
}

pub fn read_judgments(path: &Path) -> Result<Vec<Judgment>, RunError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let j = serde_json::from_str(&line).map_err(|e| {
            io_err(path)(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            ))
        })?;
        out.push(j);
    }
    Ok(out)
}

struct Task<'a> {
    pair: &'a MinimalPair,
    plan: TrialPlan,
    bundle: PromptBundle,
}

fn render_tasks<'a>(
    slice: &'a [MinimalPair],
    spec: &RunSpec,
    inputs: &ConditionInputs,
    templates: &TemplateSet,
) -> Result<Vec<Task<'a>>, RunError> {
    let kind = spec.condition.kind;
    let mut tasks = Vec::with_capacity(slice.len() * TRIALS_PER_PAIR as usize);
    for pair in slice {
        let explanation = inputs.explanations.get(&pair.paradigm);
        let empty: Vec<(String, String)> = Vec::new();
        let shots = inputs.shots.get(&pair.paradigm).unwrap_or(&empty);
        match kind {
            ConditionKind::Gp | ConditionKind::GpCot if explanation.is_none() => {
                return Err(RunError::MissingExplanation(pair.paradigm.clone()))
            }
            ConditionKind::Control if inputs.control.is_none() => {
                return Err(RunError::MissingExplanation(crate::explain::CONTROL_PARADIGM.into()))
            }
            ConditionKind::Textbook if inputs.textbook.is_empty() => {
                return Err(RunError::MissingExplanation(pair.paradigm.clone()))
            }
            ConditionKind::FewShot if shots.is_empty() => {
                return Err(RunError::ConfigError(format!(
                    "no few-shot examples for paradigm `{}`",
                    pair.paradigm
                )))
            }
            _ => {}
        }
        let ctx = RenderContext {
            explanation,
            control: inputs.control.as_ref(),
            textbook: &inputs.textbook,
            shots,
        };
        for plan in plan_trials(pair, spec.run_seed) {
            let bundle = templates
                .render_condition(&spec.condition, pair, plan.order, &ctx)
                .map_err(|e| match e {
                    RenderFailure::Missing(_) => RunError::MissingExplanation(pair.paradigm.clone()),
                    RenderFailure::Template(t) => RunError::ConfigError(format!("{}: {t}", pair.id)),
                })?;
            tasks.push(Task { pair, plan, bundle });
        }
    }
    Ok(tasks)
}

/// Runs every pair of `slice` through three trials of one condition against
/// one target model.
///
/// With `runs_dir`, the manifest is written to `runs_dir/<run_id>/` before
/// the first request, every request is logged to `transcript.jsonl` there,
/// and `judgments.jsonl` plus the finished manifest are written at the end.
/// Judgments come back in (pair, trial) order whatever the completion order.
/// Backend failures become unparseable judgments carrying the error text; a
/// replay miss aborts the run.
pub fn execute(
    slice: &[MinimalPair],
    spec: &RunSpec,
    inputs: &ConditionInputs,
    templates: &TemplateSet,
    client: &LlmClient,
    runs_dir: Option<&Path>,
) -> Result<RunOutput, RunError> {
    spec.condition
        .validate()
        .map_err(|e| RunError::ConfigError(e.to_string()))?;
    if slice.is_empty() {
        return Err(RunError::ConfigError("empty evaluation slice".into()));
    }
    let tasks = render_tasks(slice, spec, inputs, templates)?;
    let sampling = spec
        .sampling
        .unwrap_or_else(|| Sampling::default_for(spec.condition.kind));

    let mut manifest = RunManifest {
        run_id: spec.run_id.clone(),
        corpus_digest: spec.corpus_digest.clone(),
        conditions: vec![spec.condition.clone()],
        target_models: vec![spec.target_model.clone()],
        run_seed: spec.run_seed,
        template_version: templates.version().to_string(),
        backend_kinds: vec![client.backend_kind()],
        sampling,
        config_fingerprint: spec.config_fingerprint.clone(),
        pair_count: slice.len(),
        judgment_count: None,
        started_at: Utc::now(),
        finished_at: None,
    };

    let run_dir = runs_dir.map(|d| d.join(&spec.run_id));
    let client = match &run_dir {
        Some(dir) => {
            if dir.join("judgments.jsonl").exists() {
                return Err(RunError::AlreadyFinished(spec.run_id.clone()));
            }
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let transcript = dir.join("transcript.jsonl");
            if transcript.exists() {
                // Leftover from an interrupted attempt.
                fs::remove_file(&transcript).map_err(io_err(&transcript))?;
            }
            write_manifest(dir, &manifest)?;
            let writer = TranscriptWriter::open(&transcript).map_err(io_err(&transcript))?;
            client.with_transcript(Arc::new(writer))
        }
        None => client.clone(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| RunError::ConfigError(format!("worker pool: {e}")))?;
    let results: Vec<Result<Judgment, RunError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| judge(task, spec, sampling, &client))
            .collect()
    });
    let judgments = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    manifest.judgment_count = Some(judgments.len());
    manifest.finished_at = Some(Utc::now());
    if let Some(dir) = &run_dir {
        write_atomic(&dir.join("judgments.jsonl"), &judgments_to_jsonl(&judgments))?;
        write_manifest(dir, &manifest)?;
    }
    Ok(RunOutput {
        manifest,
        judgments,
    })
}

fn judge(task: &Task<'_>, spec: &RunSpec, sampling: Sampling, client: &LlmClient) -> Result<Judgment, RunError> {
    let request = ChatRequest::new(
        spec.target_model.clone(),
        task.bundle.system_text.clone(),
        task.bundle.user_text.clone(),
        sampling.temperature,
        sampling.max_output_tokens,
    )
    .with_trace(format!("{}#{}", task.plan.pair_id, task.plan.trial_index));
    let (raw, error) = match client.complete(&request) {
        Ok(resp) => (resp.text, None),
        Err(e @ (LlmError::TranscriptMissingEntry(_) | LlmError::Transcript(_))) => return Err(e.into()),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    let (choice, parse_path) = if error.is_some() {
        (Choice::Unparseable, ParsePath::None)
    } else {
        parse_answer(spec.condition.kind, &raw)
    };
    let pair = task.pair;
    Ok(Judgment {
        run_id: spec.run_id.clone(),
        pair_id: pair.id.clone(),
        trial_index: task.plan.trial_index,
        order: task.plan.order,
        condition: spec.condition.clone(),
        target_model: spec.target_model.clone(),
        dataset: pair.dataset,
        language: pair.language.clone(),
        paradigm: pair.paradigm.clone(),
        category: pair.category.clone(),
        choice,
        correct: choice.is_correct(task.plan.order),
        raw_response_digest: sha256_hex(&raw),
        parse_path,
        error,
    })
}
