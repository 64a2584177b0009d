//! Append-only JSON Lines transcripts and the replay backend built on them.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendKind, ChatBackend, ChatRequest, ChatResponse, LlmError};

/// One request and its final outcome. Exactly one of `response` and `error`
/// is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_digest: String,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub attempts: u32,
}

impl TranscriptEntry {
    pub fn new(
        request: &ChatRequest,
        outcome: &Result<ChatResponse, LlmError>,
        latency_ms: u64,
        attempts: u32,
    ) -> Self {
        let (response, error) = match outcome {
            Ok(r) => (Some(r.text.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            request_digest: request.request_digest.clone(),
            request: request.clone(),
            response,
            error,
            latency_ms,
            attempts,
        }
    }
}

/// Serializes appends from concurrent workers into one file.
#[derive(Debug)]
pub struct TranscriptWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl TranscriptWriter {
    /// Opens `path` for appending, creating parent directories.
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    /// `<runs_dir>/<run_id>/transcript.jsonl`
    pub fn record(runs_dir: &Path, run_id: &str) -> io::Result<Self> {
        Self::open(&runs_dir.join(run_id).join("transcript.jsonl"))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &TranscriptEntry) -> io::Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.flush()
    }
}

/// Reads every entry of a transcript in file order.
pub fn load_transcript(path: &Path) -> io::Result<Vec<TranscriptEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), i + 1),
            )
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Answers from recorded transcripts, keyed by request digest. When a digest
/// occurs more than once the first entry wins.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, Result<String, String>>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            let outcome = match (e.response, e.error) {
                (Some(text), _) => Ok(text),
                (None, Some(err)) => Err(err),
                (None, None) => Err("transcript entry has neither response nor error".into()),
            };
            map.entry(e.request_digest).or_insert(outcome);
        }
        Self { entries: map }
    }

    /// Loads one transcript file, or every `transcript.jsonl` below a
    /// directory (in sorted path order).
    pub fn load(path: &Path) -> io::Result<Self> {
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
                let entry = entry.map_err(io::Error::other)?;
                if entry.file_type().is_file() && entry.file_name() == "transcript.jsonl" {
                    files.push(entry.into_path());
                }
            }
        } else {
            files.push(path.to_path_buf());
        }
        let mut all = Vec::new();
        for f in files {
            all.extend(load_transcript(&f)?);
        }
        Ok(Self::from_entries(all))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        match self.entries.get(&request.request_digest) {
            Some(Ok(text)) => Ok(text.clone()),
            Some(Err(msg)) => Err(BackendError::Recorded(msg.clone())),
            None => Err(BackendError::MissingEntry(request.request_digest.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmClient, MockBackend, MockPolicy};
    use std::sync::Arc;

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let writer = Arc::new(TranscriptWriter::record(dir.path(), "run").unwrap());
        let mut scripted = std::collections::BTreeMap::new();
        let req = ChatRequest::new("m", None, "Which?", 0.0, 16);
        scripted.insert(req.request_digest.clone(), "A".to_string());
        let mock = MockBackend::new(MockPolicy::scripted(scripted, None, 0), &[]).unwrap();
        let live = LlmClient::new(Arc::new(mock)).with_transcript(writer.clone());
        assert_eq!(live.complete(&req).unwrap().text, "A");
        let other = ChatRequest::new("m", None, "Unscripted?", 0.0, 16);
        let live_err = live.complete(&other).unwrap_err();

        let entries = load_transcript(writer.path()).unwrap();
        assert_eq!(entries.len(), 2);

        let replay = LlmClient::new(Arc::new(ReplayBackend::load(dir.path()).unwrap()));
        let resp = replay.complete(&req).unwrap();
        assert_eq!(resp.text, "A");
        assert_eq!(resp.backend_kind, BackendKind::Replay);
        assert_eq!(replay.complete(&other).unwrap_err().to_string(), live_err.to_string());

        let mutated = ChatRequest::new("m", None, "Which??", 0.0, 16);
        assert!(matches!(
            replay.complete(&mutated),
            Err(LlmError::TranscriptMissingEntry(_))
        ));
    }

    #[test]
    fn first_entry_wins() {
        let req = ChatRequest::new("m", None, "Q", 0.0, 16);
        let mk = |text: &str| TranscriptEntry {
            request_digest: req.request_digest.clone(),
            request: req.clone(),
            response: Some(text.into()),
            error: None,
            latency_ms: 0,
            attempts: 1,
        };
        let backend = ReplayBackend::from_entries([mk("A"), mk("B")]);
        assert_eq!(backend.send(&req).unwrap(), "A");
    }
}
