//! Exit-code classification: 1 user/config error, 2 backend failure,
//! 3 data-integrity failure.

use std::fmt;

use gramprompt::corpus::CorpusError;
use gramprompt::explain::ExplainError;
use gramprompt::llm::LlmError;
use gramprompt::report::ReportError;
use gramprompt::runner::RunError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_DATA: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn backend(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_BACKEND,
            error: error.into(),
        }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_DATA,
            error: error.into(),
        }
    }

    pub fn context(mut self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(msg);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn llm_code(e: &LlmError) -> u8 {
    match e {
        LlmError::AuthMissing(_) | LlmError::InvalidRequest(_) => EXIT_USAGE,
        LlmError::Transcript(_) | LlmError::TranscriptMissingEntry(_) => EXIT_DATA,
        _ => EXIT_BACKEND,
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let code = match e {
            CorpusError::MalformedRecord { .. } | CorpusError::EmptyCorpus(_) => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        Self { code, error: e.into() }
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        let code = match &e {
            ExplainError::BackendFailure(inner) => llm_code(inner),
            ExplainError::EmptyResponse(_) => EXIT_BACKEND,
            ExplainError::Template(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self { code, error: e.into() }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::Backend(inner) => llm_code(inner),
            RunError::Io { .. } => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        Self { code, error: e.into() }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let code = match &e {
            ReportError::MixedCorpus { .. } | ReportError::Run(_) | ReportError::Write { .. } => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        Self { code, error: e.into() }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        Self {
            code: llm_code(&e),
            error: e.into(),
        }
    }
}
