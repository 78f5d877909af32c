//! Experiment driver for budgeted human/pseudo data mixing: configuration,
//! the external trainer contract, resumable sweeps, reports and the CLI.

pub mod cli;
pub mod config;
pub mod report;
pub mod sweep;
pub mod trainer;

use std::path::{Path, PathBuf};

use framemix_core::annoparse::{AnnoParseError, TsvError};
use framemix_core::budget::BudgetError;
use framemix_core::corpus::CorpusError;
use framemix_core::evaluation::EvalError;
use framemix_core::llm::LlmError;
use framemix_core::synthesis::SynthesisError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Parse(#[from] AnnoParseError),
    #[error(transparent)]
    Tsv(#[from] TsvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("trainer failed ({status}): {stderr}")]
    TrainerFailed { status: String, stderr: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for invalid input, 2 for failures outside the process (I/O,
    /// model endpoint, trainer).
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Corpus(CorpusError::Io(_))
            | HarnessError::Tsv(TsvError::Io(_))
            | HarnessError::Budget(BudgetError::Io(_))
            | HarnessError::Synthesis(SynthesisError::Llm(_) | SynthesisError::Io(_))
            | HarnessError::Llm(_)
            | HarnessError::TrainerFailed { .. }
            | HarnessError::Io { .. } => 2,
            _ => 1,
        }
    }
}
