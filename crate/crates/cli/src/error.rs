use subrank::data::DataError;
use subrank::eval::EvalError;
use subrank::llm::LlmError;
use subrank::model::ModelError;
use subrank::scorer::{CacheError, ScorerError};
use subrank::subst::SubstError;
use subrank::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("CONFIG_ERROR: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Subst(#[from] SubstError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
    #[error("REPORT_ERROR: {0}")]
    Report(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
