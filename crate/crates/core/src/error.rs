use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A template was invoked from a state outside its initiation set.
    #[error("template `{0}` invoked outside its initiation set")]
    InitiationViolation(String),

    #[error("no state satisfying the initiation set of `{template}` after {attempts} attempts")]
    NoInitialState { template: String, attempts: usize },

    #[error("input has length {got}, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    /// Raised when a gradient entry is NaN/inf or exceeds the blow-up guard.
    #[error("gradient entry {value} is not finite or exceeds the guard")]
    NonFiniteGradient { value: f64 },

    #[error("every action is masked in this state")]
    NoAvailableAction,

    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,

    #[error("task `{task}` has no option templates at level {level}")]
    UnknownLevel { task: String, level: usize },

    #[error("map generation failed for seed {seed} after {attempts} attempts")]
    GenerationFailure { seed: u64, attempts: usize },

    #[error("`{template}` did not converge within {episodes} episodes (final average {final_average:.3})")]
    DidNotConverge {
        template: String,
        episodes: usize,
        final_average: f64,
    },

    #[error("pipeline aborted while training `{template}`: {source}")]
    PipelineAborted {
        template: String,
        #[source]
        source: Box<Error>,
    },

    #[error("template `{0}` has no implementation")]
    UnimplementedTemplate(String),

    #[error("evaluation needs at least one episode")]
    EmptyEvaluation,

    #[error("option terminates with mass {mass} within horizon {horizon}")]
    HorizonExceeded { mass: f64, horizon: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for the training-budget failures the CLI maps to exit code 2.
    pub fn is_convergence_failure(&self) -> bool {
        match self {
            Error::DidNotConverge { .. } => true,
            Error::PipelineAborted { source, .. } => source.is_convergence_failure(),
            _ => false,
        }
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
