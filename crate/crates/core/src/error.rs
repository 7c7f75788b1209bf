use std::path::PathBuf;

use thiserror::Error;

use crate::taskspec::StructureViolation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind}: {value:?}")]
pub struct ParseEnumError {
    pub kind: &'static str,
    pub value: String,
}

impl ParseEnumError {
    pub(crate) fn new(kind: &'static str, value: &str) -> Self {
        Self { kind, value: value.to_string() }
    }
}

/// Failures talking to a model backend.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("model returned an empty completion")]
    EmptyCompletion,
    #[error("unexpected HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("scripted agent has no entry for {0}")]
    ScriptMiss(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::RateLimited { .. })
            || matches!(self, GatewayError::Http { status, .. } if *status >= 500)
    }
}

/// Failures turning raw model text into protocol values.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentParseError {
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("problem does not match the task schema: {0:?}")]
    SchemaMismatch(Vec<StructureViolation>),
    #[error("validation verdict lacks a boolean \"approved\" field")]
    MissingApprovedField,
    #[error("rejected verdict carries no feedback")]
    InconsistentReport,
    #[error("missing or empty field {0:?}")]
    MissingField(&'static str),
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("initialization exhausted after {attempts} attempts")]
    InitExhausted { attempts: u32 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid protocol configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("every trajectory in the campaign failed")]
    AllTrajectoriesFailed,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("instance id {0} already present in store")]
    DuplicateInstanceId(String),
    #[error("corrupt record at {}:{line}: {message}", path.display())]
    CorruptLine { path: PathBuf, line: usize, message: String },
    #[error("lineage {0} has no easy-tier record")]
    MissingBaseStage(String),
    #[error("lineage {0} has no final item")]
    MissingFinal(String),
    #[error("item violates invariants: {0}")]
    InvalidItem(String),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io { path: path.into(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    EmptyGroup,
    #[error("tables do not share the key {0}")]
    KeyMismatch(String),
    #[error("generator family {0} has no same-family or no other-family models")]
    EmptyFamily(String),
    #[error("rounds do not share the same task set")]
    MismatchedTaskSets,
    #[error("reference round {0} not present")]
    MissingReference(usize),
    #[error("fixture error: {0}")]
    Fixture(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override '{0}': expected key=value")]
    Override(String),
    #[error(transparent)]
    Credential(GatewayError),
}

/// Failures of a whole generate or evaluate run.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no evaluation records were produced")]
    NoRecords,
}
