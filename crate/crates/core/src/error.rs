use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("duplicate {kind} name `{name}`")]
    DuplicateName { kind: &'static str, name: String },

    #[error("invalid statistics: {0}")]
    Statistics(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("unknown attribute `{relation}.{attribute}`")]
    UnknownAttribute { relation: String, attribute: String },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("join predicate `{0}` is not an equi-join")]
    NonEquiJoin(String),

    #[error("relation `{0}` appears more than once in FROM")]
    SelfJoin(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("leaf `{0}` is not a relation of the query")]
    LeafNotInQuery(String),

    #[error("join tree does not cover the query relations: {0}")]
    Coverage(String),

    #[error("relation `{0}` is not in the join tree")]
    RelationAbsent(String),

    #[error("query joins {relations} relations but the model supports at most {capacity}")]
    Capacity { relations: usize, capacity: usize },

    #[error("no actions available in a terminal state")]
    TerminalState,

    #[error("invalid action ({x}, {y}) for a forest of {forest} trees")]
    InvalidAction { x: usize, y: usize, forest: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("every action slot is masked")]
    AllMasked,

    #[error("action slot {0} is masked")]
    MaskedIndex(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("query with {relations} relations exceeds the limit of {limit} for this enumerator")]
    QueryTooLarge { relations: usize, limit: usize },

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
