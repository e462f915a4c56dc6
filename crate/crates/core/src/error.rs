use thiserror::Error;

/// Errors produced anywhere in the aging flow.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("line {line}: unknown layer {layer} (no geometry configured)")]
    UnknownLayer { line: usize, layer: u32 },

    #[error("line {line}: duplicate element name `{name}`")]
    DuplicateElement { line: usize, name: String },

    #[error("current source node {node} has no resistive path to any voltage source")]
    DisconnectedSource { node: String },

    #[error("netlist has no voltage source")]
    NoSupply,

    #[error("singular system: floating nodes {nodes:?}")]
    FloatingNodes { nodes: Vec<String> },

    #[error("factorization failed{}: {msg}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Factorization { context: Option<String>, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parameter `{key}`: {msg}")]
    Param { key: String, msg: String },

    #[error("krylov reduction failed: {0}")]
    Krylov(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
