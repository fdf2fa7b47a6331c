use std::fmt;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed DROP json{}: {message}", context_suffix(.passage_id))]
    DropJson {
        passage_id: Option<String>,
        message: String,
    },
    #[error("rule file line {line}: {message}")]
    Rule { line: usize, message: String },
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("autodiff: {0}")]
    Graph(String),
    #[error("gradcheck: {0}")]
    Gradcheck(String),
    #[error("invalid context: {0}")]
    Context(String),
    #[error("derivation: {0}")]
    Derivation(String),
    #[error("model: {0}")]
    Model(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data: {0}")]
    Data(String),
}

fn context_suffix(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" (passage {id})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl fmt::Display, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
