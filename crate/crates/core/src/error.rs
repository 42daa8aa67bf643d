use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("source file not found: {0}")]
    MissingFile(PathBuf),

    #[error("header mismatch in {path}: missing columns [{}], unexpected columns [{}]", missing.join(", "), extra.join(", "))]
    HeaderMismatch {
        path: PathBuf,
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("source id {source_id} already registered as {existing}")]
    SourceConflict { source_id: String, existing: String },

    #[error("staging batch {0} not found")]
    UnknownBatch(u64),

    #[error("warehouse is locked by another writer ({0})")]
    WarehouseLocked(PathBuf),

    #[error("corrupt table {table}: {detail}")]
    CorruptTable { table: String, detail: String },

    #[error("unknown level {0}")]
    UnknownLevel(String),

    #[error("unknown attribute {0}")]
    UnknownAttribute(String),

    #[error("unknown cube {0}")]
    UnknownCube(String),

    #[error("invalid query spec: {0}")]
    InvalidSpec(String),

    #[error("{0} is already at its finest level")]
    AtFinestLevel(String),

    #[error("{0} is already at its coarsest level")]
    AtCoarsestLevel(String),

    #[error("unknown member {0}")]
    UnknownMember(String),

    #[error("invalid period: {0}")]
    InvalidPeriod(String),

    #[error("unknown cancer type {0}")]
    UnknownCancerType(String),

    #[error("unknown drug {0}")]
    UnknownDrug(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used in HTTP error bodies and the access log.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "MissingFile",
            Error::HeaderMismatch { .. } => "HeaderMismatch",
            Error::SourceConflict { .. } => "SourceConflict",
            Error::UnknownBatch(_) => "UnknownBatch",
            Error::WarehouseLocked(_) => "WarehouseLocked",
            Error::CorruptTable { .. } => "CorruptTable",
            Error::UnknownLevel(_) => "UnknownLevel",
            Error::UnknownAttribute(_) => "UnknownAttribute",
            Error::UnknownCube(_) => "UnknownCube",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::AtFinestLevel(_) => "AtFinestLevel",
            Error::AtCoarsestLevel(_) => "AtCoarsestLevel",
            Error::UnknownMember(_) => "UnknownMember",
            Error::InvalidPeriod(_) => "InvalidPeriod",
            Error::UnknownCancerType(_) => "UnknownCancerType",
            Error::UnknownDrug(_) => "UnknownDrug",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    /// True for errors caused by bad input rather than storage or I/O trouble.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::CorruptTable { .. }
                | Error::WarehouseLocked(_)
                | Error::MissingFile(_)
                | Error::Csv(_)
        )
    }
}
