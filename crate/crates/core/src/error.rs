use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("identifier width must be in 1..=64 bits, got {0}")]
    IdBits(u32),

    #[error("cluster id {0:#x} is already on the ring")]
    DuplicateCluster(u64),

    #[error("node {0} is already a cluster member")]
    AlreadyMember(usize),

    #[error("node {0} is not alive")]
    NodeNotAlive(usize),

    #[error("ring has no clusters")]
    EmptyRing,

    #[error("refusing to remove the last live node")]
    LastNode,

    #[error("routing gave up after {hops} hops (stale tables)")]
    RoutingFailure { hops: u32 },

    #[error("move of cluster {cluster_id:#x} to {new_id:#x} would reorder the ring")]
    InvalidMove { cluster_id: u64, new_id: u64 },

    #[error("cluster cannot be split: {0}")]
    SplitRefused(&'static str),

    #[error("invalid config: {key} = {value} violates {bound}")]
    Bound {
        key: String,
        value: String,
        bound: &'static str,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("result table is empty")]
    EmptyTable,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used in machine-parsable CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IdBits(_) | Error::Bound { .. } => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::EmptyTable => "empty-table",
            Error::RoutingFailure { .. } => "routing",
            _ => "overlay",
        }
    }
}
