use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid order must be at least 1")]
    InvalidGridOrder,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: player {id:?} cannot play against themselves")]
    SelfMatch { line: usize, id: String },

    #[error("no matches")]
    NoMatches,

    #[error("unknown kernel {0:?}")]
    UnknownKernel(String),

    #[error("unknown player {0:?}")]
    UnknownPlayer(String),

    #[error("players {0} and {1} never played each other")]
    UnobservedPair(usize, usize),

    #[error("cannot build a {k}-regular pairing over {n} players")]
    ImpossiblePairing { n: usize, k: usize },

    #[error("belief propagation produced non-finite values after {sweeps} sweeps")]
    NonFinite { sweeps: usize },

    #[error("kernel optimizer failed after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    Optimizer { iterations: usize, grad_norm: f64 },

    #[error("neural network training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("EM iteration {iteration}: {source}")]
    Em {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Q grid has no mass to sample from")]
    ZeroMass,

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable identifier used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGridOrder => "grid",
            Error::LengthMismatch { .. } => "shape",
            Error::Parse { .. } => "parse",
            Error::SelfMatch { .. } => "self-match",
            Error::NoMatches => "no-matches",
            Error::UnknownKernel(_) => "unknown-kernel",
            Error::UnknownPlayer(_) => "unknown-player",
            Error::UnobservedPair(..) => "unobserved-pair",
            Error::ImpossiblePairing { .. } => "pairing",
            Error::NonFinite { .. } => "bp-diverged",
            Error::Optimizer { .. } => "optimizer",
            Error::Diverged { .. } => "nn-diverged",
            Error::Em { source, .. } => source.kind(),
            Error::ZeroMass => "zero-mass",
            Error::InvalidOption(_) => "option",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
        }
    }
}
