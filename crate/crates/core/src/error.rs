use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// `m` rules per symbol cannot be placed without two parents sharing a tuple.
    #[error("m = {m} exceeds v^(s-1) = {max}; an unambiguous grammar is impossible")]
    Ambiguous { m: usize, max: u64 },

    #[error("leaf sequence has {found} entries, grammar expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("symbol {symbol} out of range for alphabet of size {v}")]
    SymbolOutOfRange { symbol: usize, v: usize },

    /// The observed leaves admit no completion under the grammar.
    #[error("masked input is inconsistent with the grammar (no parent at level {level}, position {position})")]
    Inconsistent { level: usize, position: usize },

    #[error("level {level} out of range for depth {depth}")]
    LevelOutOfRange { level: usize, depth: usize },

    #[error("enumeration needs {count} sentences, budget is {budget}")]
    BudgetExceeded { count: f64, budget: usize },

    #[error("no sentence matches the observed leaves")]
    EmptySupport,

    #[error("outside the domain of the closed form: {0}")]
    Domain(String),

    #[error("no sign change on [{lo}, {hi}]: no transition predicted")]
    NoBracket { lo: f64, hi: f64 },

    #[error("need at least {needed} points in the plateau window, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("ergodic baseline equals 1; normalization is undefined")]
    DegenerateBaseline,

    #[error("malformed grammar document: {0}")]
    MalformedDocument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid configuration: {0}")]
    Config(String),
}
