use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("truncation interval [{lower}, {upper}] has negligible probability mass under N({mu}, {sigma}^2)")]
    DegenerateTruncation { mu: f64, sigma: f64, lower: f64, upper: f64 },

    #[error("design matrix is singular or rank deficient ({0})")]
    SingularDesign(String),

    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),

    #[error("no distance available for origin `{origin}` and store `{store}`")]
    MissingDistance { origin: String, store: String },

    #[error("query budget of {budget} requests exhausted")]
    BudgetExhausted { budget: usize },

    #[error("distance provider failed: {0}")]
    Provider(String),

    #[error("map proximity for neighborhood `{neighborhood}` is incomplete: {source}")]
    PartialResult {
        neighborhood: String,
        #[source]
        source: Box<Error>,
    },

    #[error("queried row {row} has a zero outcome count; log(Y) is undefined (set a log shift c to use log(Y + c))")]
    ZeroCount { row: usize },

    #[error("imputation model needs at least {needed} queried rows, found {found}")]
    InsufficientValidation { needed: usize, found: usize },

    #[error("strategy unavailable: {0}")]
    Unavailable(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("scenario `{scenario}` failed on {failed} of {replicates} replicates")]
    ScenarioDegenerate { scenario: String, failed: usize, replicates: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
