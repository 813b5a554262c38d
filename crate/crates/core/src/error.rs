use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// All probability mass sits on diagonal triplets (`y+ = y-`), so no
    /// comparison distribution exists.
    #[error("degenerate distribution: all mass on diagonal triplets")]
    DegenerateDistribution,

    /// A supported pair carries a one-sided preference (omega in {0, 1}),
    /// which no Bradley-Terry model can produce with finite scores.
    #[error("one-sided preference: omega[{i}][{j}] = {omega} in context {context}")]
    OneSidedPair {
        context: usize,
        i: usize,
        j: usize,
        omega: f64,
    },

    /// A score magnitude is outside the exp-safe range.
    #[error("score magnitude {max_abs} exceeds exp-safe limit {limit}")]
    ScoreRange { max_abs: f64, limit: f64 },

    /// `p_plus > 0` on an item where `p_minus = 0`, so the density-ratio
    /// score is undefined.
    #[error("undefined score: p_plus > 0 but p_minus = 0 at context {context}, item {item}")]
    UndefinedScore { context: usize, item: usize },

    /// Exact spectral connectivity is only defined for a single context.
    #[error("spectral connectivity needs a single context, got {contexts}; use the variational estimator")]
    UnsupportedSetting { contexts: usize },

    /// The Q second-moment matrix of the features is singular.
    #[error("feature second-moment matrix is rank deficient (eigenvalue {eigenvalue:.3e})")]
    RankDeficient {
        eigenvalue: f64,
        null_direction: Vec<f64>,
    },

    /// Every learning rate in the grid produced a non-finite loss.
    #[error("training diverged for every learning rate in the grid")]
    TrainingDiverged,

    /// Every variational restart was rejected for a vanishing denominator.
    #[error("degenerate hypothesis class: every restart had Q-variance below {floor:.1e}")]
    DegenerateClass { floor: f64 },

    /// Every Q-weighted pair is tied under the target score.
    #[error("accuracy undefined: all Q-weighted pairs are tied under the target")]
    UndefinedAccuracy,

    /// A margin-quantile restriction produced an empty pair subset.
    #[error("empty pair subset for fraction {frac}")]
    EmptySubset { frac: f64 },

    /// The triplet sampler kept drawing ties.
    #[error("sampler exceeded {limit} tie rejections in context {context}")]
    SamplerStuck { context: usize, limit: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
