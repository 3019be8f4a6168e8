use thiserror::Error;

/// Errors raised by the filtering, approximation and model-fitting routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("Richardson extrapolation did not converge within {levels} levels (last difference {last_diff:e})")]
    RichardsonNoConvergence { levels: usize, last_diff: f64 },

    #[error("point is not a maximum: second derivative along axis {axis} is {value:e}")]
    NotAMaximum { axis: usize, value: f64 },

    #[error("Newton iteration did not converge after {iters} iterations (last step norm {step_norm:e})")]
    NewtonMaxIter { iters: usize, step_norm: f64 },

    #[error("Newton step could not increase the objective after {halvings} halvings")]
    NewtonNoAscent { halvings: usize },

    #[error("Hessian is not invertible at the current iterate")]
    SingularHessian,

    #[error("offset function g = x[{coord}] + c is non-positive ({value:e}) at the mode")]
    NonPositiveOffset { coord: usize, value: f64 },

    #[error("all particle weights collapsed to zero")]
    WeightCollapse,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("GLM fit for neuron {neuron} diverged: {reason}")]
    GlmDivergence { neuron: usize, reason: String },

    #[error("at time step {t}: {source}")]
    AtStep {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn at_step(self, t: usize) -> Error {
        Error::AtStep {
            t,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
