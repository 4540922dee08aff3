use nalgebra::Complex;
use thiserror::Error;

/// Errors produced by the synthesis and validation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A port-Hamiltonian constraint does not hold. The message names the
    /// offending constraint(s).
    #[error("port-Hamiltonian validation failed: {0}")]
    Validation(String),

    #[error("parameter vector has length {got}, expected {expected} for order {order} and {ports} ports")]
    ThetaLength {
        got: usize,
        expected: usize,
        order: usize,
        ports: usize,
    },

    #[error("(sI - A) is singular at s = {s}")]
    PoleAtSample { s: Complex<f64> },

    #[error("feedback interconnection is ill-posed{}", fmt_omega(.omega))]
    IllPosed { omega: Option<f64> },

    #[error("system is not asymptotically stable (spectral abscissa {abscissa:e})")]
    Unstable { abscissa: f64 },

    #[error("factorization certificate failed: {0}")]
    Certificate(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    NoConvergence(usize),

    /// An error raised while evaluating the objective at `theta`.
    #[error("optimization failed at gamma = {gamma}: {source}")]
    Optimization {
        gamma: f64,
        theta: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("synthesis could not be initialized: {0}")]
    Initialization(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("frequency {omega} is not available in the sampled plant")]
    MissingSample { omega: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn fmt_omega(omega: &Option<f64>) -> String {
    match omega {
        Some(w) => format!(" at omega = {w}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
