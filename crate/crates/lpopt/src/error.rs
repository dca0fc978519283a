//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Rounding carried past the host format's largest finite exponent, so
    /// the no-overflow scaling assumption is violated for this input.
    #[error("overflow after rounding{} (input {value:e})", loc_str(*.location))]
    OverflowAfterRounding {
        value: f64,
        /// (row, col) when the failure came from a matrix quantization.
        location: Option<(usize, usize)>,
    },

    /// Subnormal inputs sit below the no-underflow assumption and are
    /// rejected rather than flushed.
    #[error("subnormal input {value:e} violates the no-underflow assumption")]
    SubnormalInput { value: f64 },

    #[error("non-finite input {value} to quantizer")]
    NonFiniteInput { value: f64 },

    #[error("relative error undefined: reference matrix has zero Frobenius norm")]
    ZeroNorm,

    #[error("dimension mismatch: {op} on {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    DimMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("Jacobi SVD did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("matrix sign of the zero matrix is undefined")]
    ZeroMatrix,

    #[error("non-finite gradient entry at block {block}, index {index}")]
    NonFiniteGradient { block: usize, index: usize },

    #[error("precondition violated: {name}")]
    PreconditionViolated { name: String },

    #[error("lemma {name} violated: {witness}")]
    LemmaViolated { name: String, witness: String },

    #[error("run and bound input disagree: {what}")]
    MismatchedRun { what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn loc_str(location: Option<(usize, usize)>) -> String {
    match location {
        Some((r, c)) => format!(" at ({r}, {c})"),
        None => String::new(),
    }
}

impl Error {
    /// Attach the training-loop iteration index to an error bubbling out of a
    /// worker or optimizer step.
    pub fn at_iteration(self, iter: usize) -> Error {
        Error::AtIteration {
            iter,
            source: Box::new(self),
        }
    }
}
