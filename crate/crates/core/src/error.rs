use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular channel matrix (|det H| = {det:e})")]
    Singular { det: f64 },
    #[error("degenerate channel: row powers give C0 = 0")]
    DegenerateChannel,
    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("battery constraint violated: pre-clip level {level:e} J at BS{bs}")]
    ConstraintViolation { bs: u8, level: f64 },
    #[error("LSPE diverged (|c| = {norm:e}); try a smaller beta")]
    Diverged { norm: f64 },
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
