use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration failed at t = {time}: {message}")]
    Integration { time: f64, message: String },

    #[error("step size underflow at t = {time}; the problem appears too stiff for the explicit integrator")]
    Stiffness { time: f64 },

    #[error("singular parameter combination: {0}")]
    Singular(String),

    #[error("detector not applicable: {0}")]
    DetectorInapplicable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/config problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::UnknownSystem(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::Csv(_) => 2,
            Error::Integration { .. }
            | Error::Stiffness { .. }
            | Error::Singular(_)
            | Error::DetectorInapplicable(_) => 3,
        }
    }
}
