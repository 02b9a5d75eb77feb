use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("instability: {0}")]
    Instability(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("data precondition failed: {0}")]
    Data(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse failure class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Infeasible,
    Instability,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Infeasible => 3,
            Category::Instability => 4,
            Category::Io => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Infeasible => "infeasible-parameters",
            Category::Instability => "instability",
            Category::Io => "io",
        }
    }
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Data(_) | Error::InsufficientData(_) => {
                Category::Config
            }
            Error::Parameter(_) | Error::Convergence(_) | Error::Infeasible(_) => {
                Category::Infeasible
            }
            Error::Evaluation(_) | Error::Numeric(_) | Error::Instability(_) => {
                Category::Instability
            }
            Error::Io(_) => Category::Io,
        }
    }
}
