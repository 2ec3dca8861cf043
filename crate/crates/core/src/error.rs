use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error(
        "matrix {matrix} is singular or numerically rank deficient (condition ratio {ratio:.3e})"
    )]
    Singular { matrix: String, ratio: f64 },

    #[error("matrix {matrix} is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { matrix: String, eigenvalue: f64 },

    #[error("matrix {0} is not symmetric")]
    NotSymmetric(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

impl Error {
    /// True for failures of the numerical routines themselves, as opposed to
    /// bad configuration or malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::NotPsd { .. } | Error::DegenerateFit(_)
        )
    }
}
