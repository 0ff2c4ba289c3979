use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("coordinates outside the admissible domain: {0}")]
    Domain(String),

    #[error("matrix is not anti-Hermitian (imaginary/Hermitian residual {residual:.3e})")]
    NotAntiHermitian { residual: f64 },

    #[error("increment is not tangent to the coadjoint orbit (relative residual {residual:.3e})")]
    NotTangent { residual: f64 },

    #[error("element is not in the fixed-point subgroup: unitarity residual {unitarity:.3e}, Γ residual {gamma:.3e}")]
    NotInFixedGroup { unitarity: f64, gamma: f64 },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
