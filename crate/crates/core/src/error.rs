use thiserror::Error;

/// Errors produced by the torus random-walk toolkit.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix literal is malformed: {0}")]
    MalformedMatrix(String),

    #[error("matrix is not in SL_d(Z): determinant {det}")]
    NotInSl { det: String },

    #[error("matrix is singular")]
    Singular,

    #[error("element is not in the algebra (residual {residual:.3e})")]
    NotInAlgebra { residual: f64 },

    #[error("atom cap exceeded at step {at_step} ({atoms} atoms)")]
    AtomCapExceeded { at_step: usize, atoms: usize },

    #[error("measure is not a probability measure (total mass {total})")]
    NotProbability { total: String },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state space too large: {states} states exceeds cap {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },

    #[error("budget exceeded: {required} > {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("grid budget exceeded at k = {k} ({cells} cells)")]
    GridBudgetExceeded { k: usize, cells: usize },

    #[error("{p} is not prime")]
    NotPrime { p: u64 },

    #[error("group closure exceeded cap {cap}")]
    CapExceeded { cap: usize },

    #[error("power iteration did not converge after {iterations} iterations (last value {last})")]
    NonConvergence { iterations: usize, last: f64 },

    #[error("proximality estimate has low confidence: {0}")]
    LowConfidence(String),

    #[error("grid measures use different bases or scales")]
    BasisMismatch,

    #[error("hypothesis not met: |coefficient| = {coefficient:.6} below threshold {threshold:.6}")]
    NotApplicable { coefficient: f64, threshold: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by a numeric budget or cap rather than bad input.
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            Error::AtomCapExceeded { .. }
                | Error::StateSpaceTooLarge { .. }
                | Error::BudgetExceeded { .. }
                | Error::GridBudgetExceeded { .. }
                | Error::CapExceeded { .. }
                | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
