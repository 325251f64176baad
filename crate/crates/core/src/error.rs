use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{ident}' at offset {offset}")]
    UnknownIdentifier { offset: usize, ident: String },
    #[error("identifier '{ident}' at offset {offset} does not exist in dimension {dim}")]
    DimensionMismatch {
        offset: usize,
        ident: String,
        dim: usize,
    },
    #[error("divisor at offset {offset} depends on q or p")]
    NonConstantDivisor { offset: usize },
    #[error("unsupported base dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),
}

impl ParseError {
    pub(crate) fn syntax(offset: usize, message: String) -> Self {
        ParseError::Syntax { offset, message }
    }

    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::DimensionMismatch { offset, .. }
            | ParseError::NonConstantDivisor { offset } => Some(*offset),
            ParseError::UnsupportedDimension(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("implicit midpoint solve did not converge after {iterations} iterations (residual {residual:e})")]
    ImplicitSolve { iterations: usize, residual: f64 },
    #[error("time step must be finite and nonzero, got {0}")]
    InvalidStep(f64),
    #[error("grid too coarse: {got} points per dimension, need at least {need}")]
    GridTooCoarse { got: usize, need: usize },
    #[error("Lagrangian is not exact: loop integral of p dq is {residual:e} (tolerance {tol:e})")]
    NotExact { residual: f64, tol: f64 },
    #[error("sample loop is not closed: {0}")]
    NotClosed(String),
    #[error("resampling budget of {budget} samples exceeded")]
    ResamplingBudget { budget: usize },
    #[error("equi-Lipschitz certification failed: constant grew from {from} to {to} at level {level}")]
    EquiLipschitz { level: usize, from: f64, to: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("base point {q:?} is on the caustic: not in U_L")]
    OnCaustic { q: Vec<f64> },
    #[error("sheet tracking ambiguous: {0}")]
    SheetTracking(String),
    #[error("degenerate crossing: sheets {i} and {j} coincide on the whole interval")]
    DegenerateCrossing { i: usize, j: usize },
    #[error("no continuous section exists through the front: {0}")]
    NoSection(String),
    #[error("sections are ambiguous ({count} candidates) and no calibration was supplied")]
    AmbiguousSections { count: usize },
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("fiber box too small: critical configuration left the box twice")]
    BoxTooSmall,
    #[error("minimax value did not stabilize under refinement: bracket [{lo}, {hi}]")]
    NotStabilized { lo: f64, hi: f64 },
    #[error("selector sequence is not Cauchy: gaps {gaps:?} (tolerance {tol:e})")]
    NotCauchy { gaps: Vec<f64>, tol: f64 },
    #[error("Legendre transform did not converge at q={q:?}, v={v:?}")]
    Legendre { q: Vec<f64>, v: Vec<f64> },
    #[error("Hamiltonian is not Tonelli: {0}")]
    NotTonelli(String),
    #[error("Lax-Oleinik iteration did not converge in {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("energy level {a} does not meet the Lagrangian")]
    EmptySeeds { a: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("malformed input at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
