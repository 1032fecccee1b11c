use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("path passes within {dist:.3e} of branch point {point}")]
    PathTooCloseToBranchPoint { point: String, dist: f64 },
    #[error("square-root continuation ambiguous after {0} refinements")]
    ContinuationAmbiguous(usize),
    #[error("mixed real / non-real branch points are not supported")]
    MixedRealityUnsupported,
    #[error("evaluation point is a branch point")]
    PointIsBranchPoint,
    #[error(
        "real part of the Riemann matrix is not negative definite (largest eigenvalue {0:.3e})"
    )]
    NotNegativeDefinite(f64),
    #[error("argument reduction system is singular (condition {0:.3e})")]
    SingularReduction(f64),
    #[error("no non-singular odd characteristic found")]
    NoNonsingularOddCharacteristic,
    #[error("theta vanishes at the Abel image of the point pair")]
    ThetaVanishesAtR,
    #[error("theta vanishes at the evaluation point")]
    ThetaZeroAtZ,
    #[error("integer completion failed: entry {entry} deviates by {dev:.3e}")]
    NonIntegerCompletion { entry: String, dev: f64 },
    #[error("singular {0} matrix")]
    SingularPartMatrix(String),
    #[error("characteristic entry {0:.6} is not a half-integer")]
    NonHalfIntegerCharacteristic(f64),
    #[error("mixing matrix is singular")]
    SingularMixingMatrix,
    #[error("symplectic search exhausted at radius {0}")]
    SearchExhausted(i64),
    #[error("gamma system is singular (condition {0:.3e})")]
    SingularGammaSystem(f64),
    #[error("involution constraint violated: {0}")]
    TauConstraintViolated(String),
    #[error("reality constraint violated: {0}")]
    RealityViolated(String),
    #[error("theta denominator vanishes on the grid")]
    ThetaZeroOnGrid,
    #[error("constraint 2N + HM = 0 violated")]
    NmConstraint,
}

pub type Result<T> = std::result::Result<T, Error>;
