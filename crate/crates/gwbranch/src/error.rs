use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum Error {
    #[error("non-integrable measure: {0}")]
    NonIntegrable(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("pmf truncation left {lost:e} unassigned mass after {atoms} atoms")]
    TruncationLoss { lost: f64, atoms: usize },
    #[error("probe point x = {0} coincides with a jump atom")]
    ProbePointOnAtom(f64),
    #[error("generation {0} is not covered by the environment blocks")]
    GenerationNotCovered(u64),
    #[error("a_i^2 - a_i b_i M = {value} < eps at index {index}")]
    HypothesisViolated { index: usize, value: f64 },
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
    #[error("Picard iteration did not converge after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("possible bottleneck: solution collapsed below the floor, solvable only on [{domain_start}, t]")]
    PossibleBottleneck { domain_start: f64 },
    #[error("beta has an atom at {0}; the closed form needs an atomless beta")]
    BetaAtomForbidden(f64),
    #[error("infinite horizon needs open-tailed (constant terminal rate) alpha and beta")]
    TailNotClosed,
    #[error("alpha has an atom of -1 at {0}: the population is annihilated there")]
    Annihilation(f64),
    #[error("solution exceeded the overflow guard at tau = {tau}")]
    Explosion { tau: f64 },
    #[error("every simulated path overflowed the population cap")]
    AllPathsOverflowed,
    #[error("unknown scenario kind: {0}")]
    UnknownKind(String),
    #[error("regime trend is not classifiable: {0}")]
    Unclassifiable(String),
    #[error("non-positive input: {0}")]
    NonPositiveInput(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
