//! Execution engine: bit strings, randomness tapes, output models, protocol
//! representation, and error measurement.

pub mod analysis;
pub mod bits;
pub mod model;
pub mod protocol;
pub mod tape;

pub use analysis::{
    estimate_error, exact_error, factor_leaf_probabilities, leaf_distribution, radius_for,
    tree_shape, ErrorReport, FactorTable, TreeShape,
};
pub use bits::{Bits, SplitString};
pub use model::{resolve, resolve_outcome, InvalidRun, OutputModel, Player, RawOutput, Symbol};
pub use protocol::{
    execute, DirectRun, Protocol, ProtocolKind, RunRecord, TapeBudgets, TreeRules,
};
pub use tape::{derive_seed, Tape, TapeSet};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed};
use thiserror::Error;

/// Smallest b >= 0 with 2^b >= r. Exact; used wherever a cost formula says
/// ceil(log2(...)) so that float fuzz can never change a declared cost.
pub fn ceil_log2_rat(r: &BigRational) -> u64 {
    assert!(r.is_positive(), "ceil_log2 of nonpositive value");
    if *r <= BigRational::one() {
        return 0;
    }
    // ceil to an integer first; 2^b >= r iff 2^b >= ceil(r)
    let c = r.numer().div_ceil(r.denom());
    (&c - BigInt::one()).bits()
}

/// ceil(log2(x)) through the exact binary value of the float.
pub fn ceil_log2_f64(x: f64) -> u64 {
    ceil_log2_rat(&BigRational::from_float(x).expect("finite"))
}

/// Exact rational from a float literal like 0.05 (binary value, not decimal).
pub fn rat_from_f64(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Errors surfaced by engine-level analyses.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("exact enumeration infeasible: {0} tape bits exceeds limit {1}")]
    OracleInfeasible(u64, u64),
    #[error("operation requires a tree-structured protocol, got a direct scheme")]
    NotTree,
    #[error("operation not defined for model {0}")]
    WrongModel(OutputModel),
    #[error("protocol uses public randomness where none is allowed")]
    PublicCoins,
    #[error("input violates the problem promise")]
    DomainError,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("error {0} is not below the derandomization threshold")]
    NotDerandomizable(BigRational),
}
