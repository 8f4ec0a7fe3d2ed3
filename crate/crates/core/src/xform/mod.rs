//! Loop unrolling, unroll-and-jam and scalar replacement.

pub mod scalrep;
pub mod unroll;

use thiserror::Error;

pub use scalrep::{promoted_accumulators, scalar_replace};
pub use unroll::{promote_single_iteration, unroll_full, unroll_jam, UnrollResult, DEFAULT_UNROLL_CAP};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum XformError {
    #[error("no loop with induction variable {0}")]
    NoSuchLoop(String),
    #[error("unroll factor must be positive, got {0}")]
    Factor(i64),
    #[error("loop {0} has no constant trip count")]
    NonConstantTrip(String),
    #[error("loop {iv} has {trip} iterations, above the unroll cap of {cap}")]
    TooLarge { iv: String, trip: i64, cap: i64 },
    #[error("unsupported bounds on loop {0}: {1}")]
    Bounds(String, String),
    #[error("jamming loop {0} would reorder conflicting accesses to {1}")]
    Unsafe(String, String),
}
