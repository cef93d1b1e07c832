//! Simulation of multi-tooth quantum combs behind a query-metered black box,
//! and algorithms that recover the causal order of their inputs and outputs.
//!
//! The crate is `no_std` (it needs `alloc`). All randomness is drawn from
//! explicit RNG arguments, so every computation is reproducible per seed.
#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod comb;
pub mod discovery;
pub mod error;
pub mod oracle;
pub mod povm;
pub mod tensor;

pub use comb::{CausalOrder, ChoiState, CombSpec};
pub use discovery::{DiscoveryReport, IndMatrix};
pub use error::{Error, Result};
pub use oracle::{CombOracle, OracleMode, OracleSession, QueryPolicy, SessionConfig};
pub use povm::IcPovm;
pub use tensor::{Matrix, Op, Wire, WireSpace};
